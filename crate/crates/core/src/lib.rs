//! Tabular solvers for two-player constant-sum Markov games driven by a
//! pairwise preference oracle.
//!
//! The library models finite-horizon games where both players roll through
//! independent copies of one MDP and the stage payoff is the probability
//! `r(s, a, s', a')` that the first player's step is preferred. It provides:
//!
//! * the game model with exact dynamic-programming primitives over pairwise
//!   value functions and occupancy measures ([`game`], [`occupancy`],
//!   [`values`]);
//! * seeded environment generators and antisymmetric preference oracles
//!   ([`envgen`]);
//! * optimistic mirror-descent and natural actor-critic solvers, including
//!   the practical squared-loss regression variants ([`solvers`]);
//! * exact best responses, exploitability and Nash-gap metrics ([`metrics`]);
//! * trajectory sampling with unbiased Monte-Carlo value estimators
//!   ([`estimation`]).

pub mod envgen;
pub mod error;
pub mod estimation;
pub mod game;
pub mod metrics;
pub mod occupancy;
pub mod solvers;
pub mod values;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use game::{PreferenceGame, Violation};
pub use occupancy::{
    flow_residual, occupancy_forward, policy_from_occupancy, ConditionalOccupancy,
    OccupancyMeasure, Policy,
};
pub use solvers::{Algorithm, SolverConfig, SolverState, SolverTrace};
pub use values::{bilinear_objective, game_value, pairwise_backup, PairwiseValues};
