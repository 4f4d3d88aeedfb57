//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or policy dimensions do not match the game.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A probability vector is too far from summing to one to be silently
    /// renormalized (see [`crate::game::STOCHASTIC_TOL`]).
    #[error("{context}: entries sum to {sum}, expected 1")]
    NotStochastic { context: String, sum: f64 },

    /// An argument is outside the operation's domain (unreachable state,
    /// empty history, zero sample count, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A spec or config value is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// An internal numerical invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
