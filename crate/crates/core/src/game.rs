//! Finite-horizon two-player constant-sum preference game model.
//!
//! A game couples a single-agent MDP `(S, A, f, nu_1, H)` with a pairwise
//! reward tensor `r(s, a, s', a') in [0, 1]` read as the probability that
//! the step `(s, a)` is preferred over `(s', a')`. Both players move through
//! independent copies of the same MDP from a shared initial state, and the
//! maximizing player collects `sum_h r(S_h, A_h, S'_h, A'_h)`.
//!
//! States, actions and stages are 0-based throughout. State-action pairs are
//! flattened as `i = s * num_actions + a`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::envgen;
use crate::error::{Error, Result};

/// Probability vectors whose sum deviates from 1 by at most this much are
/// renormalized silently; larger deviations are rejected as errors.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Tolerance for the exhaustive antisymmetry check in [`PreferenceGame::validate`].
pub const ANTISYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PreferenceGame {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// Row-stochastic transition kernel, shape `(S*A, S)`.
    transition: Array2<f64>,
    /// Initial state distribution, shape `(S,)`.
    initial_dist: Array1<f64>,
    /// Pairwise preference reward, shape `(S*A, S*A)`.
    reward: Array2<f64>,
    /// `init_partition[s]` is the unique initial state that can lead to `s`.
    init_partition: Vec<usize>,
}

impl PreferenceGame {
    /// Builds a game, checking shapes and renormalizing near-stochastic rows.
    ///
    /// Reward range, antisymmetry and initial-state separability are *not*
    /// enforced here so that broken games can still be loaded and reported by
    /// [`PreferenceGame::validate`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Array2<f64>,
        initial_dist: Array1<f64>,
        reward: Array2<f64>,
        init_partition: Vec<usize>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::Shape(
                "num_states, num_actions and horizon must be positive".into(),
            ));
        }
        let sa = num_states * num_actions;
        if transition.dim() != (sa, num_states) {
            return Err(Error::Shape(format!(
                "transition is {:?}, expected ({sa}, {num_states})",
                transition.dim()
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Shape(format!(
                "initial_dist has length {}, expected {num_states}",
                initial_dist.len()
            )));
        }
        if reward.dim() != (sa, sa) {
            return Err(Error::Shape(format!(
                "reward is {:?}, expected ({sa}, {sa})",
                reward.dim()
            )));
        }
        if init_partition.len() != num_states {
            return Err(Error::Shape(format!(
                "init_partition has length {}, expected {num_states}",
                init_partition.len()
            )));
        }
        if let Some(&label) = init_partition.iter().find(|&&l| l >= num_states) {
            return Err(Error::Shape(format!(
                "init_partition label {label} out of range"
            )));
        }
        if transition.iter().any(|x| !x.is_finite())
            || initial_dist.iter().any(|x| !x.is_finite())
            || reward.iter().any(|x| !x.is_finite())
        {
            return Err(Error::Shape("non-finite entry in game tensors".into()));
        }

        let mut game = Self {
            num_states,
            num_actions,
            horizon,
            transition,
            initial_dist,
            reward,
            init_partition,
        };
        for i in 0..sa {
            let mut row = game.transition.row_mut(i);
            renormalize(row.as_slice_mut().expect("contiguous row"), || {
                format!(
                    "transition row (state {}, action {})",
                    i / num_actions,
                    i % num_actions
                )
            })?;
        }
        renormalize(
            game.initial_dist.as_slice_mut().expect("contiguous"),
            || "initial distribution".to_string(),
        )?;
        Ok(game)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of flattened state-action pairs `S * A`.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn sa_index(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    pub fn transition(&self) -> &Array2<f64> {
        &self.transition
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn reward_at(&self, s: usize, a: usize, s2: usize, a2: usize) -> f64 {
        self.reward[(self.sa_index(s, a), self.sa_index(s2, a2))]
    }

    pub fn init_partition(&self) -> &[usize] {
        &self.init_partition
    }

    /// States with positive initial probability, in increasing order.
    pub fn initial_support(&self) -> Vec<usize> {
        self.initial_dist
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, _)| s)
            .collect()
    }

    /// `reachable[h][s]` is true when `s` has positive probability at stage
    /// `h` (0-based) starting from `s1`, under some policy.
    pub fn stage_reachable(&self, s1: usize) -> Vec<Vec<bool>> {
        let mut reachable = vec![vec![false; self.num_states]; self.horizon];
        reachable[0][s1] = true;
        for h in 1..self.horizon {
            for s in 0..self.num_states {
                if !reachable[h - 1][s] {
                    continue;
                }
                for a in 0..self.num_actions {
                    let row = self.transition.row(self.sa_index(s, a));
                    for (s2, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            reachable[h][s2] = true;
                        }
                    }
                }
            }
        }
        reachable
    }

    /// Union over stages of [`Self::stage_reachable`].
    pub fn reachable_from(&self, s1: usize) -> Vec<bool> {
        let stages = self.stage_reachable(s1);
        let mut any = vec![false; self.num_states];
        for stage in &stages {
            for (s, &r) in stage.iter().enumerate() {
                any[s] |= r;
            }
        }
        any
    }

    /// Report-style check of every model invariant. Empty iff the game is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        let a_count = self.num_actions;
        for i in 0..self.num_pairs() {
            let sum: f64 = self.transition.row(i).sum();
            if (sum - 1.0).abs() > 1e-12 {
                report.push(Violation::TransitionRow {
                    state: i / a_count,
                    action: i % a_count,
                    sum,
                });
            }
            if let Some((s2, &p)) = self
                .transition
                .row(i)
                .iter()
                .enumerate()
                .find(|(_, &p)| p < 0.0)
            {
                report.push(Violation::NegativeProbability {
                    state: i / a_count,
                    action: i % a_count,
                    next_state: s2,
                    value: p,
                });
            }
        }
        let init_sum: f64 = self.initial_dist.sum();
        if (init_sum - 1.0).abs() > 1e-12 {
            report.push(Violation::InitialDistribution { sum: init_sum });
        }

        for i in 0..self.num_pairs() {
            for j in i..self.num_pairs() {
                let r_ij = self.reward[(i, j)];
                let r_ji = self.reward[(j, i)];
                if !(0.0..=1.0).contains(&r_ij) {
                    report.push(Violation::RewardOutOfRange {
                        pair: self.unflatten(i),
                        other: self.unflatten(j),
                        value: r_ij,
                    });
                }
                if i != j && !(0.0..=1.0).contains(&r_ji) {
                    report.push(Violation::RewardOutOfRange {
                        pair: self.unflatten(j),
                        other: self.unflatten(i),
                        value: r_ji,
                    });
                }
                if (r_ij + r_ji - 1.0).abs() > ANTISYMMETRY_TOL {
                    report.push(Violation::Antisymmetry {
                        pair: self.unflatten(i),
                        other: self.unflatten(j),
                        sum: r_ij + r_ji,
                    });
                }
            }
        }

        // Separability: reachable sets of distinct initial states must be
        // disjoint, and reachable states must carry their initial state's label.
        let support = self.initial_support();
        let mut owner: Vec<Option<usize>> = vec![None; self.num_states];
        for &s1 in &support {
            let reach = self.reachable_from(s1);
            for (s, &r) in reach.iter().enumerate() {
                if !r {
                    continue;
                }
                match owner[s] {
                    Some(prev) if prev != s1 => report.push(Violation::SharedReachableState {
                        first_initial: prev,
                        second_initial: s1,
                        state: s,
                    }),
                    _ => owner[s] = Some(s1),
                }
                if self.init_partition[s] != s1 && owner[s] == Some(s1) {
                    report.push(Violation::PartitionMismatch {
                        state: s,
                        expected: s1,
                        found: self.init_partition[s],
                    });
                }
            }
        }
        report
    }

    fn unflatten(&self, i: usize) -> (usize, usize) {
        (i / self.num_actions, i % self.num_actions)
    }

    /// Serializes to the JSON game file format (reward as nested arrays).
    pub fn to_json_string(&self) -> Result<String> {
        let a_count = self.num_actions;
        let transition = (0..self.num_states)
            .map(|s| {
                (0..a_count)
                    .map(|a| self.transition.row(self.sa_index(s, a)).to_vec())
                    .collect()
            })
            .collect();
        let reward = RewardField::Table(
            (0..self.num_states)
                .map(|s| {
                    (0..a_count)
                        .map(|a| {
                            let i = self.sa_index(s, a);
                            (0..self.num_states)
                                .map(|s2| {
                                    (0..a_count)
                                        .map(|a2| self.reward[(i, self.sa_index(s2, a2))])
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        );
        let file = GameFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            transition,
            initial_dist: self.initial_dist.to_vec(),
            reward,
            init_partition: self.init_partition.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses the JSON game file format.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(text)?;
        let sa = file
            .num_states
            .checked_mul(file.num_actions)
            .ok_or_else(|| Error::Shape("state-action space overflows".into()))?;

        let mut transition = Array2::zeros((sa, file.num_states));
        if file.transition.len() != file.num_states {
            return Err(Error::Shape("transition outer length != num_states".into()));
        }
        for (s, per_action) in file.transition.iter().enumerate() {
            if per_action.len() != file.num_actions {
                return Err(Error::Shape(format!(
                    "transition[{s}] length != num_actions"
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != file.num_states {
                    return Err(Error::Shape(format!(
                        "transition[{s}][{a}] length != num_states"
                    )));
                }
                for (s2, &p) in row.iter().enumerate() {
                    transition[(s * file.num_actions + a, s2)] = p;
                }
            }
        }

        let reward = match file.reward {
            RewardField::Table(table) => {
                let mut reward = Array2::zeros((sa, sa));
                if table.len() != file.num_states {
                    return Err(Error::Shape("reward outer length != num_states".into()));
                }
                for (s, per_action) in table.iter().enumerate() {
                    if per_action.len() != file.num_actions {
                        return Err(Error::Shape(format!("reward[{s}] length != num_actions")));
                    }
                    for (a, per_s2) in per_action.iter().enumerate() {
                        if per_s2.len() != file.num_states {
                            return Err(Error::Shape(format!(
                                "reward[{s}][{a}] length != num_states"
                            )));
                        }
                        for (s2, row) in per_s2.iter().enumerate() {
                            if row.len() != file.num_actions {
                                return Err(Error::Shape(format!(
                                    "reward[{s}][{a}][{s2}] length != num_actions"
                                )));
                            }
                            for (a2, &r) in row.iter().enumerate() {
                                reward[(s * file.num_actions + a, s2 * file.num_actions + a2)] = r;
                            }
                        }
                    }
                }
                reward
            }
            RewardField::Generator(gen) => gen.build(file.num_states, file.num_actions)?,
        };

        Self::new(
            file.num_states,
            file.num_actions,
            file.horizon,
            transition,
            Array1::from_vec(file.initial_dist),
            reward,
            file.init_partition,
        )
    }
}

fn renormalize(row: &mut [f64], context: impl Fn() -> String) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic {
            context: context(),
            sum,
        });
    }
    if let Some(&neg) = row.iter().find(|&&x| x < 0.0) {
        if neg < -STOCHASTIC_TOL {
            return Err(Error::NotStochastic {
                context: context(),
                sum: neg,
            });
        }
    }
    for x in row.iter_mut() {
        *x = x.max(0.0) / sum;
    }
    Ok(())
}

/// One violated model invariant, as found by [`PreferenceGame::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRow {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeProbability {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    InitialDistribution {
        sum: f64,
    },
    RewardOutOfRange {
        pair: (usize, usize),
        other: (usize, usize),
        value: f64,
    },
    Antisymmetry {
        pair: (usize, usize),
        other: (usize, usize),
        sum: f64,
    },
    SharedReachableState {
        first_initial: usize,
        second_initial: usize,
        state: usize,
    },
    PartitionMismatch {
        state: usize,
        expected: usize,
        found: usize,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TransitionRow { state, action, sum } => write!(
                f,
                "transition row for (state {state}, action {action}) sums to {sum}"
            ),
            Violation::NegativeProbability {
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "transition (state {state}, action {action} -> {next_state}) is negative: {value}"
            ),
            Violation::InitialDistribution { sum } => {
                write!(f, "initial distribution sums to {sum}")
            }
            Violation::RewardOutOfRange { pair, other, value } => write!(
                f,
                "reward r({}, {}, {}, {}) = {value} outside [0, 1]",
                pair.0, pair.1, other.0, other.1
            ),
            Violation::Antisymmetry { pair, other, sum } => write!(
                f,
                "antisymmetry broken at r({}, {}, {}, {}): forward + reverse = {sum}",
                pair.0, pair.1, other.0, other.1
            ),
            Violation::SharedReachableState {
                first_initial,
                second_initial,
                state,
            } => write!(
                f,
                "state {state} reachable from both initial states {first_initial} and {second_initial}"
            ),
            Violation::PartitionMismatch {
                state,
                expected,
                found,
            } => write!(
                f,
                "state {state} is reachable from initial state {expected} but labeled {found}"
            ),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GameFile {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `transition[s][a][s']`.
    transition: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
    reward: RewardField,
    init_partition: Vec<usize>,
}

/// The reward can be spelled out as a nested `[s][a][s'][a']` table or
/// generated from a compact spec.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RewardField {
    Table(Vec<Vec<Vec<Vec<f64>>>>),
    Generator(RewardGenerator),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RewardGenerator {
    ScoreSigmoid { scores: Vec<f64> },
    Cyclic { win_probability: f64 },
    RandomAntisymmetric { seed: u64 },
    Tie,
}

impl RewardGenerator {
    fn build(&self, num_states: usize, num_actions: usize) -> Result<Array2<f64>> {
        let sa = num_states * num_actions;
        match self {
            RewardGenerator::ScoreSigmoid { scores } => {
                if scores.len() != sa {
                    return Err(Error::Shape(format!(
                        "score vector has length {}, expected {sa}",
                        scores.len()
                    )));
                }
                Ok(envgen::preference_from_scores(scores))
            }
            RewardGenerator::Cyclic { win_probability } => {
                if num_states != 1 {
                    return Err(Error::Config(
                        "cyclic reward requires a single-state game".into(),
                    ));
                }
                envgen::cyclic_preference(num_actions, *win_probability)
            }
            RewardGenerator::RandomAntisymmetric { seed } => {
                Ok(envgen::random_antisymmetric_reward(sa, *seed))
            }
            RewardGenerator::Tie => Ok(envgen::tie_reward(sa)),
        }
    }
}
