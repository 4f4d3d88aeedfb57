//! Seeded environment families and antisymmetric preference oracles.
//!
//! Generators cover random gridworlds, token-chain MDPs (single-step
//! alignment dissected into tokens) and layered conversation MDPs, plus the
//! preference tensors they are paired with: Bradley-Terry style score
//! sigmoids, non-transitive cycles, random antisymmetric tables and ties.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::PreferenceGame;

/// Preference oracle families. Every kind produces an exactly antisymmetric
/// tensor: `r(i, j) + r(j, i) = 1` holds bitwise, not just within float slop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreferenceSpec {
    /// `r(i, j) = sigmoid(u_i - u_j)` for per-pair scores `u`. An empty score
    /// vector asks the generator to draw scores uniformly from `[0, 1)`.
    ScoreSigmoid { scores: Vec<f64> },
    /// Action `i` beats action `(i + 1) mod n` with the given probability;
    /// all other pairs tie. Only valid for single-state games.
    Cyclic { win_probability: f64 },
    /// Independent `U(0, 1)` preferences for each unordered pair.
    RandomAntisymmetric,
    /// Everything ties at 1/2.
    Tie,
}

impl PreferenceSpec {
    fn build(&self, num_states: usize, num_actions: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let sa = num_states * num_actions;
        match self {
            PreferenceSpec::ScoreSigmoid { scores } if scores.is_empty() => {
                let drawn: Vec<f64> = (0..sa).map(|_| rng.gen::<f64>()).collect();
                Ok(preference_from_scores(&drawn))
            }
            PreferenceSpec::ScoreSigmoid { scores } => {
                if scores.len() != sa {
                    return Err(Error::Config(format!(
                        "score vector has length {}, expected {sa}",
                        scores.len()
                    )));
                }
                Ok(preference_from_scores(scores))
            }
            PreferenceSpec::Cyclic { win_probability } => {
                if num_states != 1 {
                    return Err(Error::Config(
                        "cyclic preferences require a single-state game".into(),
                    ));
                }
                cyclic_preference(num_actions, *win_probability)
            }
            PreferenceSpec::RandomAntisymmetric => Ok(random_antisymmetric_with(sa, rng)),
            PreferenceSpec::Tie => Ok(tie_reward(sa)),
        }
    }
}

/// Parameters of the random gridworld family. State and action counts are
/// drawn uniformly from the inclusive ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub seed: u64,
    pub state_range: (usize, usize),
    pub action_range: (usize, usize),
    pub horizon: usize,
    /// Fraction of successor states kept per `(s, a)` row; the rest of each
    /// Dirichlet(1, ..., 1) row is truncated and the row renormalized.
    pub transition_sparsity: f64,
    pub preference: PreferenceSpec,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            state_range: (1, 100),
            action_range: (2, 10),
            horizon: 10,
            transition_sparsity: 1.0,
            preference: PreferenceSpec::RandomAntisymmetric,
        }
    }
}

/// Draws a random gridworld: seeded sizes, Dirichlet transition rows
/// (optionally sparsified), one random initial state, and a preference
/// tensor per the spec. Identical seeds give bitwise-identical games.
pub fn random_gridworld(spec: &GridworldSpec) -> Result<PreferenceGame> {
    let (s_lo, s_hi) = spec.state_range;
    let (a_lo, a_hi) = spec.action_range;
    if s_lo == 0 || s_lo > s_hi {
        return Err(Error::Domain(format!("empty state range [{s_lo}, {s_hi}]")));
    }
    if a_lo == 0 || a_lo > a_hi {
        return Err(Error::Domain(format!("empty action range [{a_lo}, {a_hi}]")));
    }
    if spec.horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if !(spec.transition_sparsity > 0.0 && spec.transition_sparsity <= 1.0) {
        return Err(Error::Domain(format!(
            "transition_sparsity {} outside (0, 1]",
            spec.transition_sparsity
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let num_states = rng.gen_range(s_lo..=s_hi);
    let num_actions = rng.gen_range(a_lo..=a_hi);
    let sa = num_states * num_actions;

    let keep = ((spec.transition_sparsity * num_states as f64).ceil() as usize)
        .clamp(1, num_states);
    let mut transition = Array2::zeros((sa, num_states));
    for i in 0..sa {
        // Dirichlet(1, ..., 1) row as normalized Exp(1) draws.
        let mut row: Vec<f64> = (0..num_states)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        if keep < num_states {
            let mut order: Vec<usize> = (0..num_states).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            for &drop in &order[keep..] {
                row[drop] = 0.0;
            }
        }
        let total: f64 = row.iter().sum();
        for (s2, value) in row.iter().enumerate() {
            transition[(i, s2)] = value / total;
        }
    }

    let s0 = rng.gen_range(0..num_states);
    let mut initial_dist = Array1::zeros(num_states);
    initial_dist[s0] = 1.0;

    let reward = spec.preference.build(num_states, num_actions, &mut rng)?;
    PreferenceGame::new(
        num_states,
        num_actions,
        spec.horizon,
        transition,
        initial_dist,
        reward,
        vec![s0; num_states],
    )
}

/// Default cap on the number of prefix states a token chain may enumerate.
pub const DEFAULT_STATE_BUDGET: usize = 512;

/// Token-chain MDP: stage-`h` states enumerate the token prefixes of length
/// `h`, transitions are deterministic (append the chosen token), and the
/// single initial state is the empty prompt. Errors out instead of aliasing
/// states once the prefix tree exceeds `state_budget`.
pub fn token_chain(
    horizon: usize,
    num_tokens: usize,
    preference: &PreferenceSpec,
    seed: u64,
    state_budget: Option<usize>,
) -> Result<PreferenceGame> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if num_tokens < 2 {
        return Err(Error::Domain("token chains need at least 2 tokens".into()));
    }
    let budget = state_budget.unwrap_or(DEFAULT_STATE_BUDGET);

    // Layer h holds num_tokens^h states; the walk visits layers 0 .. horizon-1.
    let mut offsets = vec![0usize];
    let mut layer = 1usize;
    for _ in 0..horizon {
        let next = offsets.last().unwrap() + layer;
        offsets.push(next);
        layer = layer
            .checked_mul(num_tokens)
            .ok_or_else(|| Error::Config("prefix tree size overflows".into()))?;
        if next > budget {
            return Err(Error::Config(format!(
                "token chain needs {next}+ states, exceeding the budget of {budget}"
            )));
        }
    }
    let num_states = offsets[horizon];
    if num_states > budget {
        return Err(Error::Config(format!(
            "token chain needs {num_states} states, exceeding the budget of {budget}"
        )));
    }

    let sa = num_states * num_tokens;
    let mut transition = Array2::zeros((sa, num_states));
    for h in 0..horizon {
        let width = offsets[h + 1] - offsets[h];
        for i in 0..width {
            let state = offsets[h] + i;
            for a in 0..num_tokens {
                let next = if h + 1 < horizon {
                    offsets[h + 1] + i * num_tokens + a
                } else {
                    state // absorbing beyond the horizon
                };
                transition[(state * num_tokens + a, next)] = 1.0;
            }
        }
    }

    let mut initial_dist = Array1::zeros(num_states);
    initial_dist[0] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reward = preference.build(num_states, num_tokens, &mut rng)?;
    PreferenceGame::new(
        num_states,
        num_tokens,
        horizon,
        transition,
        initial_dist,
        reward,
        vec![0; num_states],
    )
}

/// Multi-turn conversation MDP: one prompt state followed by `turns - 1`
/// layers of `states_per_turn` states each, with random stochastic
/// transitions between consecutive layers.
pub fn conversation_chain(
    turns: usize,
    states_per_turn: usize,
    num_actions: usize,
    preference: &PreferenceSpec,
    seed: u64,
) -> Result<PreferenceGame> {
    if turns == 0 || states_per_turn == 0 || num_actions == 0 {
        return Err(Error::Domain(
            "turns, states_per_turn and num_actions must be positive".into(),
        ));
    }
    let num_states = 1 + (turns - 1) * states_per_turn;
    let sa = num_states * num_actions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let layer_of = |s: usize| -> usize {
        if s == 0 {
            0
        } else {
            1 + (s - 1) / states_per_turn
        }
    };
    let mut transition = Array2::zeros((sa, num_states));
    for s in 0..num_states {
        let layer = layer_of(s);
        for a in 0..num_actions {
            let i = s * num_actions + a;
            if layer + 1 < turns {
                let base = 1 + layer * states_per_turn;
                let mut row: Vec<f64> = (0..states_per_turn)
                    .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                    .collect();
                let total: f64 = row.iter().sum();
                for (k, value) in row.iter_mut().enumerate() {
                    transition[(i, base + k)] = *value / total;
                }
            } else {
                transition[(i, s)] = 1.0;
            }
        }
    }

    let mut initial_dist = Array1::zeros(num_states);
    initial_dist[0] = 1.0;
    let reward = preference.build(num_states, num_actions, &mut rng)?;
    PreferenceGame::new(
        num_states,
        num_actions,
        turns,
        transition,
        initial_dist,
        reward,
        vec![0; num_states],
    )
}

/// Bradley-Terry tensor `r(i, j) = sigmoid(u_i - u_j)`, with the mirror
/// entries set to `1 - r(i, j)` so antisymmetry holds exactly.
pub fn preference_from_scores(scores: &[f64]) -> Array2<f64> {
    let n = scores.len();
    let mut reward = Array2::from_elem((n, n), 0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = sigmoid(scores[i] - scores[j]);
            reward[(i, j)] = p;
            reward[(j, i)] = 1.0 - p;
        }
    }
    reward
}

/// Single-state cyclic tensor: action `i` beats `(i + 1) mod n` with
/// probability `p`, and the antisymmetric completion orients every other
/// pair `i < j` forward with the same probability. The wrap-around arc
/// `n-1 -> 0` is the single back edge, so for `p > 1/2` the tensor contains
/// a strict preference cycle and no Bradley-Terry score vector reproduces it.
pub fn cyclic_preference(num_actions: usize, win_probability: f64) -> Result<Array2<f64>> {
    if num_actions < 3 {
        return Err(Error::Domain(
            "a preference cycle needs at least 3 actions".into(),
        ));
    }
    if !(0.0..=1.0).contains(&win_probability) {
        return Err(Error::Domain(format!(
            "win probability {win_probability} outside [0, 1]"
        )));
    }
    let mut reward = Array2::from_elem((num_actions, num_actions), 0.5);
    for i in 0..num_actions {
        for j in (i + 1)..num_actions {
            reward[(i, j)] = win_probability;
            reward[(j, i)] = 1.0 - win_probability;
        }
    }
    reward[(0, num_actions - 1)] = 1.0 - win_probability;
    reward[(num_actions - 1, 0)] = win_probability;
    Ok(reward)
}

/// Independent uniform preference for each unordered pair, mirrored exactly.
pub fn random_antisymmetric_reward(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_antisymmetric_with(n, &mut rng)
}

fn random_antisymmetric_with(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut reward = Array2::from_elem((n, n), 0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let x: f64 = rng.gen();
            reward[(i, j)] = x;
            reward[(j, i)] = 1.0 - x;
        }
    }
    reward
}

/// All-ties tensor.
pub fn tie_reward(n: usize) -> Array2<f64> {
    Array2::from_elem((n, n), 0.5)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gridworld_sizes_match_the_sampling_ranges() {
        let game = random_gridworld(&GridworldSpec {
            seed: 7,
            ..GridworldSpec::default()
        })
        .unwrap();
        assert!((1..=100).contains(&game.num_states()));
        assert!((2..=10).contains(&game.num_actions()));
    }

    #[test]
    fn gridworld_is_deterministic_in_the_seed() {
        let spec = GridworldSpec {
            seed: 42,
            state_range: (3, 30),
            action_range: (2, 5),
            horizon: 4,
            transition_sparsity: 0.5,
            preference: PreferenceSpec::RandomAntisymmetric,
        };
        let a = random_gridworld(&spec).unwrap();
        let b = random_gridworld(&spec).unwrap();
        assert_eq!(a.num_states(), b.num_states());
        assert!(a.transition().iter().zip(b.transition().iter()).all(|(x, y)| x == y));
        assert!(a.reward().iter().zip(b.reward().iter()).all(|(x, y)| x == y));
        assert!(a
            .initial_dist()
            .iter()
            .zip(b.initial_dist().iter())
            .all(|(x, y)| x == y));
    }

    #[test]
    fn generated_gridworlds_validate_clean() {
        for seed in 0..100 {
            let spec = GridworldSpec {
                seed,
                state_range: (1, 25),
                action_range: (2, 6),
                horizon: 5,
                transition_sparsity: if seed % 2 == 0 { 1.0 } else { 0.4 },
                preference: match seed % 3 {
                    0 => PreferenceSpec::RandomAntisymmetric,
                    1 => PreferenceSpec::ScoreSigmoid { scores: vec![] },
                    _ => PreferenceSpec::Tie,
                },
            };
            let game = random_gridworld(&spec).unwrap();
            let report = game.validate();
            assert!(report.is_empty(), "seed {seed}: {:?}", report);
        }
    }

    #[test]
    fn empty_ranges_are_rejected() {
        let spec = GridworldSpec {
            state_range: (5, 3),
            ..GridworldSpec::default()
        };
        assert!(random_gridworld(&spec).is_err());
    }

    #[test]
    fn token_chain_single_step_is_a_bandit() {
        let game = token_chain(1, 3, &PreferenceSpec::Tie, 0, None).unwrap();
        assert_eq!(game.num_states(), 1);
        assert_eq!(game.num_actions(), 3);
    }

    #[test]
    fn token_chain_enumerates_prefixes() {
        let game = token_chain(2, 2, &PreferenceSpec::Tie, 0, None).unwrap();
        assert_eq!(game.num_states(), 3); // empty prefix + two length-1 prefixes
        assert!(game.validate().is_empty());
    }

    #[test]
    fn token_chain_transitions_are_unit_rows() {
        let game = token_chain(3, 2, &PreferenceSpec::RandomAntisymmetric, 5, None).unwrap();
        for i in 0..game.num_pairs() {
            let row = game.transition().row(i);
            let ones = row.iter().filter(|&&p| p == 1.0).count();
            let zeros = row.iter().filter(|&&p| p == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, game.num_states() - 1);
        }
    }

    #[test]
    fn token_chain_respects_the_state_budget() {
        let err = token_chain(8, 4, &PreferenceSpec::Tie, 0, Some(100)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn conversation_chain_validates() {
        let game = conversation_chain(3, 4, 2, &PreferenceSpec::RandomAntisymmetric, 9).unwrap();
        assert_eq!(game.num_states(), 9);
        assert!(game.validate().is_empty());
    }

    #[test]
    fn equal_scores_give_all_ties() {
        let reward = preference_from_scores(&[2.0, 2.0, 2.0]);
        assert!(reward.iter().all(|&r| r == 0.5));
    }

    #[test]
    fn unit_score_gap_matches_the_logistic_value() {
        let reward = preference_from_scores(&[1.0, 0.0]);
        let oracle = 1.0 / (1.0 + (-1.0f64).exp());
        assert_abs_diff_eq!(reward[(0, 1)], oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(reward[(0, 1)], 0.73106, epsilon = 1e-5);
    }

    #[test]
    fn cyclic_default_matches_the_three_voter_cycle() {
        let reward = cyclic_preference(3, 2.0 / 3.0).unwrap();
        assert_abs_diff_eq!(reward[(0, 1)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(reward[(1, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(reward[(2, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cyclic_with_p_one_is_rock_paper_scissors() {
        let reward = cyclic_preference(3, 1.0).unwrap();
        assert_eq!(reward[(0, 1)], 1.0);
        assert_eq!(reward[(1, 0)], 0.0);
        assert_eq!(reward[(0, 0)], 0.5);
    }

    #[test]
    fn cyclic_rejects_fewer_than_three_actions() {
        assert!(cyclic_preference(2, 0.8).is_err());
    }

    #[test]
    fn cyclic_preferences_admit_no_transitive_ordering() {
        // Exhaustive search for a strict cycle, which rules out any score
        // vector u with r(i, j) = sigmoid(u_i - u_j): that would force the
        // strict order u_i > u_j > u_k > u_i.
        for n in 3..7 {
            let reward = cyclic_preference(n, 2.0 / 3.0).unwrap();
            let mut found_cycle = false;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if reward[(i, j)] > 0.5 && reward[(j, k)] > 0.5 && reward[(k, i)] > 0.5 {
                            found_cycle = true;
                        }
                    }
                }
            }
            assert!(found_cycle, "no non-transitivity witness for n = {n}");
        }
    }

    proptest! {
        #[test]
        fn score_tensors_are_exactly_antisymmetric(
            scores in proptest::collection::vec(-20.0f64..20.0, 2..8)
        ) {
            let reward = preference_from_scores(&scores);
            let n = scores.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(reward[(i, j)] >= 0.0 && reward[(i, j)] <= 1.0);
                    prop_assert_eq!(reward[(i, j)] + reward[(j, i)], 1.0);
                }
            }
        }

        #[test]
        fn random_tensors_are_exactly_antisymmetric(seed in 0u64..500, n in 1usize..12) {
            let reward = random_antisymmetric_reward(n, seed);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(reward[(i, j)] + reward[(j, i)], 1.0);
                }
            }
        }
    }
}
