//! Policies, occupancy measures and the Bellman flow constraints.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::game::{PreferenceGame, STOCHASTIC_TOL};

/// Non-stationary stochastic policy: one distribution over actions per
/// (stage, state).
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// One `(S, A)` row-stochastic matrix per stage.
    probs: Vec<Array2<f64>>,
}

impl Policy {
    pub fn uniform(game: &PreferenceGame) -> Self {
        let p = 1.0 / game.num_actions() as f64;
        Self {
            probs: vec![
                Array2::from_elem((game.num_states(), game.num_actions()), p);
                game.horizon()
            ],
        }
    }

    /// Builds a policy from explicit probabilities, renormalizing rows within
    /// [`STOCHASTIC_TOL`] of stochastic and rejecting anything worse.
    pub fn from_probs(game: &PreferenceGame, mut probs: Vec<Array2<f64>>) -> Result<Self> {
        if probs.len() != game.horizon() {
            return Err(Error::Shape(format!(
                "policy has {} stages, expected {}",
                probs.len(),
                game.horizon()
            )));
        }
        for (h, stage) in probs.iter_mut().enumerate() {
            if stage.dim() != (game.num_states(), game.num_actions()) {
                return Err(Error::Shape(format!(
                    "policy stage {h} is {:?}, expected ({}, {})",
                    stage.dim(),
                    game.num_states(),
                    game.num_actions()
                )));
            }
            for s in 0..game.num_states() {
                let mut row = stage.row_mut(s);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL
                    || row.iter().any(|&p| p < -STOCHASTIC_TOL || !p.is_finite())
                {
                    return Err(Error::NotStochastic {
                        context: format!("policy stage {h}, state {s}"),
                        sum,
                    });
                }
                row.mapv_inplace(|p| p.max(0.0) / sum);
            }
        }
        Ok(Self { probs })
    }

    /// One-hot policy playing `actions[h][s]` at every (stage, state).
    pub fn deterministic(game: &PreferenceGame, actions: &[Vec<usize>]) -> Result<Self> {
        if actions.len() != game.horizon() {
            return Err(Error::Shape("action table has wrong stage count".into()));
        }
        let mut probs = Vec::with_capacity(game.horizon());
        for stage in actions {
            if stage.len() != game.num_states() {
                return Err(Error::Shape("action table has wrong state count".into()));
            }
            let mut m = Array2::zeros((game.num_states(), game.num_actions()));
            for (s, &a) in stage.iter().enumerate() {
                if a >= game.num_actions() {
                    return Err(Error::Shape(format!("action {a} out of range")));
                }
                m[(s, a)] = 1.0;
            }
            probs.push(m);
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_probs_unchecked(probs: Vec<Array2<f64>>) -> Self {
        Self { probs }
    }

    pub fn num_stages(&self) -> usize {
        self.probs.len()
    }

    pub fn stage(&self, h: usize) -> &Array2<f64> {
        &self.probs[h]
    }

    pub fn prob(&self, h: usize, state: usize, action: usize) -> f64 {
        self.probs[h][(state, action)]
    }

    pub(crate) fn stage_mut(&mut self, h: usize) -> &mut Array2<f64> {
        &mut self.probs[h]
    }

    pub fn matches(&self, game: &PreferenceGame) -> bool {
        self.probs.len() == game.horizon()
            && self
                .probs
                .iter()
                .all(|m| m.dim() == (game.num_states(), game.num_actions()))
    }

    /// Largest absolute per-entry difference to another policy.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-stage state-action distributions conditioned on one initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalOccupancy {
    /// Shape `(H, S*A)`; row `h` is the distribution at stage `h`.
    d: Array2<f64>,
}

impl ConditionalOccupancy {
    /// Wraps an arbitrary matrix; use [`flow_residual`] to test feasibility.
    pub fn from_matrix(d: Array2<f64>) -> Self {
        Self { d }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn stage(&self, h: usize) -> ndarray::ArrayView1<'_, f64> {
        self.d.row(h)
    }

    pub fn num_stages(&self) -> usize {
        self.d.nrows()
    }
}

/// Occupancy measures for every initial state in the support of `nu_1`.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    init_states: Vec<usize>,
    per_init: Vec<ConditionalOccupancy>,
}

impl OccupancyMeasure {
    pub fn compute(game: &PreferenceGame, policy: &Policy) -> Result<Self> {
        let init_states = game.initial_support();
        let per_init = init_states
            .iter()
            .map(|&s1| occupancy_forward(game, policy, s1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            init_states,
            per_init,
        })
    }

    pub fn from_parts(init_states: Vec<usize>, per_init: Vec<ConditionalOccupancy>) -> Self {
        assert_eq!(init_states.len(), per_init.len());
        Self {
            init_states,
            per_init,
        }
    }

    pub fn init_states(&self) -> &[usize] {
        &self.init_states
    }

    pub fn get(&self, s1: usize) -> Option<&ConditionalOccupancy> {
        self.init_states
            .iter()
            .position(|&s| s == s1)
            .map(|i| &self.per_init[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ConditionalOccupancy)> {
        self.init_states.iter().copied().zip(self.per_init.iter())
    }

    pub fn max_flow_residual(&self, game: &PreferenceGame) -> f64 {
        self.iter()
            .map(|(s1, occ)| flow_residual(game, occ, s1))
            .fold(0.0, f64::max)
    }
}

/// Forward recursion for the occupancy measure of `policy` conditioned on
/// starting at `s1`:
/// `d_1(s, a) = 1{s = s1} pi_1(a | s1)` and
/// `d_{h+1}(s, a) = pi_{h+1}(a | s) * sum_{s', a'} f(s | s', a') d_h(s', a')`.
pub fn occupancy_forward(
    game: &PreferenceGame,
    policy: &Policy,
    s1: usize,
) -> Result<ConditionalOccupancy> {
    if !policy.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    if s1 >= game.num_states() || game.initial_dist()[s1] <= 0.0 {
        return Err(Error::Domain(format!(
            "state {s1} is not in the support of the initial distribution"
        )));
    }
    let (h_total, sa) = (game.horizon(), game.num_pairs());
    let a_count = game.num_actions();
    let mut d = Array2::zeros((h_total, sa));
    for a in 0..a_count {
        d[(0, game.sa_index(s1, a))] = policy.prob(0, s1, a);
    }
    for h in 1..h_total {
        // State marginal at stage h: m(s) = sum_{s', a'} f(s | s', a') d_{h-1}(s', a').
        let m: Array1<f64> = d.row(h - 1).dot(game.transition());
        for s in 0..game.num_states() {
            for a in 0..a_count {
                d[(h, game.sa_index(s, a))] = m[s] * policy.prob(h, s, a);
            }
        }
    }
    Ok(ConditionalOccupancy { d })
}

/// Largest violation of the Bellman flow constraints for initial state `s1`:
/// the stage-to-stage conservation residual together with the initial-stage
/// condition `|sum_a d_1(s, a) - 1{s = s1}|`.
pub fn flow_residual(game: &PreferenceGame, occ: &ConditionalOccupancy, s1: usize) -> f64 {
    let a_count = game.num_actions();
    let state_mass = |h: usize, s: usize| -> f64 {
        (0..a_count).map(|a| occ.d[(h, game.sa_index(s, a))]).sum()
    };
    let mut worst = 0.0f64;
    for s in 0..game.num_states() {
        let target = if s == s1 { 1.0 } else { 0.0 };
        worst = worst.max((state_mass(0, s) - target).abs());
    }
    for h in 0..occ.num_stages().saturating_sub(1) {
        let inflow: Array1<f64> = occ.d.row(h).dot(game.transition());
        for s in 0..game.num_states() {
            worst = worst.max((state_mass(h + 1, s) - inflow[s]).abs());
        }
    }
    worst
}

/// Recovers the policy `pi_h(a | s) = d_h(s, a) / sum_a d_h(s, a)`.
///
/// States with zero mass at a stage get the uniform distribution. Under
/// initial-state separability at most one conditional slice contributes to
/// any given state, so the slices are summed unweighted.
pub fn policy_from_occupancy(game: &PreferenceGame, occ: &OccupancyMeasure) -> Policy {
    let weights: Vec<&Array2<f64>> = occ.per_init.iter().map(|c| c.matrix()).collect();
    policy_from_weights(game, &weights)
}

/// Ratio policy of a sum of (unnormalized) occupancy weight matrices.
pub(crate) fn policy_from_weights(game: &PreferenceGame, weights: &[&Array2<f64>]) -> Policy {
    let (s_count, a_count) = (game.num_states(), game.num_actions());
    let uniform = 1.0 / a_count as f64;
    let mut probs = Vec::with_capacity(game.horizon());
    for h in 0..game.horizon() {
        let mut stage = Array2::zeros((s_count, a_count));
        for s in 0..s_count {
            let mass: Vec<f64> = (0..a_count)
                .map(|a| {
                    weights
                        .iter()
                        .map(|w| w[(h, game.sa_index(s, a))])
                        .sum::<f64>()
                })
                .collect();
            let total: f64 = mass.iter().sum();
            for a in 0..a_count {
                stage[(s, a)] = if total > 0.0 {
                    mass[a] / total
                } else {
                    uniform
                };
            }
        }
        probs.push(stage);
    }
    Policy::from_probs_unchecked(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{self, GridworldSpec, PreferenceSpec};
    use crate::testutil::{chain_game, dom2};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dom2_uniform_occupancy() {
        let game = dom2();
        let occ = occupancy_forward(&game, &Policy::uniform(&game), 0).unwrap();
        assert_abs_diff_eq!(occ.stage(0)[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(occ.stage(0)[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_chain_occupancy_is_unit_mass() {
        // 3 states in a cycle, 2 actions, pure policy playing action 1.
        let game = chain_game(3, 2, 2);
        let policy = Policy::deterministic(&game, &[vec![1; 3], vec![1; 3]]).unwrap();
        let occ = occupancy_forward(&game, &policy, 0).unwrap();
        for h in 0..2 {
            let visited = game.sa_index(h % 3, 1); // chain moves 0 -> 1 -> 2
            for i in 0..game.num_pairs() {
                let expected = if i == visited { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(occ.stage(h)[i], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn forward_occupancy_satisfies_flow_constraints() {
        let spec = GridworldSpec {
            seed: 11,
            state_range: (8, 20),
            action_range: (2, 4),
            horizon: 6,
            transition_sparsity: 0.6,
            preference: PreferenceSpec::RandomAntisymmetric,
        };
        let game = envgen::random_gridworld(&spec).unwrap();
        let policy = crate::testutil::random_policy(&game, 3);
        let s1 = game.initial_support()[0];
        let occ = occupancy_forward(&game, &policy, s1).unwrap();
        assert!(flow_residual(&game, &occ, s1) <= 1e-10);
        for h in 0..game.horizon() {
            assert_abs_diff_eq!(occ.stage(h).sum(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn teleported_mass_shows_up_as_residual() {
        let game = chain_game(3, 1, 2);
        let policy = Policy::uniform(&game);
        let occ = occupancy_forward(&game, &policy, 0).unwrap();
        let mut d = occ.matrix().clone();
        // Move 0.25 of stage-2 mass from the reachable state 1 to state 0,
        // which has no incoming flow there.
        let from = game.sa_index(1, 0);
        let to = game.sa_index(0, 0);
        d[(1, from)] -= 0.25;
        d[(1, to)] += 0.25;
        let broken = ConditionalOccupancy::from_matrix(d);
        assert_abs_diff_eq!(flow_residual(&game, &broken, 0), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn uniform_occupancy_residual_in_chain() {
        // Cyclic chain: every state has exactly one predecessor, so the only
        // violation of a uniform d is the initial-stage condition at s1.
        let s_count = 4;
        let game = chain_game(s_count, 2, 3);
        let d = Array2::from_elem(
            (game.horizon(), game.num_pairs()),
            1.0 / game.num_pairs() as f64,
        );
        let occ = ConditionalOccupancy::from_matrix(d);
        let expected = 1.0 - 1.0 / s_count as f64;
        assert_abs_diff_eq!(flow_residual(&game, &occ, 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn policy_from_occupancy_identities() {
        let game = chain_game(3, 2, 3);
        let uniform = Policy::uniform(&game);
        let occ = OccupancyMeasure::compute(&game, &uniform).unwrap();
        let recovered = policy_from_occupancy(&game, &occ);
        assert!(recovered.max_abs_diff(&uniform) <= 1e-12);

        let pure = Policy::deterministic(&game, &[vec![1; 3], vec![0; 3], vec![1; 3]]).unwrap();
        let occ = OccupancyMeasure::compute(&game, &pure).unwrap();
        let recovered = policy_from_occupancy(&game, &occ);
        // Visited states must reproduce the pure action exactly; zero-mass
        // states fall back to uniform.
        assert_abs_diff_eq!(recovered.prob(0, 0, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(recovered.prob(1, 1, 0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(recovered.prob(2, 2, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(recovered.prob(2, 1, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mixture_of_pure_policies_round_trips() {
        let game = chain_game(4, 2, 3);
        let p1 = Policy::deterministic(&game, &[vec![0; 4], vec![0; 4], vec![0; 4]]).unwrap();
        let p2 = Policy::deterministic(&game, &[vec![1; 4], vec![1; 4], vec![1; 4]]).unwrap();
        let d1 = occupancy_forward(&game, &p1, 0).unwrap();
        let d2 = occupancy_forward(&game, &p2, 0).unwrap();
        let mix = ConditionalOccupancy::from_matrix((d1.matrix() + d2.matrix()) * 0.5);
        let measure = OccupancyMeasure::from_parts(vec![0], vec![mix.clone()]);
        let policy = policy_from_occupancy(&game, &measure);
        let realized = occupancy_forward(&game, &policy, 0).unwrap();
        for (x, y) in realized.matrix().iter().zip(mix.matrix().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn occupancy_forward_rejects_unsupported_initial_state() {
        let game = dom2();
        let policy = Policy::uniform(&game);
        assert!(matches!(
            occupancy_forward(&game, &policy, 5),
            Err(Error::Domain(_))
        ));
    }
}
