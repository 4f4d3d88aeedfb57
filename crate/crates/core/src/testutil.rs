//! Shared fixtures for unit tests.

use ndarray::{Array1, Array2};

use crate::envgen::{self, GridworldSpec, PreferenceSpec};
use crate::game::PreferenceGame;
use crate::occupancy::Policy;

/// Rock-paper-scissors: one state, three actions, `i` beats `i + 1 mod 3`.
pub fn rps() -> PreferenceGame {
    single_state_game(envgen::cyclic_preference(3, 1.0).unwrap(), 1)
}

/// One state, two actions, action 0 dominant: `r = [[.5, .8], [.2, .5]]`.
pub fn dom2() -> PreferenceGame {
    single_state_game(
        Array2::from_shape_vec((2, 2), vec![0.5, 0.8, 0.2, 0.5]).unwrap(),
        1,
    )
}

/// The dominance matrix played over a two-stage single-state chain.
pub fn two_stage_dom2() -> PreferenceGame {
    single_state_game(
        Array2::from_shape_vec((2, 2), vec![0.5, 0.8, 0.2, 0.5]).unwrap(),
        2,
    )
}

/// Single-state game where every comparison ties.
pub fn tie_game(num_actions: usize, horizon: usize) -> PreferenceGame {
    single_state_game(envgen::tie_reward(num_actions), horizon)
}

fn single_state_game(reward: Array2<f64>, horizon: usize) -> PreferenceGame {
    let num_actions = reward.nrows();
    PreferenceGame::new(
        1,
        num_actions,
        horizon,
        Array2::from_elem((num_actions, 1), 1.0),
        Array1::from_vec(vec![1.0]),
        reward,
        vec![0],
    )
    .unwrap()
}

/// Deterministic cycle `s -> (s + 1) mod S` under every action, tie reward.
pub fn chain_game(num_states: usize, num_actions: usize, horizon: usize) -> PreferenceGame {
    let sa = num_states * num_actions;
    let mut transition = Array2::zeros((sa, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            transition[(s * num_actions + a, (s + 1) % num_states)] = 1.0;
        }
    }
    let mut initial_dist = Array1::zeros(num_states);
    initial_dist[0] = 1.0;
    PreferenceGame::new(
        num_states,
        num_actions,
        horizon,
        transition,
        initial_dist,
        envgen::tie_reward(sa),
        vec![0; num_states],
    )
    .unwrap()
}

/// Dense random game with the exact given horizon: `S in [2, s_max]`,
/// `A in [2, a_max]`, Dirichlet transitions, one initial state, random
/// antisymmetric preferences. Every state is reachable from stage 2 on.
pub fn random_small_game(seed: u64, s_max: usize, a_max: usize, horizon: usize) -> PreferenceGame {
    envgen::random_gridworld(&GridworldSpec {
        seed,
        state_range: (2.min(s_max), s_max),
        action_range: (2.min(a_max), a_max),
        horizon,
        transition_sparsity: 1.0,
        preference: PreferenceSpec::RandomAntisymmetric,
    })
    .unwrap()
}

/// Random strictly-positive policy drawn from per-row Dirichlet(1, ..., 1).
pub fn random_policy(game: &PreferenceGame, seed: u64) -> Policy {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut probs = Vec::with_capacity(game.horizon());
    for _ in 0..game.horizon() {
        let mut stage = Array2::zeros((game.num_states(), game.num_actions()));
        for s in 0..game.num_states() {
            let row: Vec<f64> = (0..game.num_actions())
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = row.iter().sum();
            for (a, value) in row.iter().enumerate() {
                stage[(s, a)] = value / total;
            }
        }
        probs.push(stage);
    }
    Policy::from_probs(game, probs).unwrap()
}
