//! Pairwise value functions and the exact dynamic-programming primitives.
//!
//! The pairwise tensors `Q_h(s, a, s', a')` and `V_h(s, s')` are the exact
//! objects for small games. Solvers at gridworld scale never materialize
//! them: expectations of `Q` against an opponent occupancy collapse to a
//! single-agent backward recursion ([`expected_q`]).

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::game::PreferenceGame;
use crate::occupancy::{ConditionalOccupancy, OccupancyMeasure, Policy};

/// Tolerance above which an occupancy is rejected as flow-infeasible.
pub const FLOW_FEASIBILITY_TOL: f64 = 1e-8;

/// Stagewise pairwise value tensors for a policy pair.
#[derive(Debug, Clone)]
pub struct PairwiseValues {
    /// `q[h]` has shape `(S*A, S*A)`.
    q: Vec<Array2<f64>>,
    /// `v[h]` has shape `(S, S)`; `v[H]` is the zero terminal value.
    v: Vec<Array2<f64>>,
}

impl PairwiseValues {
    pub fn q(&self, h: usize) -> &Array2<f64> {
        &self.q[h]
    }

    pub fn v(&self, h: usize) -> &Array2<f64> {
        &self.v[h]
    }

    pub fn q_at(&self, game: &PreferenceGame, h: usize, s: usize, a: usize, s2: usize, a2: usize) -> f64 {
        self.q[h][(game.sa_index(s, a), game.sa_index(s2, a2))]
    }
}

/// Backward recursion for the pairwise Bellman equations:
/// `Q_h = r + E_{f x f} V_{h+1}` and `V_h = E_{pi x pi'} Q_h`, from
/// `V_{H+1} = 0`.
pub fn pairwise_backup(
    game: &PreferenceGame,
    pi: &Policy,
    pi_prime: &Policy,
) -> Result<PairwiseValues> {
    if !pi.matches(game) || !pi_prime.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    let (s_count, a_count, horizon) = (game.num_states(), game.num_actions(), game.horizon());
    let sa = game.num_pairs();
    let mut q = vec![Array2::zeros((sa, sa)); horizon];
    let mut v = vec![Array2::zeros((s_count, s_count)); horizon + 1];

    for h in (0..horizon).rev() {
        // w(i, sbar) = sum_shat f(shat | i) V_{h+1}(shat, sbar)
        let w = game.transition().dot(&v[h + 1]);
        // m(i, j) = sum_sbar f(sbar | j) w(i, sbar)
        let m = w.dot(&game.transition().t());
        q[h] = game.reward() + &m;

        // x(i, s') = sum_{a'} q(i, (s', a')) pi'_h(a' | s')
        let mut x = Array2::zeros((sa, s_count));
        for s2 in 0..s_count {
            let block = q[h].slice(s![.., s2 * a_count..(s2 + 1) * a_count]);
            let col = block.dot(&pi_prime.stage(h).row(s2));
            x.column_mut(s2).assign(&col);
        }
        // V_h(s, s') = sum_a pi_h(a | s) x((s, a), s')
        for s in 0..s_count {
            let block = x.slice(s![s * a_count..(s + 1) * a_count, ..]);
            let row = pi.stage(h).row(s).dot(&block);
            v[h].row_mut(s).assign(&row);
        }
    }
    Ok(PairwiseValues { q, v })
}

/// Expected game value `E_{S1 ~ nu_1} V_1(S1, S1)` for the policy pair.
pub fn game_value(game: &PreferenceGame, pi: &Policy, pi_prime: &Policy) -> Result<f64> {
    let values = pairwise_backup(game, pi, pi_prime)?;
    Ok(game
        .initial_support()
        .into_iter()
        .map(|s1| game.initial_dist()[s1] * values.v(0)[(s1, s1)])
        .sum())
}

/// The occupancy-space bilinear objective
/// `E_{S1 ~ nu_1} sum_h d_h(. | S1)^T R d'_h(. | S1)`.
///
/// Rejects occupancies whose flow residual exceeds [`FLOW_FEASIBILITY_TOL`].
pub fn bilinear_objective(
    game: &PreferenceGame,
    d: &OccupancyMeasure,
    d_prime: &OccupancyMeasure,
) -> Result<f64> {
    for (occ, label) in [(d, "first"), (d_prime, "second")] {
        let residual = occ.max_flow_residual(game);
        if residual > FLOW_FEASIBILITY_TOL {
            return Err(Error::Domain(format!(
                "{label} occupancy is flow-infeasible (residual {residual:.3e})"
            )));
        }
    }
    let mut total = 0.0;
    for (s1, occ) in d.iter() {
        let other = d_prime
            .get(s1)
            .ok_or_else(|| Error::Domain(format!("occupancies disagree on initial state {s1}")))?;
        // rbar(i, h) = sum_j R(i, j) d'_h(j)
        let rbar = game.reward().dot(&other.matrix().t());
        let mut value = 0.0;
        for h in 0..game.horizon() {
            value += occ.stage(h).dot(&rbar.column(h));
        }
        total += game.initial_dist()[s1] * value;
    }
    Ok(total)
}

/// Expected pairwise action values against an opponent occupancy:
/// `u_h(s, a) = E_{(S', A') ~ opp_h} Q_h^{pi, sigma}(s, a, S', A')`,
/// where `opp` must be the occupancy measure of the opponent policy `sigma`
/// (its stage marginals factor as state marginal times `sigma`). Computed by
/// the single-agent recursion
/// `u_h = R opp_h + F g_{h+1}`, `g_h(s) = <pi_h(.|s), u_h(s, .)>`,
/// which avoids materializing the pairwise tensor.
pub fn expected_q(
    game: &PreferenceGame,
    pi: &Policy,
    opp: &ConditionalOccupancy,
) -> Result<Vec<Array1<f64>>> {
    if !pi.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    if opp.num_stages() != game.horizon() || opp.matrix().ncols() != game.num_pairs() {
        return Err(Error::Shape("occupancy does not match game".into()));
    }
    let rbar = game.reward().dot(&opp.matrix().t());
    backward_from_stage_rewards(game, pi, |h| rbar.column(h).to_owned())
}

/// Standard (non-soft) action values of `pi` for arbitrary per-stage rewards:
/// `Q_h = r_h + F V_{h+1}`, `V_h(s) = <pi_h(.|s), Q_h(s, .)>`.
pub fn policy_q_values(
    game: &PreferenceGame,
    pi: &Policy,
    rewards: &[Array1<f64>],
) -> Result<Vec<Array1<f64>>> {
    if !pi.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    if rewards.len() != game.horizon() || rewards.iter().any(|r| r.len() != game.num_pairs()) {
        return Err(Error::Shape("reward stages do not match game".into()));
    }
    backward_from_stage_rewards(game, pi, |h| rewards[h].clone())
}

fn backward_from_stage_rewards(
    game: &PreferenceGame,
    pi: &Policy,
    reward_at: impl Fn(usize) -> Array1<f64>,
) -> Result<Vec<Array1<f64>>> {
    let (s_count, a_count) = (game.num_states(), game.num_actions());
    let mut g: Array1<f64> = Array1::zeros(s_count);
    let mut out = vec![Array1::zeros(0); game.horizon()];
    for h in (0..game.horizon()).rev() {
        let u = reward_at(h) + game.transition().dot(&g);
        for s in 0..s_count {
            g[s] = pi
                .stage(h)
                .row(s)
                .dot(&u.slice(s![s * a_count..(s + 1) * a_count]));
        }
        out[h] = u;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::occupancy_forward;
    use crate::testutil::{
        chain_game, dom2, random_policy, random_small_game, rps, two_stage_dom2,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn rps_self_play_value_is_half() {
        let game = rps();
        let uniform = Policy::uniform(&game);
        let values = pairwise_backup(&game, &uniform, &uniform).unwrap();
        assert_abs_diff_eq!(values.v(0)[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dom2_pure_vs_pure_reads_off_the_matrix() {
        let game = dom2();
        let a1 = Policy::deterministic(&game, &[vec![0]]).unwrap();
        let a2 = Policy::deterministic(&game, &[vec![1]]).unwrap();
        assert_abs_diff_eq!(game_value(&game, &a1, &a2).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn two_stage_chain_uniform_value_is_one() {
        let game = two_stage_dom2();
        let uniform = Policy::uniform(&game);
        assert_abs_diff_eq!(
            game_value(&game, &uniform, &uniform).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dom2_pure_vs_uniform_value() {
        let game = dom2();
        let a1 = Policy::deterministic(&game, &[vec![0]]).unwrap();
        let uniform = Policy::uniform(&game);
        assert_abs_diff_eq!(
            game_value(&game, &a1, &uniform).unwrap(),
            0.65,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rps_rock_beats_scissors() {
        let game = rps();
        let rock = Policy::deterministic(&game, &[vec![0]]).unwrap();
        let scissors = Policy::deterministic(&game, &[vec![1]]).unwrap();
        // Action 0 beats action 1 in the cyclic construction.
        assert_abs_diff_eq!(
            game_value(&game, &rock, &scissors).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn self_play_value_is_h_over_2_on_random_games() {
        for seed in 0..20 {
            let game = random_small_game(seed, 5, 3, 3);
            let pi = random_policy(&game, seed + 100);
            let value = game_value(&game, &pi, &pi).unwrap();
            assert_abs_diff_eq!(
                value,
                game.horizon() as f64 / 2.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn bilinear_objective_matches_game_value() {
        for seed in 0..10 {
            let game = random_small_game(seed, 4, 3, 3);
            let pi = random_policy(&game, seed + 7);
            let pi2 = random_policy(&game, seed + 13);
            let d = OccupancyMeasure::compute(&game, &pi).unwrap();
            let d2 = OccupancyMeasure::compute(&game, &pi2).unwrap();
            let lifted = bilinear_objective(&game, &d, &d2).unwrap();
            let direct = game_value(&game, &pi, &pi2).unwrap();
            assert_abs_diff_eq!(lifted, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn bilinear_objective_on_dom2_pure_occupancies() {
        let game = dom2();
        let a1 = Policy::deterministic(&game, &[vec![0]]).unwrap();
        let a2 = Policy::deterministic(&game, &[vec![1]]).unwrap();
        let d1 = OccupancyMeasure::compute(&game, &a1).unwrap();
        let d2 = OccupancyMeasure::compute(&game, &a2).unwrap();
        assert_abs_diff_eq!(
            bilinear_objective(&game, &d1, &d2).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bilinear_objective(&game, &d1, &d1).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bilinear_objective_rejects_infeasible_occupancy() {
        let game = chain_game(3, 2, 2);
        let occ = OccupancyMeasure::from_parts(
            vec![0],
            vec![ConditionalOccupancy::from_matrix(Array2::from_elem(
                (2, 6),
                1.0 / 6.0,
            ))],
        );
        let good = OccupancyMeasure::compute(&game, &Policy::uniform(&game)).unwrap();
        assert!(matches!(
            bilinear_objective(&game, &occ, &good),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn q_range_is_bounded_by_stages_to_go() {
        for seed in 0..5 {
            let game = random_small_game(seed, 4, 3, 4);
            let pi = random_policy(&game, seed + 3);
            let pi2 = random_policy(&game, seed + 4);
            let values = pairwise_backup(&game, &pi, &pi2).unwrap();
            for h in 0..game.horizon() {
                let bound = (game.horizon() - h) as f64;
                for &x in values.q(h).iter() {
                    assert!(x >= -1e-12 && x <= bound + 1e-12, "Q out of range: {x}");
                }
            }
        }
    }

    #[test]
    fn expected_q_matches_pairwise_tensor_contraction() {
        for seed in 0..8 {
            let game = random_small_game(seed, 4, 3, 3);
            let pi = random_policy(&game, seed + 21);
            let sigma = random_policy(&game, seed + 22);
            let values = pairwise_backup(&game, &pi, &sigma).unwrap();
            let s1 = game.initial_support()[0];
            let opp = occupancy_forward(&game, &sigma, s1).unwrap();
            let u = expected_q(&game, &pi, &opp).unwrap();
            for h in 0..game.horizon() {
                let direct = values.q(h).dot(&opp.stage(h));
                for i in 0..game.num_pairs() {
                    assert_abs_diff_eq!(u[h][i], direct[i], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn value_difference_identity_holds() {
        for seed in 0..20 {
            let game = random_small_game(seed, 5, 3, 3);
            let pi = random_policy(&game, seed + 31);
            let pi_prime = random_policy(&game, seed + 32);
            let pi_bar = random_policy(&game, seed + 33);

            let lhs = game_value(&game, &pi, &pi_bar).unwrap()
                - game_value(&game, &pi_prime, &pi_bar).unwrap();

            let cross = pairwise_backup(&game, &pi_prime, &pi_bar).unwrap();
            let mut rhs = 0.0;
            for &s1 in &game.initial_support() {
                let d_pi = occupancy_forward(&game, &pi, s1).unwrap();
                let d_bar = occupancy_forward(&game, &pi_bar, s1).unwrap();
                let mut inner = 0.0;
                for h in 0..game.horizon() {
                    // y(i) = E_{(S', A') ~ d_bar_h} Q_h^{pi', pi_bar}(i, S', A')
                    let y = cross.q(h).dot(&d_bar.stage(h));
                    for s in 0..game.num_states() {
                        let state_mass: f64 = (0..game.num_actions())
                            .map(|a| d_pi.stage(h)[game.sa_index(s, a)])
                            .sum();
                        if state_mass == 0.0 {
                            continue;
                        }
                        for a in 0..game.num_actions() {
                            inner += state_mass
                                * y[game.sa_index(s, a)]
                                * (pi.prob(h, s, a) - pi_prime.prob(h, s, a));
                        }
                    }
                }
                rhs += game.initial_dist()[s1] * inner;
            }
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }
}
