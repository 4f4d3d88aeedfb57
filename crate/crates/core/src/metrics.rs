//! Exact best responses, exploitability and the Nash gap.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::game::PreferenceGame;
use crate::occupancy::{OccupancyMeasure, Policy};

/// Absolute tolerance for the antisymmetry identity between the two Nash-gap
/// components.
const GAP_SYMMETRY_TOL: f64 = 1e-10;

/// A deterministic best response together with its value against the
/// opponent, `E_{S1 ~ nu_1} V_1^{BR, pi}(S1, S1)`.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub policy: Policy,
    pub value: f64,
}

#[derive(Clone, Copy)]
enum Objective {
    Max,
    Min,
}

/// Exact best response to `opponent` by backward induction.
///
/// Fixing the opponent reduces each initial state to a single-agent MDP with
/// stage reward `r'_h(s, a) = sum_{s', a'} d_h(s', a' | s1) r(s, a, s', a')`.
/// Ties are broken toward the lowest action index.
pub fn best_response(game: &PreferenceGame, opponent: &Policy) -> Result<BestResponse> {
    let occ = OccupancyMeasure::compute(game, opponent)?;
    let (value, actions) = opponent_induced_dp(game, &occ, Objective::Max, false);
    Ok(BestResponse {
        policy: Policy::deterministic(game, &actions)?,
        value,
    })
}

/// Best-response value minus the self-play value H/2, clipped at zero.
pub fn exploitability(game: &PreferenceGame, policy: &Policy) -> Result<f64> {
    let br = best_response(game, policy)?;
    Ok((br.value - game.horizon() as f64 / 2.0).max(0.0))
}

/// Both sides of the approximate-equilibrium definition:
/// `max_side = max_pi <nu_1, V^{pi, policy}> - H/2` and
/// `min_side = H/2 - min_pi <nu_1, V^{policy, pi}>`.
///
/// Antisymmetry makes the two sides equal; they are computed by independent
/// dynamic programs and the equality is enforced to 1e-10.
pub fn nash_gap(game: &PreferenceGame, policy: &Policy) -> Result<(f64, f64)> {
    let occ = OccupancyMeasure::compute(game, policy)?;
    let half = game.horizon() as f64 / 2.0;
    let (max_value, _) = opponent_induced_dp(game, &occ, Objective::Max, false);
    let (min_value, _) = opponent_induced_dp(game, &occ, Objective::Min, true);
    let max_side = max_value - half;
    let min_side = half - min_value;
    if (max_side - min_side).abs() > GAP_SYMMETRY_TOL {
        return Err(Error::Internal(format!(
            "nash gap sides disagree: {max_side} vs {min_side}"
        )));
    }
    Ok((max_side, min_side))
}

/// Runs the single-agent DP against the opponent occupancy. With
/// `transpose = false` the reward is `R d_h` (the deviating player is the
/// row player); with `transpose = true` it is `R^T d_h` (the deviating
/// player is the column player, whose payoff is minimized).
fn opponent_induced_dp(
    game: &PreferenceGame,
    occ: &OccupancyMeasure,
    objective: Objective,
    transpose: bool,
) -> (f64, Vec<Vec<usize>>) {
    let (s_count, a_count, horizon) = (game.num_states(), game.num_actions(), game.horizon());
    let mut actions = vec![vec![0usize; s_count]; horizon];
    let mut total = 0.0;
    for (s1, cond) in occ.iter() {
        let rbar: Array2<f64> = if transpose {
            game.reward().t().dot(&cond.matrix().t())
        } else {
            game.reward().dot(&cond.matrix().t())
        };
        let mut v: Array1<f64> = Array1::zeros(s_count);
        for h in (0..horizon).rev() {
            let q = rbar.column(h).to_owned() + game.transition().dot(&v);
            for state in 0..s_count {
                let row = q.slice(s![state * a_count..(state + 1) * a_count]);
                let mut best_a = 0;
                let mut best = row[0];
                for (a, &value) in row.iter().enumerate().skip(1) {
                    let better = match objective {
                        Objective::Max => value > best,
                        Objective::Min => value < best,
                    };
                    if better {
                        best = value;
                        best_a = a;
                    }
                }
                v[state] = best;
                if game.init_partition()[state] == s1 {
                    actions[h][state] = best_a;
                }
            }
        }
        total += game.initial_dist()[s1] * v[s1];
    }
    (total, actions)
}
