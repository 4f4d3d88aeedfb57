//! Iterative equilibrium solvers.
//!
//! Two families are implemented, both as multiplicative-weights policy
//! updates in log domain:
//!
//! * optimistic mirror descent over occupancy measures, realized in policy
//!   space through a soft-Bellman backward recursion with the stagewise
//!   temperature `beta_h = beta / (H - h + 1)` (exact variant), or through
//!   standard action values for the optimistic reward (approximate variant);
//! * a natural actor-critic that reweights by the exact expected pairwise
//!   action values under the current self-play occupancy.
//!
//! Both run in self-play with a single policy sequence: in a constant-sum
//! antisymmetric game the max- and min-player updates coincide
//! ([`run_two_player_ompo`] exposes the explicit two-player iteration for
//! checking exactly that).

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::game::PreferenceGame;
use crate::metrics::{exploitability, nash_gap};
use crate::occupancy::{
    policy_from_weights, ConditionalOccupancy, OccupancyMeasure, Policy,
};
use crate::values::{bilinear_objective, expected_q, policy_q_values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    OmpoExact,
    OmpoApprox,
    Mpo,
    OmpoRegression,
    MpoRegression,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OmpoExact => "ompo_exact",
            Algorithm::OmpoApprox => "ompo_approx",
            Algorithm::Mpo => "mpo",
            Algorithm::OmpoRegression => "ompo_regression",
            Algorithm::MpoRegression => "mpo_regression",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ompo_exact" => Ok(Algorithm::OmpoExact),
            "ompo_approx" => Ok(Algorithm::OmpoApprox),
            "mpo" => Ok(Algorithm::Mpo),
            "ompo_regression" => Ok(Algorithm::OmpoRegression),
            "mpo_regression" => Ok(Algorithm::MpoRegression),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Inner-loop options for the squared-loss regression variants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionOptions {
    #[serde(default = "default_inner_steps")]
    pub steps: usize,
    #[serde(default = "default_inner_step_size")]
    pub step_size: f64,
}

fn default_inner_steps() -> usize {
    200
}

fn default_inner_step_size() -> f64 {
    0.5
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            steps: default_inner_steps(),
            step_size: default_inner_step_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Learning rate; `None` picks the paper default for the algorithm.
    #[serde(default)]
    pub beta: Option<f64>,
    pub iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub regression: RegressionOptions,
}

fn default_eval_every() -> usize {
    1
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, iterations: usize) -> Self {
        Self {
            algorithm,
            beta: None,
            iterations,
            eval_every: default_eval_every(),
            seed: 0,
            regression: RegressionOptions::default(),
        }
    }

    /// The learning rate actually used: the configured one, or the default
    /// `1/sqrt(2)` for the optimistic updates (the 1-strongly-convex
    /// boundary) and `sqrt(log(A) / (T H^2))` for the actor-critic.
    pub fn resolved_beta(&self, game: &PreferenceGame) -> f64 {
        if let Some(beta) = self.beta {
            return beta;
        }
        match self.algorithm {
            Algorithm::OmpoExact | Algorithm::OmpoApprox | Algorithm::OmpoRegression => {
                std::f64::consts::FRAC_1_SQRT_2
            }
            Algorithm::Mpo | Algorithm::MpoRegression => {
                let t = self.iterations.max(1) as f64;
                let h = game.horizon() as f64;
                let log_actions = (game.num_actions().max(2) as f64).ln();
                (log_actions / (t * h * h)).sqrt()
            }
        }
    }

    fn check(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Some(beta) = self.beta {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::Config(format!("beta must be positive, got {beta}")));
            }
        }
        if !(self.regression.step_size.is_finite() && self.regression.step_size > 0.0) {
            return Err(Error::Config("regression step size must be positive".into()));
        }
        Ok(())
    }
}

/// Rolling pair of iterates. At creation the previous iterate equals the
/// current one (the optimistic recursion starts from `d^0 = d^1`).
#[derive(Debug, Clone)]
pub struct SolverState {
    pub policy: Policy,
    pub prev_policy: Policy,
    pub occupancy: OccupancyMeasure,
    pub prev_occupancy: OccupancyMeasure,
    pub iteration: usize,
}

impl SolverState {
    pub fn fresh(game: &PreferenceGame) -> Result<Self> {
        Self::from_policy(game, Policy::uniform(game))
    }

    pub fn from_policy(game: &PreferenceGame, policy: Policy) -> Result<Self> {
        if !policy.matches(game) {
            return Err(Error::Shape("policy does not match game".into()));
        }
        let occupancy = OccupancyMeasure::compute(game, &policy)?;
        Ok(Self {
            prev_policy: policy.clone(),
            prev_occupancy: occupancy.clone(),
            policy,
            occupancy,
            iteration: 1,
        })
    }

    pub fn advance(&mut self, game: &PreferenceGame, new_policy: Policy) -> Result<()> {
        let new_occupancy = OccupancyMeasure::compute(game, &new_policy)?;
        self.prev_policy = std::mem::replace(&mut self.policy, new_policy);
        self.prev_occupancy = std::mem::replace(&mut self.occupancy, new_occupancy);
        self.iteration += 1;
        Ok(())
    }
}

/// The optimistic stage reward
/// `rt_h(s, a) = sum_{s', a'} (2 d_h(s', a') - d_h^prev(s', a')) r(s, a, s', a')`.
pub fn optimistic_reward(
    game: &PreferenceGame,
    d_t: &ConditionalOccupancy,
    d_prev: &ConditionalOccupancy,
    h: usize,
) -> Result<Array1<f64>> {
    if h >= game.horizon() {
        return Err(Error::Domain(format!(
            "stage {h} out of range for horizon {}",
            game.horizon()
        )));
    }
    if d_t.num_stages() != game.horizon() || d_prev.num_stages() != game.horizon() {
        return Err(Error::Shape("occupancy does not match game".into()));
    }
    let weights = 2.0 * &d_t.stage(h) - &d_prev.stage(h);
    Ok(game.reward().dot(&weights))
}

/// One per-state sample of the log-sum-exp sandwich: the soft state value
/// must lie in `[<pi, Q>, <pi, Q> + beta_h * Q_max^2]`.
#[derive(Debug, Clone, Copy)]
pub struct SandwichSample {
    pub stage: usize,
    pub state: usize,
    pub expected_q: f64,
    pub soft_value: f64,
    pub beta_h: f64,
    pub stages_to_go: usize,
}

enum Backup {
    Soft,
    Mean,
}

/// Shared multiplicative-weights backward pass. For every initial state in
/// `optimistic`, runs the recursion `Q_h = rt_h + F V_{h+1}` with either the
/// soft value `V_h(s) = (1/beta_h) log sum_a pi exp(beta_h Q_h)` or the mean
/// value `V_h(s) = <pi_h(.|s), Q_h(s, .)>`, and rewrites the policy rows of
/// the states in that initial state's partition as
/// `pi^{t+1} proportional to pi^t exp(beta_h Q_h)`.
fn mwu_backward_update(
    game: &PreferenceGame,
    pi: &Policy,
    optimistic: &[(usize, Array2<f64>)],
    beta: f64,
    backup: Backup,
    mut sandwich: Option<&mut Vec<SandwichSample>>,
) -> Result<Policy> {
    let (s_count, a_count, horizon) = (game.num_states(), game.num_actions(), game.horizon());
    let mut next = pi.clone();
    for (s1, rt) in optimistic {
        let mut v: Array1<f64> = Array1::zeros(s_count);
        for h in (0..horizon).rev() {
            let stages_to_go = horizon - h;
            let beta_h = beta / stages_to_go as f64;
            let q = rt.column(h).to_owned() + game.transition().dot(&v);
            for state in 0..s_count {
                let q_row = q.slice(s![state * a_count..(state + 1) * a_count]);
                let pi_row = pi.stage(h).row(state);

                let mut m = f64::NEG_INFINITY;
                let mut mean_q = 0.0;
                for a in 0..a_count {
                    mean_q += pi_row[a] * q_row[a];
                    let x = pi_row[a].ln() + beta_h * q_row[a];
                    if x > m {
                        m = x;
                    }
                }
                let lse = m + (0..a_count)
                    .map(|a| (pi_row[a].ln() + beta_h * q_row[a] - m).exp())
                    .sum::<f64>()
                    .ln();
                v[state] = match backup {
                    Backup::Soft => lse / beta_h,
                    Backup::Mean => mean_q,
                };
                if !v[state].is_finite() {
                    return Err(Error::Internal(format!(
                        "non-finite value at stage {h}, state {state}"
                    )));
                }
                if let Some(samples) = sandwich.as_deref_mut() {
                    samples.push(SandwichSample {
                        stage: h,
                        state,
                        expected_q: mean_q,
                        soft_value: lse / beta_h,
                        beta_h,
                        stages_to_go,
                    });
                }
                if game.init_partition()[state] == *s1 {
                    let mut out = next.stage_mut(h).row_mut(state);
                    for a in 0..a_count {
                        out[a] = (pi_row[a].ln() + beta_h * q_row[a] - lse).exp();
                    }
                }
            }
        }
    }
    Ok(next)
}

fn optimistic_rewards_per_init(
    game: &PreferenceGame,
    state: &SolverState,
) -> Result<Vec<(usize, Array2<f64>)>> {
    state
        .occupancy
        .iter()
        .map(|(s1, occ)| {
            let prev = state.prev_occupancy.get(s1).ok_or_else(|| {
                Error::Shape(format!("previous occupancy missing initial state {s1}"))
            })?;
            let weights = 2.0 * occ.matrix() - prev.matrix();
            Ok((s1, game.reward().dot(&weights.t())))
        })
        .collect()
}

/// Optimistic update with the exact soft-Bellman recursion.
pub fn ompo_exact_step(game: &PreferenceGame, state: &SolverState, beta: f64) -> Result<Policy> {
    let optimistic = optimistic_rewards_per_init(game, state)?;
    mwu_backward_update(game, &state.policy, &optimistic, beta, Backup::Soft, None)
}

/// Same as [`ompo_exact_step`] but also returns the per-state soft-value
/// sandwich samples encountered during the recursion.
pub fn ompo_exact_step_diagnostics(
    game: &PreferenceGame,
    state: &SolverState,
    beta: f64,
) -> Result<(Policy, Vec<SandwichSample>)> {
    let optimistic = optimistic_rewards_per_init(game, state)?;
    let mut samples = Vec::new();
    let policy = mwu_backward_update(
        game,
        &state.policy,
        &optimistic,
        beta,
        Backup::Soft,
        Some(&mut samples),
    )?;
    Ok((policy, samples))
}

/// Optimistic update with standard (non-soft) action values for the
/// optimistic reward; coincides with the exact step at `H = 1` and tracks it
/// within the log-sum-exp sandwich otherwise.
pub fn ompo_approx_step(game: &PreferenceGame, state: &SolverState, beta: f64) -> Result<Policy> {
    let optimistic = optimistic_rewards_per_init(game, state)?;
    mwu_backward_update(game, &state.policy, &optimistic, beta, Backup::Mean, None)
}

/// Natural actor-critic update
/// `pi^{t+1} proportional to pi^t exp(beta E_{S', A' ~ d_h | s1(s)} Q_h(s, a, S', A'))`
/// with a flat learning rate.
pub fn mpo_step(game: &PreferenceGame, pi: &Policy, beta: f64) -> Result<Policy> {
    if !pi.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    let occupancy = OccupancyMeasure::compute(game, pi)?;
    let (a_count, horizon) = (game.num_actions(), game.horizon());
    let mut next = pi.clone();
    for (s1, occ) in occupancy.iter() {
        let u = expected_q(game, pi, occ)?;
        for h in 0..horizon {
            for state in 0..game.num_states() {
                if game.init_partition()[state] != s1 {
                    continue;
                }
                let pi_row = pi.stage(h).row(state);
                let mut m = f64::NEG_INFINITY;
                for a in 0..a_count {
                    let x = pi_row[a].ln() + beta * u[h][game.sa_index(state, a)];
                    if x > m {
                        m = x;
                    }
                }
                let lse = m + (0..a_count)
                    .map(|a| {
                        (pi_row[a].ln() + beta * u[h][game.sa_index(state, a)] - m).exp()
                    })
                    .sum::<f64>()
                    .ln();
                if !lse.is_finite() {
                    return Err(Error::Internal(format!(
                        "non-finite weights at stage {h}, state {state}"
                    )));
                }
                let mut out = next.stage_mut(h).row_mut(state);
                for a in 0..a_count {
                    out[a] =
                        (pi_row[a].ln() + beta * u[h][game.sa_index(state, a)] - lse).exp();
                }
            }
        }
    }
    Ok(next)
}

/// The trajectory-level mixture policy of an occupancy history:
/// `pi_h(a | s) = sum_t d^t_h(s, a) / sum_t d^t_h(s)`. Its occupancy is the
/// stagewise arithmetic mean of the history.
pub fn averaged_policy(game: &PreferenceGame, history: &[OccupancyMeasure]) -> Result<Policy> {
    let first = history
        .first()
        .ok_or_else(|| Error::Domain("empty occupancy history".into()))?;
    let init_states = first.init_states().to_vec();
    let mut sums: Vec<Array2<f64>> = init_states
        .iter()
        .map(|&s1| first.get(s1).unwrap().matrix().clone())
        .collect();
    for occ in &history[1..] {
        if occ.init_states() != init_states.as_slice() {
            return Err(Error::Domain(
                "occupancy history disagrees on initial states".into(),
            ));
        }
        for (sum, &s1) in sums.iter_mut().zip(&init_states) {
            *sum += occ.get(s1).unwrap().matrix();
        }
    }
    let refs: Vec<&Array2<f64>> = sums.iter().collect();
    Ok(policy_from_weights(game, &refs))
}

/// Which exact action values the regression update fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionTarget {
    /// Standard action values for the optimistic reward.
    Ompo,
    /// Expected pairwise action values under the self-play occupancy.
    Mpo,
}

/// The practical squared-loss policy update at tabular scale: full-batch
/// gradient descent on logits for the target
/// `log pi(a|s) - log pi^t(a|s) = beta Q_h(s, a) - beta (H - h + 1) / 2`,
/// i.e. the multiplicative-weights update with the log-partition replaced by
/// its tie-game value. Exact action values stand in for the Monte-Carlo
/// estimates of the sampled algorithm, and the per-action residuals are
/// weighted by `pi^t(a|s)`, the distribution the sampled algorithm draws
/// its regression batch from.
pub fn regression_update(
    game: &PreferenceGame,
    state: &SolverState,
    beta: f64,
    options: &RegressionOptions,
    target: RegressionTarget,
) -> Result<Policy> {
    if options.steps == 0 {
        return Ok(state.policy.clone());
    }
    let (a_count, horizon) = (game.num_actions(), game.horizon());
    let pi = &state.policy;
    let mut next = pi.clone();
    for (s1, occ) in state.occupancy.iter() {
        let q = match target {
            RegressionTarget::Mpo => expected_q(game, pi, occ)?,
            RegressionTarget::Ompo => {
                let prev = state.prev_occupancy.get(s1).ok_or_else(|| {
                    Error::Shape(format!("previous occupancy missing initial state {s1}"))
                })?;
                let weights = 2.0 * occ.matrix() - prev.matrix();
                let rt = game.reward().dot(&weights.t());
                let rewards: Vec<Array1<f64>> =
                    (0..horizon).map(|h| rt.column(h).to_owned()).collect();
                policy_q_values(game, pi, &rewards)?
            }
        };
        for h in 0..horizon {
            let bias = beta * (horizon - h) as f64 / 2.0;
            for s in 0..game.num_states() {
                if game.init_partition()[s] != s1 {
                    continue;
                }
                let pi_row = pi.stage(h).row(s);
                let active: Vec<usize> = (0..a_count).filter(|&a| pi_row[a] > 0.0).collect();
                let w: Vec<f64> = active.iter().map(|&a| pi_row[a]).collect();
                let mut z: Vec<f64> = active.iter().map(|&a| pi_row[a].ln()).collect();
                let y: Vec<f64> = active
                    .iter()
                    .map(|&a| pi_row[a].ln() + beta * q[h][game.sa_index(s, a)] - bias)
                    .collect();
                for _ in 0..options.steps {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                    let p: Vec<f64> = z.iter().map(|&x| (x - lse).exp()).collect();
                    let res: Vec<f64> = z
                        .iter()
                        .zip(&y)
                        .map(|(&zi, &yi)| zi - lse - yi)
                        .collect();
                    let weighted_sum: f64 = res.iter().zip(&w).map(|(r, wi)| r * wi).sum();
                    for i in 0..z.len() {
                        z[i] -=
                            options.step_size * 2.0 * (w[i] * res[i] - p[i] * weighted_sum);
                    }
                }
                if z.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Internal(format!(
                        "non-finite regression loss at stage {h}, state {s}"
                    )));
                }
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                let mut out = next.stage_mut(h).row_mut(s);
                out.fill(0.0);
                for (i, &a) in active.iter().enumerate() {
                    out[a] = (z[i] - lse).exp();
                }
            }
        }
    }
    Ok(next)
}

/// One metrics record, taken after `iteration` completed policy updates.
/// The averaged iterate mixes the occupancies of the first `iteration`
/// policies (the pre-update iterates, matching the averaged-output
/// construction of the convergence analysis).
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iteration: usize,
    pub last_iterate_exploitability: f64,
    pub averaged_exploitability: f64,
    pub nash_gap: f64,
    pub self_play_value: f64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub last_policy: Policy,
    pub averaged_policy: Policy,
}

/// Runs the configured algorithm for `iterations` self-play updates,
/// recording exploitability metrics every `eval_every` iterations (plus the
/// final one). All variants are deterministic; the exact variants do not
/// consume the seed at all.
pub fn run_solver(game: &PreferenceGame, config: &SolverConfig) -> Result<SolverTrace> {
    config.check()?;
    let violations = game.validate();
    if !violations.is_empty() {
        return Err(Error::Domain(format!(
            "game fails validation ({} violation(s)); first: {}",
            violations.len(),
            violations[0]
        )));
    }
    let beta = config.resolved_beta(game);
    let mut state = SolverState::fresh(game)?;
    let init_states = state.occupancy.init_states().to_vec();
    let mut occupancy_sums: Vec<Array2<f64>> = init_states
        .iter()
        .map(|_| Array2::zeros((game.horizon(), game.num_pairs())))
        .collect();

    let started = Instant::now();
    let mut records = Vec::new();
    let mut averaged = state.policy.clone();
    for t in 1..=config.iterations {
        for (sum, &s1) in occupancy_sums.iter_mut().zip(&init_states) {
            *sum += state.occupancy.get(s1).unwrap().matrix();
        }
        let next = match config.algorithm {
            Algorithm::OmpoExact => ompo_exact_step(game, &state, beta)?,
            Algorithm::OmpoApprox => ompo_approx_step(game, &state, beta)?,
            Algorithm::Mpo => mpo_step(game, &state.policy, beta)?,
            Algorithm::OmpoRegression => {
                regression_update(game, &state, beta, &config.regression, RegressionTarget::Ompo)?
            }
            Algorithm::MpoRegression => {
                regression_update(game, &state, beta, &config.regression, RegressionTarget::Mpo)?
            }
        };
        state.advance(game, next)?;

        if t % config.eval_every == 0 || t == config.iterations {
            let refs: Vec<&Array2<f64>> = occupancy_sums.iter().collect();
            averaged = policy_from_weights(game, &refs);
            let (gap_max, _gap_min) = nash_gap(game, &state.policy)?;
            records.push(TraceRecord {
                iteration: t,
                last_iterate_exploitability: exploitability(game, &state.policy)?,
                averaged_exploitability: exploitability(game, &averaged)?,
                nash_gap: gap_max,
                self_play_value: bilinear_objective(game, &state.occupancy, &state.occupancy)?,
                elapsed: started.elapsed(),
            });
        }
    }
    Ok(SolverTrace {
        records,
        last_policy: state.policy,
        averaged_policy: averaged,
    })
}

/// Explicit max- and min-player optimistic updates, without exploiting the
/// player-symmetry shortcut. The max player ascends on `R` weighted by the
/// min player's extrapolated occupancy; the min player descends on its own
/// induced reward, which is the same soft update on `-R^T` weights. Returns
/// the two policy sequences (one entry per iteration).
pub fn run_two_player_ompo(
    game: &PreferenceGame,
    beta: f64,
    iterations: usize,
) -> Result<(Vec<Policy>, Vec<Policy>)> {
    let mut max_state = SolverState::fresh(game)?;
    let mut min_state = SolverState::fresh(game)?;
    let mut max_seq = Vec::with_capacity(iterations);
    let mut min_seq = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let max_rewards: Vec<(usize, Array2<f64>)> = min_state
            .occupancy
            .iter()
            .map(|(s1, occ)| {
                let prev = min_state.prev_occupancy.get(s1).unwrap();
                let weights = 2.0 * occ.matrix() - prev.matrix();
                (s1, game.reward().dot(&weights.t()))
            })
            .collect();
        let min_rewards: Vec<(usize, Array2<f64>)> = max_state
            .occupancy
            .iter()
            .map(|(s1, occ)| {
                let prev = max_state.prev_occupancy.get(s1).unwrap();
                let weights = 2.0 * occ.matrix() - prev.matrix();
                (s1, -game.reward().t().dot(&weights.t()))
            })
            .collect();
        let new_max = mwu_backward_update(
            game,
            &max_state.policy,
            &max_rewards,
            beta,
            Backup::Soft,
            None,
        )?;
        let new_min = mwu_backward_update(
            game,
            &min_state.policy,
            &min_rewards,
            beta,
            Backup::Soft,
            None,
        )?;
        max_state.advance(game, new_max)?;
        min_state.advance(game, new_min)?;
        max_seq.push(max_state.policy.clone());
        min_seq.push(min_state.policy.clone());
    }
    Ok((max_seq, min_seq))
}
