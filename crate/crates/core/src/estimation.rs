//! Trajectory sampling and Monte-Carlo estimators for the pairwise action
//! values, unbiased against the exact dynamic-programming quantities.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::PreferenceGame;
use crate::occupancy::Policy;

/// One (stage, state, action) visit, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryStep {
    pub stage: usize,
    pub state: usize,
    pub action: usize,
}

/// A (possibly mid-episode) rollout running from `start_stage` to the end of
/// the horizon, together with the initial state of its partition.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start_stage: usize,
    pub initial_state: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    /// The step taken at absolute stage `stage`, when covered.
    pub fn at_stage(&self, stage: usize) -> Option<&TrajectoryStep> {
        stage
            .checked_sub(self.start_stage)
            .and_then(|i| self.steps.get(i))
    }
}

/// Where a rollout begins: a stage, a state reachable at that stage, and
/// optionally a forced first action.
#[derive(Debug, Clone, Copy)]
pub struct RolloutStart {
    pub stage: usize,
    pub state: usize,
    pub forced_action: Option<usize>,
}

impl RolloutStart {
    pub fn episode(s1: usize) -> Self {
        Self {
            stage: 0,
            state: s1,
            forced_action: None,
        }
    }

    pub fn at(stage: usize, state: usize, forced_action: Option<usize>) -> Self {
        Self {
            stage,
            state,
            forced_action,
        }
    }
}

/// Point estimate of a Monte-Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub samples: usize,
    pub std_error: f64,
}

/// Samples actions from `policy` and successors from the transition kernel,
/// from `start.stage` through the last stage. A forced action replaces the
/// policy draw at the starting stage only.
pub fn sample_trajectory<R: Rng + ?Sized>(
    game: &PreferenceGame,
    policy: &Policy,
    start: RolloutStart,
    rng: &mut R,
) -> Result<Trajectory> {
    if !policy.matches(game) {
        return Err(Error::Shape("policy does not match game".into()));
    }
    if start.stage >= game.horizon() {
        return Err(Error::Domain(format!(
            "stage {} out of range for horizon {}",
            start.stage,
            game.horizon()
        )));
    }
    if start.state >= game.num_states() {
        return Err(Error::Domain(format!("state {} out of range", start.state)));
    }
    if let Some(a) = start.forced_action {
        if a >= game.num_actions() {
            return Err(Error::Domain(format!("action {a} out of range")));
        }
    }
    let s1 = game.init_partition()[start.state];
    if game.initial_dist()[s1] <= 0.0 {
        return Err(Error::Domain(format!(
            "state {} belongs to initial state {s1}, which has zero probability",
            start.state
        )));
    }
    if !game.stage_reachable(s1)[start.stage][start.state] {
        return Err(Error::Domain(format!(
            "state {} is not reachable at stage {}",
            start.state, start.stage
        )));
    }

    let mut steps = Vec::with_capacity(game.horizon() - start.stage);
    let mut state = start.state;
    for stage in start.stage..game.horizon() {
        let action = match (stage == start.stage, start.forced_action) {
            (true, Some(a)) => a,
            _ => sample_categorical(rng, policy.stage(stage).row(state).as_slice().unwrap()),
        };
        steps.push(TrajectoryStep {
            stage,
            state,
            action,
        });
        if stage + 1 < game.horizon() {
            let row = game.transition().row(game.sa_index(state, action));
            state = sample_categorical(rng, row.as_slice().unwrap());
        }
    }
    Ok(Trajectory {
        start_stage: start.stage,
        initial_state: s1,
        steps,
    })
}

/// Monte-Carlo estimate of the optimistic action value
/// `Q_h(s, a) = 2 E_{(S', A') ~ d^t_h} Q_h^{pi_t, pi_t}(s, a, S', A')
///            -   E_{(S', A') ~ d^{t-1}_h} Q_h^{pi_t, pi_prev}(s, a, S', A')`.
///
/// Each of the `samples` draws uses three independent rollouts: the main one
/// conditioned to start at `(s, a)` at stage `h` under `pi_t`, and two
/// opponents playing full episodes from the initial state of `s`'s
/// partition, one under `pi_t` and one under `pi_prev`. The summand at stage
/// `tau` is `2 r(main, opp) - r(main, opp_prev)`.
pub fn mc_q_ompo<R: Rng + ?Sized>(
    game: &PreferenceGame,
    pi_t: &Policy,
    pi_prev: &Policy,
    h: usize,
    s: usize,
    a: usize,
    samples: usize,
    rng: &mut R,
) -> Result<EstimatorReport> {
    if samples == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    if !pi_prev.matches(game) {
        return Err(Error::Shape("previous policy does not match game".into()));
    }
    if s >= game.num_states() {
        return Err(Error::Domain(format!("state {s} out of range")));
    }
    let s1 = game.init_partition()[s];
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let main = sample_trajectory(game, pi_t, RolloutStart::at(h, s, Some(a)), rng)?;
        let opp = sample_trajectory(game, pi_t, RolloutStart::episode(s1), rng)?;
        let opp_prev = sample_trajectory(game, pi_prev, RolloutStart::episode(s1), rng)?;
        let mut total = 0.0;
        for step in &main.steps {
            let other = opp.at_stage(step.stage).expect("full episode");
            let other_prev = opp_prev.at_stage(step.stage).expect("full episode");
            total += 2.0 * game.reward_at(step.state, step.action, other.state, other.action)
                - game.reward_at(step.state, step.action, other_prev.state, other_prev.action);
        }
        values.push(total);
    }
    Ok(report_from(&values))
}

/// Monte-Carlo estimate of `E_{A' ~ pi_t(.|s)} Q_h^{pi_t, pi_t}(s, a, s, A')`
/// from paired rollouts, both starting at state `s` at stage `h`: the main
/// one with the forced action `a`, the opponent drawing its action from the
/// policy. The summand at stage `tau` is `r(main, opp)`.
pub fn mc_q_mpo<R: Rng + ?Sized>(
    game: &PreferenceGame,
    pi_t: &Policy,
    h: usize,
    s: usize,
    a: usize,
    samples: usize,
    rng: &mut R,
) -> Result<EstimatorReport> {
    if samples == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let main = sample_trajectory(game, pi_t, RolloutStart::at(h, s, Some(a)), rng)?;
        let opp = sample_trajectory(game, pi_t, RolloutStart::at(h, s, None), rng)?;
        let mut total = 0.0;
        for step in &main.steps {
            let other = opp.at_stage(step.stage).expect("same horizon");
            total += game.reward_at(step.state, step.action, other.state, other.action);
        }
        values.push(total);
    }
    Ok(report_from(&values))
}

fn report_from(values: &[f64]) -> EstimatorReport {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // Deterministic summands (tie games, pure rollouts) must report exactly
    // zero spread, which the accumulated mean would blur.
    let spread = values.iter().any(|&v| v != values[0]);
    let std_error = if n > 1 && spread {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    EstimatorReport {
        estimate: if spread { mean } else { values[0] },
        samples: n,
        std_error,
    }
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        if draw < w {
            return i;
        }
        draw -= w;
    }
    last_positive
}
