use serde::{Deserialize, Serialize};

use super::objective::{FrameEval, SceneObjective};
use super::{need_mask, total_loss, update_lambda, NeedMask};
use crate::bark::{band_psd, NUM_BANDS};
use crate::error::{Error, Result};
use crate::masking::{analyze_thresholds, MaskingOptions};
use crate::shaping::{
    clamp_gain, finalize_gains, smooth_gains, smooth_gains_adjoint, zero_inactive, GainMatrix,
    NUM_GAIN_BANDS,
};
use crate::signal_io::Spectrogram;

/// Fraction of the predicted first-order decrease a step must achieve.
const SUFFICIENT_DECREASE: f64 = 0.8;
/// Line searches give up once the step falls below this fraction of
/// `step_size`.
const MIN_STEP_FRACTION: f64 = 1e-6;

/// Settings of the direct gain optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Level budget in dBA; `None` disables the constraint.
    pub delta_p_max: Option<f64>,
    /// Initial step of each line search, dB.
    pub step_size: f64,
    /// Ascent rate of the multiplier.
    pub lambda_rate: f64,
    pub max_iters: usize,
    /// Stop once no gain moves by more than this many dB.
    pub tolerance: f64,
    /// Bands around a needed band that may be actuated.
    pub reach_radius: usize,
    /// Optimise through the temporal gain smoother.
    pub smoothing_in_loop: bool,
    pub smoothing_beta: f64,
    pub masking: MaskingOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta_p_max: None,
            step_size: 0.5,
            lambda_rate: 1e-3,
            max_iters: 2000,
            tolerance: 1e-3,
            reach_radius: 3,
            smoothing_in_loop: false,
            smoothing_beta: 0.8,
            masking: MaskingOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(self.lambda_rate > 0.0) {
            return Err(Error::Config("lambda_rate must be positive".into()));
        }
        if self.reach_radius < 1 {
            return Err(Error::Config("reach_radius must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing_beta) {
            return Err(Error::Config("smoothing_beta must lie in [0, 1)".into()));
        }
        if let Some(d) = self.delta_p_max {
            if !(d >= 0.0) {
                return Err(Error::Config("delta_p_max must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// One optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub l0: f64,
    pub l_power: f64,
    /// Multiplier used during this iteration.
    pub lambda: f64,
    pub total: f64,
    /// Largest gain change applied after this evaluation, dB.
    pub max_change: f64,
}

/// Per-iteration history. The last row evaluates the returned gains.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Optimises the gains of one music/noise scene.
///
/// Each iteration composes responses from the current gains, re-evaluates
/// the processed band powers, tonality and thresholds, and takes a projected
/// gradient step on `L0 − λ·(ΔP_max − L_power)` (zeroing inactive bands and
/// clamping to [-5, 10] dB). The multiplier starts at zero and follows a
/// projected ascent step every iteration when a budget is set.
pub fn solve_gains(
    music: &Spectrogram,
    noise: &Spectrogram,
    config: &SolverConfig,
) -> Result<(GainMatrix, SolverTrace)> {
    config.validate()?;
    if music.n_frames() != noise.n_frames() {
        return Err(Error::Shape(format!(
            "music has {} frames, noise has {}",
            music.n_frames(),
            noise.n_frames()
        )));
    }
    let (_, initial) = analyze_thresholds(music, &config.masking);
    let noise_psd = band_psd(noise);
    let mask = need_mask(&noise_psd, &initial, config.reach_radius);
    let objective = SceneObjective::new(music, &noise_psd, config.masking);
    solve_with_mask(&objective, &mask, config)
}

struct FrameState {
    gains: [f64; NUM_GAIN_BANDS],
    eval: FrameEval,
    step: f64,
    stalled_at: Option<f64>,
}

fn frame_value(e: &FrameEval, lambda: f64) -> f64 {
    e.l0_sum + lambda * NUM_BANDS as f64 * e.level_change_db.abs()
}

fn frame_gradient(e: &FrameEval, lambda: f64, active: &[bool]) -> [f64; NUM_GAIN_BANDS] {
    let sign = if e.level_change_db > 0.0 {
        1.0
    } else if e.level_change_db < 0.0 {
        -1.0
    } else {
        0.0
    };
    let w = lambda * NUM_BANDS as f64 * sign;
    let mut g = [0.0; NUM_GAIN_BANDS];
    for b in 0..NUM_GAIN_BANDS {
        if active[b] {
            g[b] = e.grad_l0[b] + w * e.grad_level[b];
        }
    }
    g
}

fn project(value: f64, active: bool) -> f64 {
    if active {
        clamp_gain(value)
    } else {
        0.0
    }
}

/// Runs the optimizer on a prepared objective and activity mask.
pub fn solve_with_mask(
    objective: &SceneObjective,
    mask: &NeedMask,
    config: &SolverConfig,
) -> Result<(GainMatrix, SolverTrace)> {
    config.validate()?;
    let n_frames = objective.n_frames();
    if mask.n_frames() != n_frames {
        return Err(Error::Shape("need mask and objective disagree on frame count".into()));
    }
    if config.smoothing_in_loop {
        return solve_smoothed(objective, mask, config);
    }

    let zero = [0.0; NUM_GAIN_BANDS];
    let mut states: Vec<FrameState> = (0..n_frames)
        .map(|n| FrameState {
            gains: zero,
            eval: objective.frame(n).evaluate(&zero),
            step: config.step_size,
            stalled_at: None,
        })
        .collect();
    let movable: Vec<bool> = (0..n_frames).map(|n| mask.active_row(n).iter().any(|&a| a)).collect();

    let mut trace = SolverTrace::default();
    let mut lambda = 0.0;
    let mut iteration = 0;
    while iteration < config.max_iters {
        let (l0, l_power) = scene_losses(&states);
        let total = match config.delta_p_max {
            Some(d) => total_loss(l0, l_power, lambda, d),
            None => l0,
        };
        if !total.is_finite() {
            log::error!("solver trace before divergence: {:?}", trace.rows);
            return Err(Error::Diverged {
                iteration,
                reason: format!("loss is {total} (L0 {l0}, L_power {l_power}, lambda {lambda})"),
            });
        }

        let max_change = states
            .iter_mut()
            .enumerate()
            .filter(|(n, _)| movable[*n])
            .map(|(n, state)| step_frame(objective, mask.active_row(n), state, lambda, config, n))
            .fold(0.0, f64::max);

        trace.rows.push(TraceRow {
            iteration,
            l0,
            l_power,
            lambda,
            total,
            max_change,
        });
        iteration += 1;

        let satisfied = config
            .delta_p_max
            .map_or(true, |d| l_power <= d + config.tolerance);
        if let Some(d) = config.delta_p_max {
            lambda = update_lambda(lambda, l_power, d, config.lambda_rate);
        }
        if max_change < config.tolerance && satisfied {
            break;
        }
    }

    let (l0, l_power) = scene_losses(&states);
    trace.rows.push(TraceRow {
        iteration,
        l0,
        l_power,
        lambda,
        total: config
            .delta_p_max
            .map_or(l0, |d| total_loss(l0, l_power, lambda, d)),
        max_change: 0.0,
    });

    let mut gains = GainMatrix::zeros(n_frames);
    for (n, s) in states.iter().enumerate() {
        gains.row_mut(n).copy_from_slice(&s.gains);
    }
    Ok((gains, trace))
}

fn scene_losses(states: &[FrameState]) -> (f64, f64) {
    let n = states.len().max(1) as f64;
    let (a, b) = states.iter().fold((0.0, 0.0), |(a, b), s| {
        (a + s.eval.l0_sum, b + s.eval.level_change_db.abs())
    });
    (a / (n * NUM_BANDS as f64), b / n)
}

/// Projected gradient step with backtracking on one frame. Returns the
/// largest gain change.
fn step_frame(
    objective: &SceneObjective,
    active: &[bool],
    state: &mut FrameState,
    lambda: f64,
    config: &SolverConfig,
    n: usize,
) -> f64 {
    if state.stalled_at == Some(lambda) {
        return 0.0;
    }
    let grad = frame_gradient(&state.eval, lambda, active);
    let current = frame_value(&state.eval, lambda);
    let min_step = config.step_size * MIN_STEP_FRACTION;
    let mut step = state.step;
    while step >= min_step {
        let mut candidate = [0.0; NUM_GAIN_BANDS];
        let mut predicted = 0.0;
        let mut change: f64 = 0.0;
        for b in 0..NUM_GAIN_BANDS {
            candidate[b] = project(state.gains[b] - step * grad[b], active[b]);
            let delta = state.gains[b] - candidate[b];
            predicted += grad[b] * delta;
            change = change.max(delta.abs());
        }
        if predicted <= 0.0 || change == 0.0 {
            break;
        }
        let eval = objective.frame(n).evaluate(&candidate);
        if frame_value(&eval, lambda) <= current - SUFFICIENT_DECREASE * predicted {
            state.gains = candidate;
            state.eval = eval;
            state.step = (2.0 * step).min(config.step_size);
            state.stalled_at = None;
            return change;
        }
        step *= 0.5;
    }
    state.stalled_at = Some(lambda);
    state.step = min_step;
    0.0
}

/// Variant where the applied gains are the temporally smoothed variables;
/// frames are coupled, so the line search runs on the whole scene.
fn solve_smoothed(
    objective: &SceneObjective,
    mask: &NeedMask,
    config: &SolverConfig,
) -> Result<(GainMatrix, SolverTrace)> {
    let n_frames = objective.n_frames();
    let beta = config.smoothing_beta;
    let active = mask.active();
    let effective = |g: &GainMatrix| {
        let mut h = smooth_gains(g, beta);
        zero_inactive(&mut h, active);
        h
    };
    let evaluate = |h: &GainMatrix| -> Vec<FrameEval> {
        (0..n_frames)
            .map(|n| objective.frame(n).evaluate(h.row(n)))
            .collect()
    };
    let value = |evals: &[FrameEval], lambda: f64| -> f64 {
        evals.iter().map(|e| frame_value(e, lambda)).sum()
    };
    let losses = |evals: &[FrameEval]| -> (f64, f64) {
        let n = n_frames.max(1) as f64;
        let (a, b) = evals
            .iter()
            .fold((0.0, 0.0), |(a, b), e| (a + e.l0_sum, b + e.level_change_db.abs()));
        (a / (n * NUM_BANDS as f64), b / n)
    };

    let mut g = GainMatrix::zeros(n_frames);
    let mut evals = evaluate(&effective(&g));
    let mut trace = SolverTrace::default();
    let mut lambda = 0.0;
    let mut step = config.step_size;
    let mut iteration = 0;
    while iteration < config.max_iters {
        let (l0, l_power) = losses(&evals);
        let total = config
            .delta_p_max
            .map_or(l0, |d| total_loss(l0, l_power, lambda, d));
        if !total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                reason: format!("loss is {total}"),
            });
        }
        let mut grad_h = GainMatrix::zeros(n_frames);
        for (n, e) in evals.iter().enumerate() {
            grad_h
                .row_mut(n)
                .copy_from_slice(&frame_gradient(e, lambda, mask.active_row(n)));
        }
        let mut grad = smooth_gains_adjoint(&grad_h, beta);
        zero_inactive(&mut grad, active);

        let current = value(&evals, lambda);
        let mut max_change: f64 = 0.0;
        let min_step = config.step_size * MIN_STEP_FRACTION;
        let mut trial = step;
        while trial >= min_step {
            let mut candidate = g.clone();
            let mut predicted = 0.0;
            let mut change: f64 = 0.0;
            for (i, c) in candidate.as_mut_slice().iter_mut().enumerate() {
                let old = *c;
                *c = project(old - trial * grad.as_slice()[i], active[i]);
                predicted += grad.as_slice()[i] * (old - *c);
                change = change.max((old - *c).abs());
            }
            if predicted <= 0.0 || change == 0.0 {
                break;
            }
            let cand_evals = evaluate(&effective(&candidate));
            if value(&cand_evals, lambda) <= current - SUFFICIENT_DECREASE * predicted {
                g = candidate;
                evals = cand_evals;
                max_change = change;
                step = (2.0 * trial).min(config.step_size);
                break;
            }
            trial *= 0.5;
        }

        trace.rows.push(TraceRow {
            iteration,
            l0,
            l_power,
            lambda,
            total,
            max_change,
        });
        iteration += 1;
        let satisfied = config
            .delta_p_max
            .map_or(true, |d| l_power <= d + config.tolerance);
        if let Some(d) = config.delta_p_max {
            lambda = update_lambda(lambda, l_power, d, config.lambda_rate);
        }
        if max_change < config.tolerance && satisfied {
            break;
        }
    }
    let (l0, l_power) = losses(&evals);
    trace.rows.push(TraceRow {
        iteration,
        l0,
        l_power,
        lambda,
        total: config
            .delta_p_max
            .map_or(l0, |d| total_loss(l0, l_power, lambda, d)),
        max_change: 0.0,
    });
    Ok((finalize_gains(&g, active, Some(beta)), trace))
}
