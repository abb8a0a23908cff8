use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{features, FeatureMatrix, PredictorModel, FEATURE_DIM};
use crate::bark::{band_psd, NUM_BANDS};
use crate::error::{Error, Result};
use crate::gain_solvers::{need_mask, update_lambda, FrameObjective};
use crate::masking::{analyze_thresholds, MaskingOptions};
use crate::shaping::{MAX_GAIN_DB, MIN_GAIN_DB, NUM_GAIN_BANDS};
use crate::signal_io::Spectrogram;

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda_rate: f64,
    pub delta_p_max: Option<f64>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Keep every `frame_stride`-th frame of each scene as a sample.
    pub frame_stride: usize,
    pub reach_radius: usize,
    pub masking: MaskingOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 64,
            lambda_rate: 1e-3,
            delta_p_max: None,
            seed: 0,
            hidden: vec![64, 64],
            frame_stride: 1,
            reach_radius: 3,
            masking: MaskingOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda_rate > 0.0) {
            return Err(Error::Config("learning_rate and lambda_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.frame_stride == 0 || self.reach_radius == 0 {
            return Err(Error::Config(
                "batch_size, frame_stride and reach_radius must be positive".into(),
            ));
        }
        if self.delta_p_max.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::Config("delta_p_max must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![FEATURE_DIM];
        dims.extend(&self.hidden);
        dims.push(NUM_GAIN_BANDS);
        dims
    }
}

pub fn init_model(config: &TrainConfig) -> Result<PredictorModel> {
    PredictorModel::new(config.layer_dims(), config.seed)
}

/// Precomputed features, frame objectives and activity flags of the
/// sampled frames of one scene.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    features: FeatureMatrix,
    objectives: Vec<FrameObjective>,
    active: Vec<bool>,
}

impl TrainingScene {
    pub fn n_frames(&self) -> usize {
        self.objectives.len()
    }
}

pub fn prepare_scene(music: &Spectrogram, noise: &Spectrogram, config: &TrainConfig) -> Result<TrainingScene> {
    if music.n_frames() != noise.n_frames() {
        return Err(Error::Shape("music and noise frame counts differ".into()));
    }
    let (music_psd, thresholds) = analyze_thresholds(music, &config.masking);
    let noise_psd = band_psd(noise);
    let mask = need_mask(&noise_psd, &thresholds, config.reach_radius);
    let all = features(&music_psd, &noise_psd, &thresholds)?;
    let keep: Vec<usize> = (0..music.n_frames()).step_by(config.frame_stride).collect();
    let mut values = Vec::with_capacity(keep.len() * FEATURE_DIM);
    let mut active = Vec::with_capacity(keep.len() * NUM_GAIN_BANDS);
    let mut objectives = Vec::with_capacity(keep.len());
    for &n in &keep {
        values.extend_from_slice(all.row(n));
        active.extend_from_slice(mask.active_row(n));
        objectives.push(FrameObjective::new(music.frame_power(n), noise_psd.db(n), config.masking));
    }
    Ok(TrainingScene {
        features: FeatureMatrix::from_values(values)?,
        objectives,
        active,
    })
}

/// Loss of one mini-batch and its gradient with respect to every parameter.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub l0: f64,
    pub l_power: f64,
    pub total: f64,
    pub grad: Vec<f64>,
}

/// Evaluates `L0 − λ·(ΔP_max − L_power)` over the frames `(scene, frame)`
/// with masked, clamped network gains.
pub fn batch_loss(
    model: &PredictorModel,
    scenes: &[TrainingScene],
    frames: &[(usize, usize)],
    lambda: f64,
    delta_p_max: Option<f64>,
) -> BatchEval {
    let b = frames.len().max(1) as f64;
    let mut grad = vec![0.0; model.params().len()];
    let (mut l0, mut lp) = (0.0, 0.0);
    for &(s, n) in frames {
        let scene = &scenes[s];
        let active = &scene.active[n * NUM_GAIN_BANDS..(n + 1) * NUM_GAIN_BANDS];
        let acts = model.forward_frame(scene.features.row(n));
        let out = acts.layers.last().unwrap();
        let mut gains = [0.0; NUM_GAIN_BANDS];
        for k in 0..NUM_GAIN_BANDS {
            if active[k] {
                gains[k] = out[k].clamp(MIN_GAIN_DB, MAX_GAIN_DB);
            }
        }
        let e = scene.objectives[n].evaluate(&gains);
        l0 += e.l0_sum;
        lp += e.level_change_db.abs();
        let level_weight = match delta_p_max {
            Some(_) if e.level_change_db != 0.0 => lambda * e.level_change_db.signum() / b,
            _ => 0.0,
        };
        let mut d_out = [0.0; NUM_GAIN_BANDS];
        for k in 0..NUM_GAIN_BANDS {
            if active[k] && out[k] > MIN_GAIN_DB && out[k] < MAX_GAIN_DB {
                d_out[k] = e.grad_l0[k] / (b * NUM_BANDS as f64) + level_weight * e.grad_level[k];
            }
        }
        model.backward_frame(&acts, &d_out, &mut grad);
    }
    let l0 = l0 / (b * NUM_BANDS as f64);
    let l_power = lp / b;
    let total = match delta_p_max {
        Some(d) => crate::gain_solvers::total_loss(l0, l_power, lambda, d),
        None => l0,
    };
    BatchEval {
        l0,
        l_power,
        total,
        grad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub l0: f64,
    pub l_power: f64,
    pub total: f64,
    /// Multiplier used for this batch.
    pub lambda: f64,
    /// Multiplier after the ascent step.
    pub lambda_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l0: f64,
    pub l_power: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub batches: Vec<BatchLog>,
}

/// Mini-batch SGD on the constrained loss with one global multiplier
/// updated after every batch. Frames of all scenes are pooled and shuffled
/// each epoch.
pub fn train(
    mut model: PredictorModel,
    scenes: &[TrainingScene],
    config: &TrainConfig,
) -> Result<(PredictorModel, TrainingLog)> {
    config.validate()?;
    let mut pool: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.n_frames()).map(move |n| (s, n)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Config("training set has no frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lambda = 0.0;
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        pool.shuffle(&mut rng);
        let (mut sum_l0, mut sum_lp, mut count) = (0.0, 0.0, 0usize);
        for (batch, frames) in pool.chunks(config.batch_size).enumerate() {
            let eval = batch_loss(&model, scenes, frames, lambda, config.delta_p_max);
            if !eval.total.is_finite() || eval.total.abs() > DIVERGENCE_LIMIT {
                log::error!("training diverged; last epochs: {:?}", log.epochs);
                return Err(Error::Diverged {
                    iteration: step,
                    reason: format!("batch loss {} at epoch {epoch}", eval.total),
                });
            }
            for (p, g) in model.params_mut().iter_mut().zip(&eval.grad) {
                *p -= config.learning_rate * g;
            }
            let lambda_next = match config.delta_p_max {
                Some(d) => update_lambda(lambda, eval.l_power, d, config.lambda_rate),
                None => 0.0,
            };
            log.batches.push(BatchLog {
                epoch,
                batch,
                l0: eval.l0,
                l_power: eval.l_power,
                total: eval.total,
                lambda,
                lambda_next,
            });
            lambda = lambda_next;
            sum_l0 += eval.l0;
            sum_lp += eval.l_power;
            count += 1;
            step += 1;
        }
        let e = EpochLog {
            epoch,
            l0: sum_l0 / count as f64,
            l_power: sum_lp / count as f64,
            lambda,
        };
        log::info!("epoch {epoch}: L0 {:.4} L_power {:.4} lambda {:.5}", e.l0, e.l_power, e.lambda);
        log.epochs.push(e);
    }
    Ok((model, log))
}
