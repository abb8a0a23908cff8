//! Per-frame MLP gain predictor trained on the masking objective.

mod model;
mod train;

pub use model::{load_model, save_model, PredictorModel, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    batch_loss, init_model, prepare_scene, train, BatchLog, EpochLog, TrainConfig, TrainingLog,
    TrainingScene,
};

use crate::bark::{BandPsd, NUM_BANDS};
use crate::error::{Error, Result};
use crate::masking::ThresholdMatrix;
use crate::shaping::{finalize_gains, GainMatrix};
use crate::signal_io::Calibration;

pub const FEATURE_DIM: usize = 3 * NUM_BANDS;
/// Features are `(dBFS − CENTER) / SCALE`.
pub const FEATURE_CENTER_DB: f64 = -60.0;
pub const FEATURE_SCALE_DB: f64 = 40.0;

/// Normalised network inputs, `n_frames × 78`: music, noise and threshold
/// band levels relative to a full-scale sine.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_frames: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() % FEATURE_DIM != 0 {
            return Err(Error::Shape(format!(
                "{} feature values is not a multiple of {FEATURE_DIM}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {i}")));
        }
        Ok(FeatureMatrix {
            n_frames: values.len() / FEATURE_DIM,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * FEATURE_DIM..(n + 1) * FEATURE_DIM]
    }
}

/// Builds the feature matrix from band powers of music and noise and the
/// unprocessed music thresholds.
pub fn features(music: &BandPsd, noise: &BandPsd, thresholds: &ThresholdMatrix) -> Result<FeatureMatrix> {
    let n = music.n_frames();
    if noise.n_frames() != n || thresholds.n_frames() != n {
        return Err(Error::Shape("feature inputs disagree on frame count".into()));
    }
    let reference = 10.0 * Calibration::fullscale_sine_power().log10();
    let norm = |db: f64| (db - reference - FEATURE_CENTER_DB) / FEATURE_SCALE_DB;
    let mut values = Vec::with_capacity(n * FEATURE_DIM);
    for f in 0..n {
        values.extend(music.db(f).iter().map(|&v| norm(v)));
        values.extend(noise.db(f).iter().map(|&v| norm(v)));
        values.extend(thresholds.db(f).iter().map(|&v| norm(v)));
    }
    FeatureMatrix::from_values(values)
}

/// Network output followed by the shared masking, smoothing and clamping.
pub fn predict_gains(
    model: &PredictorModel,
    feats: &FeatureMatrix,
    active: &[bool],
    smoothing_beta: Option<f64>,
) -> Result<GainMatrix> {
    let raw = model.forward(feats)?;
    Ok(finalize_gains(&raw, active, smoothing_beta))
}
