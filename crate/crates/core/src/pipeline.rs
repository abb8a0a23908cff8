//! Per-scene processing shared by the CLI and the evaluation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bark::{band_psd, BandPsd};
use crate::error::{Error, Result};
use crate::gain_solvers::{estreder_gains, need_mask, solve_with_mask, NeedMask, SceneObjective, SolverConfig, SolverTrace};
use crate::masking::{analyze_thresholds, MaskingOptions, ThresholdMatrix};
use crate::predictor::{features, predict_gains, PredictorModel};
use crate::shaping::{apply_gains, finalize_gains, GainMatrix};
use crate::signal_io::{istft_or, stft, Signal, Spectrogram};

/// Gain source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Unprocessed music.
    None,
    Estreder,
    /// Direct optimisation, optionally with a level budget in dBA.
    Solver { delta_p_max: Option<f64> },
    Predictor,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::None => write!(f, "none"),
            Method::Estreder => write!(f, "estreder"),
            Method::Solver { delta_p_max: None } => write!(f, "solver"),
            Method::Solver { delta_p_max: Some(d) } => write!(f, "solver:{d}"),
            Method::Predictor => write!(f, "predictor"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `none`, `estreder`, `solver`, `solver:<dBA>` or `predictor`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "estreder" => Ok(Method::Estreder),
            "solver" => Ok(Method::Solver { delta_p_max: None }),
            "predictor" => Ok(Method::Predictor),
            _ => match s.strip_prefix("solver:").map(str::parse::<f64>) {
                Some(Ok(d)) if d >= 0.0 => Ok(Method::Solver { delta_p_max: Some(d) }),
                _ => Err(Error::Config(format!("unknown method '{s}'"))),
            },
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by every method. The solver runs with this masking
/// model and reach radius regardless of its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub masking: MaskingOptions,
    pub reach_radius: usize,
    /// Temporal smoothing of estreder and predictor gains; `None` disables.
    pub smoothing_beta: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            masking: MaskingOptions::default(),
            reach_radius: 3,
            smoothing_beta: Some(0.8),
            solver: SolverConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn solver_config(&self, delta_p_max: Option<f64>) -> SolverConfig {
        SolverConfig {
            delta_p_max,
            masking: self.masking,
            reach_radius: self.reach_radius,
            ..self.solver.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reach_radius == 0 {
            return Err(Error::Config("reach_radius must be at least 1".into()));
        }
        if let Some(b) = self.smoothing_beta {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config("smoothing_beta must lie in [0, 1)".into()));
            }
        }
        self.solver_config(None).validate()
    }
}

/// Spectra, band powers, initial thresholds and activity mask of a scene.
#[derive(Debug, Clone)]
pub struct SceneAnalysis {
    pub music_signal: Signal,
    pub music: Spectrogram,
    pub noise: Spectrogram,
    pub music_psd: BandPsd,
    pub noise_psd: BandPsd,
    pub initial: ThresholdMatrix,
    pub mask: NeedMask,
}

pub fn analyze_scene(music: &Signal, noise: &Signal, config: &PipelineConfig) -> Result<SceneAnalysis> {
    if music.len() != noise.len() {
        return Err(Error::Shape(format!(
            "music has {} samples, noise has {}",
            music.len(),
            noise.len()
        )));
    }
    let music_spec = stft(music)?;
    let noise_spec = stft(noise)?;
    let (music_psd, initial) = analyze_thresholds(&music_spec, &config.masking);
    let noise_psd = band_psd(&noise_spec);
    let mask = need_mask(&noise_psd, &initial, config.reach_radius);
    Ok(SceneAnalysis {
        music_signal: music.clone(),
        music: music_spec,
        noise: noise_spec,
        music_psd,
        noise_psd,
        initial,
        mask,
    })
}

/// Output of one method on one scene.
#[derive(Debug, Clone)]
pub struct Processed {
    pub gains: GainMatrix,
    pub spectrogram: Spectrogram,
    pub trace: Option<SolverTrace>,
}

/// Computes the method's final gains and the filtered music spectrogram.
pub fn process(
    analysis: &SceneAnalysis,
    method: Method,
    config: &PipelineConfig,
    model: Option<&PredictorModel>,
) -> Result<Processed> {
    let active = analysis.mask.active();
    let n_frames = analysis.music.n_frames();
    let (gains, trace) = match method {
        Method::None => (GainMatrix::zeros(n_frames), None),
        Method::Estreder => {
            let raw = estreder_gains(&analysis.noise_psd, &analysis.initial);
            (finalize_gains(&raw, active, config.smoothing_beta), None)
        }
        Method::Solver { delta_p_max } => {
            let objective = SceneObjective::new(&analysis.music, &analysis.noise_psd, config.masking);
            let (g, trace) = solve_with_mask(&objective, &analysis.mask, &config.solver_config(delta_p_max))?;
            (finalize_gains(&g, active, None), Some(trace))
        }
        Method::Predictor => {
            let model = model.ok_or_else(|| Error::Config("predictor method needs a model".into()))?;
            let feats = features(&analysis.music_psd, &analysis.noise_psd, &analysis.initial)?;
            (predict_gains(model, &feats, active, config.smoothing_beta)?, None)
        }
    };
    let spectrogram = apply_gains(&analysis.music, &gains)?;
    Ok(Processed {
        gains,
        spectrogram,
        trace,
    })
}

/// Time-domain output; edge samples without full overlap keep the input.
pub fn render(processed: &Processed, analysis: &SceneAnalysis) -> Result<Signal> {
    istft_or(&processed.spectrogram, &analysis.music_signal)
}
