//! Signal containers, WAV I/O, STFT analysis/synthesis and A-weighted
//! level measurement.

mod stft;
mod wav;
mod weighting;

pub use stft::{frame_count, istft, istft_or, stft, Spectrogram};
pub(crate) use stft::hann;
pub use wav::{read_wav, write_wav, BitDepth, WriteReport};
pub use weighting::{
    a_weighting_db, a_weighting_power_gains, frame_power_dba, frame_power_dba_masked,
    Calibration, FramePowerDba, DBA_FLOOR,
};

use crate::error::{Error, Result};

/// Working sample rate of the whole pipeline.
pub const SAMPLE_RATE: u32 = 44_100;
/// Analysis window length in samples.
pub const WINDOW_LEN: usize = 2048;
/// Hop between frames (75% overlap).
pub const HOP: usize = 512;
/// One-sided spectrum size.
pub const NUM_BINS: usize = WINDOW_LEN / 2 + 1;

/// Centre frequency of STFT bin `k` in Hz.
pub fn bin_frequency(k: usize) -> f64 {
    k as f64 * SAMPLE_RATE as f64 / WINDOW_LEN as f64
}

/// Mono signal with full-scale amplitude ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    /// Builds a signal, rejecting non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is not finite")));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns a copy multiplied by a scalar gain.
    pub fn scaled(&self, gain: f64) -> Signal {
        Signal {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Rounds every sample through `f32`, so that the signal survives a
    /// float32 WAV round trip unchanged.
    pub fn quantized_f32(&self) -> Signal {
        Signal {
            samples: self.samples.iter().map(|&s| s as f32 as f64).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
