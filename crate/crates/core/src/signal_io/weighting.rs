use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{bin_frequency, hann, Spectrogram, NUM_BINS, WINDOW_LEN};

/// Lowest reported frame level.
pub const DBA_FLOOR: f64 = -120.0;

const A_WEIGHT_FLOOR_DB: f64 = -200.0;

fn a_response(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.598_997_f64.powi(2);
    let c2 = 107.652_65_f64.powi(2);
    let c3 = 737.862_23_f64.powi(2);
    let c4 = 12_194.217_f64.powi(2);
    c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// A-weighting in dB, normalised to exactly 0 dB at 1 kHz. Returns -200 dB
/// at and below 0 Hz.
pub fn a_weighting_db(frequency_hz: f64) -> f64 {
    if frequency_hz <= 0.0 {
        return A_WEIGHT_FLOOR_DB;
    }
    let db = 20.0 * (a_response(frequency_hz) / a_response(1000.0)).log10();
    db.max(A_WEIGHT_FLOOR_DB)
}

/// Linear A-weighting power gains for every STFT bin.
pub fn a_weighting_power_gains() -> &'static [f64] {
    static GAINS: OnceLock<Vec<f64>> = OnceLock::new();
    GAINS.get_or_init(|| {
        (0..NUM_BINS)
            .map(|k| 10f64.powf(a_weighting_db(bin_frequency(k)) / 10.0))
            .collect()
    })
}

/// Mapping from digital power to sound pressure level.
///
/// A full-scale sine measures `spl_at_fullscale` dB. Band and frame powers
/// are sums of one-sided |X|² values, so the reference is the one-sided
/// spectral energy of a full-scale sine under the analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub spl_at_fullscale: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            spl_at_fullscale: 100.0,
        }
    }
}

impl Calibration {
    pub fn new(spl_at_fullscale: f64) -> Self {
        Calibration { spl_at_fullscale }
    }

    /// One-sided spectral power of a full-scale sine.
    pub fn fullscale_sine_power() -> f64 {
        static POWER: OnceLock<f64> = OnceLock::new();
        *POWER.get_or_init(|| {
            let sum_sq: f64 = hann().iter().map(|w| w * w).sum();
            WINDOW_LEN as f64 * sum_sq / 4.0
        })
    }

    /// Offset added to `10·log10(power)` to obtain dB SPL.
    pub fn offset_db(&self) -> f64 {
        self.spl_at_fullscale - 10.0 * Self::fullscale_sine_power().log10()
    }

    /// dB SPL of a spectral power, floored at [`DBA_FLOOR`].
    pub fn power_to_db(&self, power: f64) -> f64 {
        if power <= 0.0 {
            return DBA_FLOOR;
        }
        (10.0 * power.log10() + self.offset_db()).max(DBA_FLOOR)
    }

    /// Spectral power corresponding to a level in dB SPL.
    pub fn db_to_power(&self, db: f64) -> f64 {
        10f64.powf((db - self.offset_db()) / 10.0)
    }
}

/// Per-frame A-weighted level.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePowerDba {
    pub values: Vec<f64>,
}

impl FramePowerDba {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over frames above the floor, `None` when every frame is silent.
    pub fn active_mean(&self) -> Option<f64> {
        let active: Vec<f64> = self
            .values
            .iter()
            .copied()
            .filter(|&v| v > DBA_FLOOR)
            .collect();
        (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64)
    }
}

/// A-weighted power of one frame of squared magnitudes.
pub(crate) fn weighted_power(power: &[f64], bins: Option<&[bool]>) -> f64 {
    let gains = a_weighting_power_gains();
    match bins {
        None => power.iter().zip(gains).map(|(p, g)| p * g).sum(),
        Some(mask) => power
            .iter()
            .zip(gains)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((p, g), _)| p * g)
            .sum(),
    }
}

/// Frame levels in dBA: `10·log10(Σ_k w_A(f_k)·|X(n,k)|²)` plus the
/// calibration offset, floored at -120 dBA.
pub fn frame_power_dba(spec: &Spectrogram, calibration: &Calibration) -> FramePowerDba {
    frame_levels(spec, calibration, None)
}

/// Like [`frame_power_dba`], summing only the bins where `bins[k]` is set.
pub fn frame_power_dba_masked(
    spec: &Spectrogram,
    calibration: &Calibration,
    bins: &[bool],
) -> FramePowerDba {
    frame_levels(spec, calibration, Some(bins))
}

fn frame_levels(spec: &Spectrogram, calibration: &Calibration, bins: Option<&[bool]>) -> FramePowerDba {
    let mut power = vec![0.0; NUM_BINS];
    let values = spec
        .frames()
        .map(|frame| {
            for (p, c) in power.iter_mut().zip(frame) {
                *p = c.norm_sqr();
            }
            calibration.power_to_db(weighted_power(&power, bins))
        })
        .collect();
    FramePowerDba { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{stft, Signal, SAMPLE_RATE};
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, len: usize) -> Signal {
        let s = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Signal::new(s, SAMPLE_RATE).unwrap()
    }

    /// Independent evaluation of the IEC 61672 analytic curve with the
    /// customary +2.00 dB normalisation.
    fn iec_a(f: f64) -> f64 {
        let ra = 12194f64.powi(2) * f.powi(4)
            / ((f * f + 20.6f64.powi(2))
                * ((f * f + 107.7f64.powi(2)) * (f * f + 737.9f64.powi(2))).sqrt()
                * (f * f + 12194f64.powi(2)));
        20.0 * ra.log10() + 2.0
    }

    #[test]
    fn reference_points() {
        assert_eq!(a_weighting_db(1000.0), 0.0);
        assert!((a_weighting_db(100.0) - (-19.1)).abs() < 0.05);
        assert_eq!(a_weighting_db(0.0), -200.0);
        for f in [31.5, 63.0, 125.0, 250.0, 500.0, 2000.0, 4000.0, 8000.0, 16000.0] {
            assert!((a_weighting_db(f) - iec_a(f)).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn strictly_increasing_below_500_hz() {
        let mut prev = a_weighting_db(1.0);
        for i in 2..500 {
            let v = a_weighting_db(i as f64);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn fullscale_sine_reads_calibrated_level() {
        let cal = Calibration::default();
        let spec = stft(&sine(1000.0, 1.0, 8192)).unwrap();
        let levels = frame_power_dba(&spec, &cal);
        // Bin 46 sits at 990.5 Hz where A-weighting is about -0.01 dB.
        for v in &levels.values {
            assert!((v - 100.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn amplitude_shift_and_tone_difference() {
        let cal = Calibration::default();
        let x = stft(&sine(1000.0, 0.1, 8192)).unwrap();
        let base = frame_power_dba(&x, &cal);
        let up = frame_power_dba(&x.scaled(10f64.powf(3.0 / 20.0)), &cal);
        for (a, b) in base.values.iter().zip(&up.values) {
            assert!((b - a - 3.0).abs() < 1e-9);
        }
        let y = stft(&sine(100.0, 0.1, 8192)).unwrap();
        let low = frame_power_dba(&y, &cal);
        let diff = base.values[1] - low.values[1];
        let expected = a_weighting_db(1000.0) - a_weighting_db(100.0);
        assert!((diff - expected).abs() < 0.3, "{diff} vs {expected}");
    }

    #[test]
    fn silent_frames_are_floored() {
        let spec = Spectrogram::zeros(3, 4096);
        let levels = frame_power_dba(&spec, &Calibration::default());
        assert!(levels.values.iter().all(|&v| v == DBA_FLOOR));
        assert_eq!(levels.active_mean(), None);
    }
}
