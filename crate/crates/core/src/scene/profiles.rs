use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral recipe of an ambient noise: a power-law slope between two
/// corner frequencies (12 dB/octave roll-off outside), optional stationary
/// tones and optional slow amplitude modulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecipe {
    pub slope_db_per_octave: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    /// `(nominal frequency, level relative to the noise RMS in dB)`; each
    /// realisation detunes the frequency by up to 3%.
    pub tones: Vec<(f64, f64)>,
    /// `(rate_hz, depth)`.
    pub modulation: Option<(f64, f64)>,
}

impl NoiseRecipe {
    /// Pure pink noise over the audible range.
    pub fn pink() -> Self {
        NoiseRecipe {
            slope_db_per_octave: -3.0,
            low_hz: 20.0,
            high_hz: 22_050.0,
            tones: Vec::new(),
            modulation: None,
        }
    }

    /// Amplitude response at `f` (unnormalised).
    pub fn amplitude(&self, f: f64) -> f64 {
        if f < 1.0 {
            return 0.0;
        }
        let slope = 10f64.powf(self.slope_db_per_octave * (f / 1000.0).log2() / 20.0);
        let low = if f < self.low_hz { (f / self.low_hz).powi(2) } else { 1.0 };
        let high = if f > self.high_hz { (self.high_hz / f).powi(2) } else { 1.0 };
        slope * low * high
    }
}

/// Ambient noise class with its level distribution in dBA.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentProfile {
    pub name: &'static str,
    pub noise_level_mean: f64,
    pub noise_level_std: f64,
    pub recipe: NoiseRecipe,
}

pub const NOISE_LEVEL_MIN_DBA: f64 = 40.0;
pub const NOISE_LEVEL_MAX_DBA: f64 = 95.0;

pub const ENVIRONMENTS: [&str; 6] = [
    "urban",
    "office",
    "construction",
    "beach",
    "transport",
    "restaurant",
];

impl EnvironmentProfile {
    pub fn named(name: &str) -> Result<Self> {
        let recipe = |slope, low, high, tones: &[(f64, f64)], modulation| NoiseRecipe {
            slope_db_per_octave: slope,
            low_hz: low,
            high_hz: high,
            tones: tones.to_vec(),
            modulation,
        };
        let (name, mean, recipe) = match name {
            "urban" => ("urban", 70.0, recipe(-3.0, 30.0, 12_000.0, &[], None)),
            "office" => ("office", 55.0, recipe(-4.0, 40.0, 8_000.0, &[(120.0, -12.0)], None)),
            "construction" => (
                "construction",
                85.0,
                recipe(-1.0, 50.0, 10_000.0, &[(1_500.0, -8.0), (3_100.0, -12.0)], Some((8.0, 0.4))),
            ),
            "beach" => ("beach", 65.0, recipe(-2.0, 100.0, 6_000.0, &[], Some((0.15, 0.5)))),
            "transport" => (
                "transport",
                75.0,
                recipe(-6.0, 40.0, 6_000.0, &[(100.0, -6.0), (200.0, -10.0)], None),
            ),
            "restaurant" => ("restaurant", 70.0, recipe(-1.0, 200.0, 4_000.0, &[], Some((4.0, 0.3)))),
            other => return Err(Error::UnknownEnvironment(other.to_string())),
        };
        Ok(EnvironmentProfile {
            name,
            noise_level_mean: mean,
            noise_level_std: 5.0,
            recipe,
        })
    }
}

/// Passive attenuation as `(frequency Hz, dB)` points, interpolated
/// linearly in log-frequency and held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadphoneProfile {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub const HEADPHONES: [&str; 3] = ["earbud", "closed", "semi-open"];

impl HeadphoneProfile {
    pub fn named(name: &str) -> Result<Self> {
        let points: &[(f64, f64)] = match name {
            "earbud" => &[(500.0, 0.0), (2_000.0, -6.0), (10_000.0, -15.0)],
            "closed" => &[
                (200.0, -3.0),
                (1_000.0, -12.0),
                (4_000.0, -20.0),
                (8_000.0, -25.0),
                (10_000.0, -30.0),
            ],
            "semi-open" => &[(500.0, -1.0), (2_000.0, -4.0), (10_000.0, -10.0)],
            other => return Err(Error::UnknownHeadphone(other.to_string())),
        };
        Ok(HeadphoneProfile {
            name: name.to_string(),
            points: points.to_vec(),
        })
    }

    /// Flat 0 dB curve.
    pub fn transparent() -> Self {
        HeadphoneProfile {
            name: "none".into(),
            points: vec![(1_000.0, 0.0)],
        }
    }

    pub fn attenuation_db(&self, f: f64) -> f64 {
        let first = self.points[0];
        let last = *self.points.last().unwrap();
        if f <= first.0 {
            return first.1;
        }
        if f >= last.0 {
            return last.1;
        }
        let i = self.points.partition_point(|p| p.0 <= f);
        let (f0, a0) = self.points[i - 1];
        let (f1, a1) = self.points[i];
        let t = (f / f0).ln() / (f1 / f0).ln();
        a0 + t * (a1 - a0)
    }
}
