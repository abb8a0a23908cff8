//! Johnston-style simultaneous masking thresholds on the Bark bands.
//!
//! Per frame: band powers are spread across bands with the Schroeder
//! spreading curve and summed in the linear power domain, lowered by a
//! tonality-dependent offset, renormalised by the spreading energy of each
//! band and optionally floored at the absolute threshold of hearing.

use std::f64::consts::LN_10;
use std::sync::OnceLock;

use crate::bark::{power_db, BandPsd, BarkBands, NUM_BANDS};
use crate::signal_io::{Calibration, Spectrogram, NUM_BINS};

/// Spectral flatness (dB) at which a frame counts as fully tonal.
pub const SFM_MAX_DB: f64 = -60.0;
/// Offset for noise-like maskers, dB.
pub const NOISE_MASKER_OFFSET_DB: f64 = 5.5;

const DB_PER_NEPER: f64 = 10.0 / LN_10;

/// Spreading curve in dB for a maskee `delta_bark` bands above the masker.
pub fn spreading_db(delta_bark: i32) -> f64 {
    let x = delta_bark as f64 + 0.474;
    15.81 + 7.5 * x - 17.5 * (1.0 + x * x).sqrt()
}

/// Linear spreading gains `s[maskee][masker]` and their row sums.
#[derive(Debug, Clone)]
pub struct SpreadingMatrix {
    s: [[f64; NUM_BANDS]; NUM_BANDS],
    row_sums: [f64; NUM_BANDS],
}

impl SpreadingMatrix {
    pub fn standard() -> &'static SpreadingMatrix {
        static MATRIX: OnceLock<SpreadingMatrix> = OnceLock::new();
        MATRIX.get_or_init(|| {
            let mut s = [[0.0; NUM_BANDS]; NUM_BANDS];
            let mut row_sums = [0.0; NUM_BANDS];
            for (nu, row) in s.iter_mut().enumerate() {
                for (mu, v) in row.iter_mut().enumerate() {
                    *v = 10f64.powf(spreading_db(nu as i32 - mu as i32) / 10.0);
                }
                row_sums[nu] = row.iter().sum();
            }
            SpreadingMatrix { s, row_sums }
        })
    }

    pub fn get(&self, maskee: usize, masker: usize) -> f64 {
        self.s[maskee][masker]
    }

    /// `K(ν)`: total spreading energy reaching band ν from unit maskers.
    pub fn row_sum(&self, maskee: usize) -> f64 {
        self.row_sums[maskee]
    }

    /// Spread band energy `C = S·B`.
    pub fn spread(&self, bands: &[f64]) -> [f64; NUM_BANDS] {
        let mut c = [0.0; NUM_BANDS];
        for (ci, row) in c.iter_mut().zip(&self.s) {
            *ci = row.iter().zip(bands).map(|(s, b)| s * b).sum();
        }
        c
    }
}

/// Spectral flatness and the derived tonality coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TonalityEstimate {
    pub sfm_db: f64,
    pub alpha: f64,
}

impl TonalityEstimate {
    /// Whether `alpha` lies strictly inside (0, 1), where it varies with the
    /// spectrum.
    pub fn is_unsaturated(&self) -> bool {
        self.sfm_db > SFM_MAX_DB && self.sfm_db < 0.0
    }
}

const SFM_POWER_FLOOR: f64 = 1e-300;

/// Tonality of one frame of squared magnitudes, measured on bins 1..K-1.
/// An all-zero frame yields `alpha = 0`.
pub fn tonality(power: &[f64]) -> TonalityEstimate {
    let bins = &power[1..];
    let n = bins.len() as f64;
    let arith: f64 = bins.iter().sum::<f64>() / n;
    if arith <= 0.0 {
        return TonalityEstimate {
            sfm_db: 0.0,
            alpha: 0.0,
        };
    }
    let mean_ln: f64 = bins.iter().map(|p| p.max(SFM_POWER_FLOOR).ln()).sum::<f64>() / n;
    let sfm_db = (DB_PER_NEPER * (mean_ln - arith.ln())).min(0.0);
    TonalityEstimate {
        sfm_db,
        alpha: (sfm_db / SFM_MAX_DB).clamp(0.0, 1.0),
    }
}

/// Threshold model switches.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingOptions {
    /// Floor thresholds at the absolute threshold of hearing.
    pub abs_floor: bool,
    pub calibration: Calibration,
}

impl Default for MaskingOptions {
    fn default() -> Self {
        MaskingOptions {
            abs_floor: true,
            calibration: Calibration::default(),
        }
    }
}

/// Terhardt's approximation of the threshold in quiet, dB SPL.
pub fn absolute_threshold_db_spl(frequency_hz: f64) -> f64 {
    let f = (frequency_hz / 1000.0).max(0.02);
    3.64 * f.powf(-0.8) - 6.5 * (-0.6 * (f - 3.3).powi(2)).exp() + 1e-3 * f.powi(4)
}

/// Absolute threshold of every band as band power under `calibration`.
pub fn absolute_threshold_powers(calibration: &Calibration) -> [f64; NUM_BANDS] {
    static BAND_DB: OnceLock<[f64; NUM_BANDS]> = OnceLock::new();
    let band_db = BAND_DB.get_or_init(|| {
        let bands = BarkBands::standard();
        std::array::from_fn(|b| absolute_threshold_db_spl(bands.center_hz(b)))
    });
    band_db.map(|db| calibration.db_to_power(db))
}

/// Masking offset in dB for 0-based band `b`.
fn offset_db(alpha: f64, b: usize) -> f64 {
    let band_number = (b + 1) as f64;
    alpha * (14.5 + band_number) + (1.0 - alpha) * NOISE_MASKER_OFFSET_DB
}

/// One frame of thresholds with the intermediate terms kept for
/// differentiation.
#[derive(Debug, Clone)]
pub struct ThresholdFrame {
    /// Final thresholds (linear band power).
    pub linear: [f64; NUM_BANDS],
    /// Thresholds before the absolute floor.
    pub unfloored: [f64; NUM_BANDS],
    /// Whether the absolute floor determines the band's threshold.
    pub floor_active: [bool; NUM_BANDS],
    pub alpha: f64,
}

/// Evaluates the threshold model for one frame of band powers.
pub fn threshold_frame(bands: &[f64], alpha: f64, options: &MaskingOptions) -> ThresholdFrame {
    let spreading = SpreadingMatrix::standard();
    let c = spreading.spread(bands);
    let ath = options
        .abs_floor
        .then(|| absolute_threshold_powers(&options.calibration));
    let mut linear = [0.0; NUM_BANDS];
    let mut unfloored = [0.0; NUM_BANDS];
    let mut floor_active = [false; NUM_BANDS];
    for b in 0..NUM_BANDS {
        let t = c[b] * 10f64.powf(-offset_db(alpha, b) / 10.0) / spreading.row_sum(b);
        unfloored[b] = t;
        linear[b] = t;
        if let Some(ath) = &ath {
            if t < ath[b] {
                linear[b] = ath[b];
                floor_active[b] = true;
            }
        }
    }
    ThresholdFrame {
        linear,
        unfloored,
        floor_active,
        alpha,
    }
}

/// Sensitivities `∂T(ν)/∂B(μ)` of the linear thresholds to the band powers,
/// holding the tonality coefficient fixed. Rows of floor-active bands are
/// zero.
pub fn threshold_jacobian(
    bands: &[f64],
    alpha: f64,
    options: &MaskingOptions,
) -> [[f64; NUM_BANDS]; NUM_BANDS] {
    let frame = threshold_frame(bands, alpha, options);
    let spreading = SpreadingMatrix::standard();
    let mut jac = [[0.0; NUM_BANDS]; NUM_BANDS];
    for (nu, row) in jac.iter_mut().enumerate() {
        if frame.floor_active[nu] {
            continue;
        }
        let scale = 10f64.powf(-offset_db(alpha, nu) / 10.0) / spreading.row_sum(nu);
        for (mu, v) in row.iter_mut().enumerate() {
            *v = spreading.get(nu, mu) * scale;
        }
    }
    jac
}

/// `∂T(ν)/∂alpha` for a frame already evaluated by [`threshold_frame`].
pub fn threshold_alpha_sensitivity(frame: &ThresholdFrame) -> [f64; NUM_BANDS] {
    let mut out = [0.0; NUM_BANDS];
    for (b, v) in out.iter_mut().enumerate() {
        if !frame.floor_active[b] {
            let d_offset = 14.5 + (b + 1) as f64 - NOISE_MASKER_OFFSET_DB;
            *v = -frame.unfloored[b] * d_offset / DB_PER_NEPER;
        }
    }
    out
}

/// Thresholds for every frame of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMatrix {
    n_frames: usize,
    linear: Vec<f64>,
    db: Vec<f64>,
}

impl ThresholdMatrix {
    pub fn from_linear(linear: Vec<f64>) -> Self {
        let db = linear.iter().map(|&v| power_db(v)).collect();
        ThresholdMatrix {
            n_frames: linear.len() / NUM_BANDS,
            linear,
            db,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn linear(&self, n: usize) -> &[f64] {
        &self.linear[n * NUM_BANDS..(n + 1) * NUM_BANDS]
    }

    pub fn db(&self, n: usize) -> &[f64] {
        &self.db[n * NUM_BANDS..(n + 1) * NUM_BANDS]
    }

    pub fn db_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.db.chunks_exact(NUM_BANDS)
    }
}

/// Thresholds from band powers and per-frame tonality coefficients.
pub fn masking_thresholds(psd: &BandPsd, alphas: &[f64], options: &MaskingOptions) -> ThresholdMatrix {
    let mut linear = Vec::with_capacity(psd.n_frames() * NUM_BANDS);
    for (n, &alpha) in alphas.iter().enumerate().take(psd.n_frames()) {
        linear.extend_from_slice(&threshold_frame(psd.linear(n), alpha, options).linear);
    }
    ThresholdMatrix::from_linear(linear)
}

/// Tonality coefficient of every frame.
pub fn frame_tonality(spec: &Spectrogram) -> Vec<TonalityEstimate> {
    let mut power = vec![0.0; NUM_BINS];
    spec.frames()
        .map(|frame| {
            for (p, c) in power.iter_mut().zip(frame) {
                *p = c.norm_sqr();
            }
            tonality(&power)
        })
        .collect()
}

/// Band PSD and thresholds of a spectrogram in one pass.
pub fn analyze_thresholds(spec: &Spectrogram, options: &MaskingOptions) -> (BandPsd, ThresholdMatrix) {
    let psd = crate::bark::band_psd(spec);
    let alphas: Vec<f64> = frame_tonality(spec).iter().map(|t| t.alpha).collect();
    let thresholds = masking_thresholds(&psd, &alphas, options);
    (psd, thresholds)
}
