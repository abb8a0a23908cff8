//! Spectral envelope shaping: per-band gains become full-resolution filter
//! responses built from overlapping cosine patterns, which are applied to
//! the music in the STFT domain.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::bark::BarkBands;
use crate::error::{Error, Result};
use crate::signal_io::{bin_frequency, Spectrogram, NUM_BINS};

/// Number of actuated bands (Bark bands 1..=24).
pub const NUM_GAIN_BANDS: usize = 24;
pub const MIN_GAIN_DB: f64 = -5.0;
pub const MAX_GAIN_DB: f64 = 10.0;

/// Per-frame gains in dB on the 24 actuated bands, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    n_frames: usize,
    db: Vec<f64>,
}

impl GainMatrix {
    pub fn zeros(n_frames: usize) -> Self {
        GainMatrix {
            n_frames,
            db: vec![0.0; n_frames * NUM_GAIN_BANDS],
        }
    }

    pub fn from_db(db: Vec<f64>) -> Result<Self> {
        if db.len() % NUM_GAIN_BANDS != 0 {
            return Err(Error::Shape(format!(
                "{} gains is not a multiple of {NUM_GAIN_BANDS} bands",
                db.len()
            )));
        }
        Ok(GainMatrix {
            n_frames: db.len() / NUM_GAIN_BANDS,
            db,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.db[n * NUM_GAIN_BANDS..(n + 1) * NUM_GAIN_BANDS]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.db[n * NUM_GAIN_BANDS..(n + 1) * NUM_GAIN_BANDS]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.db.chunks_exact(NUM_GAIN_BANDS)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.db
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.db
    }

    pub fn get(&self, n: usize, band: usize) -> f64 {
        self.db[n * NUM_GAIN_BANDS + band]
    }

    pub fn max_abs(&self) -> f64 {
        self.db.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sparse storage of one pattern: values on a contiguous bin range.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub start: usize,
    pub values: Vec<f64>,
}

impl Pattern {
    pub fn at(&self, k: usize) -> f64 {
        if k < self.start {
            return 0.0;
        }
        self.values.get(k - self.start).copied().unwrap_or(0.0)
    }

    pub fn bins(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.values.len()
    }
}

/// One pattern per actuated band, sampled on the STFT bin frequencies.
#[derive(Debug, Clone)]
pub struct PatternBank {
    patterns: Vec<Pattern>,
}

/// Builds the cosine patterns. Pattern `b` is flat on its own band (level 2
/// for the lowest band, 1 otherwise), rises as a raised cosine across the
/// band below and falls back to 0 across the band above.
pub fn build_patterns(bands: &BarkBands) -> PatternBank {
    let edges = bands.band_edges_hz();
    let patterns = (0..NUM_GAIN_BANDS)
        .map(|b| {
            let peak = if b == 0 { 2.0 } else { 1.0 };
            let lo_band = b.saturating_sub(1);
            let hi_band = (b + 1).min(bands.count() - 1);
            let start = bands.bins(lo_band).start;
            let end = bands.bins(hi_band).end;
            let values = (start..end)
                .map(|k| {
                    let band = bands.bin_to_band()[k];
                    let f = bin_frequency(k);
                    let t = |band: usize| {
                        ((f - edges[band]) / (edges[band + 1] - edges[band])).clamp(0.0, 1.0)
                    };
                    if band == b {
                        peak
                    } else if band + 1 == b {
                        peak * 0.5 * (1.0 - (PI * t(band)).cos())
                    } else if band == b + 1 {
                        peak * 0.5 * (1.0 + (PI * t(band)).cos())
                    } else {
                        0.0
                    }
                })
                .collect();
            Pattern { start, values }
        })
        .collect();
    PatternBank { patterns }
}

impl PatternBank {
    pub fn standard() -> &'static PatternBank {
        static BANK: OnceLock<PatternBank> = OnceLock::new();
        BANK.get_or_init(|| build_patterns(BarkBands::standard()))
    }

    pub fn pattern(&self, band: usize) -> &Pattern {
        &self.patterns[band]
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    /// Response in dB of one frame: `Σ_b g(b)·w_b(k)`.
    pub fn compose_into(&self, gains: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (g, p) in gains.iter().zip(&self.patterns) {
            if *g == 0.0 {
                continue;
            }
            for (o, w) in out[p.bins()].iter_mut().zip(&p.values) {
                *o += g * w;
            }
        }
    }

    /// Transposed pattern product: `out[b] = Σ_k w_b(k)·v[k]`.
    pub fn project(&self, v: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.patterns) {
            *o = v[p.bins()].iter().zip(&p.values).map(|(a, w)| a * w).sum();
        }
    }
}

/// Response of one frame of gains.
pub fn compose_response(gain_row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; NUM_BINS];
    PatternBank::standard().compose_into(gain_row, &mut out);
    out
}

/// Per-frame filter responses in dB (`n_frames × NUM_BINS`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    n_frames: usize,
    db: Vec<f64>,
}

impl ResponseMatrix {
    pub fn from_gains(gains: &GainMatrix) -> Self {
        let bank = PatternBank::standard();
        let mut db = vec![0.0; gains.n_frames() * NUM_BINS];
        for (row, out) in gains.rows().zip(db.chunks_exact_mut(NUM_BINS)) {
            bank.compose_into(row, out);
        }
        ResponseMatrix {
            n_frames: gains.n_frames(),
            db,
        }
    }

    /// A frequency-flat response on every frame.
    pub fn flat(n_frames: usize, db: f64) -> Self {
        ResponseMatrix {
            n_frames,
            db: vec![db; n_frames * NUM_BINS],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.db[n * NUM_BINS..(n + 1) * NUM_BINS]
    }
}

/// Exponential smoothing along time, per band:
/// `g̃(n) = beta·g̃(n-1) + (1-beta)·g(n)`, `g̃(0) = g(0)`.
pub fn smooth_gains(gains: &GainMatrix, beta: f64) -> GainMatrix {
    let mut out = gains.clone();
    for n in 1..gains.n_frames() {
        for b in 0..NUM_GAIN_BANDS {
            let prev = out.get(n - 1, b);
            out.db[n * NUM_GAIN_BANDS + b] = beta * prev + (1.0 - beta) * gains.get(n, b);
        }
    }
    out
}

/// Adjoint of [`smooth_gains`]: maps a gradient with respect to the
/// smoothed gains back to the raw gains.
pub fn smooth_gains_adjoint(grad: &GainMatrix, beta: f64) -> GainMatrix {
    let n_frames = grad.n_frames();
    let mut out = GainMatrix::zeros(n_frames);
    if n_frames == 0 {
        return out;
    }
    // u(n) accumulates ∂L/∂g̃(n) including contributions from later frames.
    let mut carry = [0.0; NUM_GAIN_BANDS];
    for n in (0..n_frames).rev() {
        for b in 0..NUM_GAIN_BANDS {
            let u = grad.get(n, b) + carry[b];
            let coeff = if n == 0 { 1.0 } else { 1.0 - beta };
            out.db[n * NUM_GAIN_BANDS + b] = coeff * u;
            carry[b] = beta * u;
        }
    }
    out
}

pub fn clamp_gain(g: f64) -> f64 {
    g.clamp(MIN_GAIN_DB, MAX_GAIN_DB)
}

/// Restricts every gain to [-5, +10] dB.
pub fn clamp_gains(gains: &GainMatrix) -> GainMatrix {
    GainMatrix {
        n_frames: gains.n_frames,
        db: gains.db.iter().map(|&g| clamp_gain(g)).collect(),
    }
}

/// Output stage shared by every gain source: inactive bands are zeroed,
/// gains are optionally smoothed (after which inactive bands are zeroed
/// again) and finally clamped.
pub fn finalize_gains(raw: &GainMatrix, active: &[bool], smoothing_beta: Option<f64>) -> GainMatrix {
    let mut g = raw.clone();
    zero_inactive(&mut g, active);
    if let Some(beta) = smoothing_beta.filter(|&b| b > 0.0) {
        g = smooth_gains(&g, beta);
        zero_inactive(&mut g, active);
    }
    clamp_gains(&g)
}

pub(crate) fn zero_inactive(gains: &mut GainMatrix, active: &[bool]) {
    for (g, &a) in gains.db.iter_mut().zip(active) {
        if !a {
            *g = 0.0;
        }
    }
}

/// Multiplies every bin by `10^(db/20)`.
pub fn apply_response(spec: &Spectrogram, response: &ResponseMatrix) -> Result<Spectrogram> {
    if spec.n_frames() != response.n_frames() {
        return Err(Error::Shape(format!(
            "spectrogram has {} frames, response has {}",
            spec.n_frames(),
            response.n_frames()
        )));
    }
    let mut out = spec.clone();
    for n in 0..spec.n_frames() {
        let resp = response.row(n);
        for (x, db) in out.frame_mut(n).iter_mut().zip(resp) {
            *x *= 10f64.powf(db / 20.0);
        }
    }
    Ok(out)
}

/// Composes responses from gains and applies them.
pub fn apply_gains(spec: &Spectrogram, gains: &GainMatrix) -> Result<Spectrogram> {
    apply_response(spec, &ResponseMatrix::from_gains(gains))
}
