//! Critical-band (Bark) analysis.
//!
//! Bands follow the Zwicker–Terhardt critical-band rate with integer
//! binning: bin `k` belongs to band `floor(z(f_k)) + 1`, capped at 26.
//! Internally band indices are 0-based; [`band_index`] reports the
//! conventional 1-based number.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::signal_io::{bin_frequency, Spectrogram, NUM_BINS, SAMPLE_RATE};

/// Number of analysis bands.
pub const NUM_BANDS: usize = 26;
/// Floor applied to band powers before taking logarithms (-120 dB).
pub const POWER_FLOOR: f64 = 1e-12;
pub const DB_FLOOR: f64 = -120.0;

const NYQUIST: f64 = SAMPLE_RATE as f64 / 2.0;

/// Critical-band rate in Bark.
pub fn bark_of_freq(frequency_hz: f64) -> Result<f64> {
    if !(0.0..=NYQUIST).contains(&frequency_hz) {
        return Err(Error::FrequencyOutOfRange(frequency_hz));
    }
    Ok(bark_unchecked(frequency_hz))
}

fn bark_unchecked(f: f64) -> f64 {
    13.0 * (0.00076 * f).atan() + 3.5 * (f / 7500.0).powi(2).atan()
}

/// 1-based band number of a frequency; inputs are clamped to [0, 22050] Hz.
pub fn band_index(frequency_hz: f64) -> usize {
    let f = frequency_hz.clamp(0.0, NYQUIST);
    ((bark_unchecked(f).floor() as usize) + 1).min(NUM_BANDS)
}

/// Inverse of the critical-band rate by bisection, clamped to Nyquist.
fn freq_of_bark(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z >= bark_unchecked(NYQUIST) {
        return NYQUIST;
    }
    let (mut lo, mut hi) = (0.0, NYQUIST);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if bark_unchecked(mid) < z {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Band layout over the STFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BarkBands {
    bin_to_band: Vec<usize>,
    band_edges_hz: Vec<f64>,
    band_bins: Vec<std::ops::Range<usize>>,
}

impl BarkBands {
    /// The 26-band layout for 44.1 kHz, 2048-point frames.
    pub fn standard() -> &'static BarkBands {
        static BANDS: OnceLock<BarkBands> = OnceLock::new();
        BANDS.get_or_init(|| {
            let bin_to_band: Vec<usize> = (0..NUM_BINS)
                .map(|k| band_index(bin_frequency(k)) - 1)
                .collect();
            let band_edges_hz = (0..=NUM_BANDS)
                .map(|b| if b == NUM_BANDS { NYQUIST } else { freq_of_bark(b as f64) })
                .collect();
            let band_bins = (0..NUM_BANDS)
                .map(|b| {
                    let start = bin_to_band.partition_point(|&x| x < b);
                    let end = bin_to_band.partition_point(|&x| x <= b);
                    start..end
                })
                .collect();
            BarkBands {
                bin_to_band,
                band_edges_hz,
                band_bins,
            }
        })
    }

    pub fn count(&self) -> usize {
        NUM_BANDS
    }

    /// 0-based band of every bin.
    pub fn bin_to_band(&self) -> &[usize] {
        &self.bin_to_band
    }

    /// 27 monotone edges in Hz, from 0 to 22050.
    pub fn band_edges_hz(&self) -> &[f64] {
        &self.band_edges_hz
    }

    /// Contiguous bin range of 0-based band `b`; empty when no bin centre
    /// falls inside the band.
    pub fn bins(&self, b: usize) -> std::ops::Range<usize> {
        self.band_bins[b].clone()
    }

    /// Representative frequency of 0-based band `b`: the point at the band's
    /// mid Bark value, clipped to the band edges.
    pub fn center_hz(&self, b: usize) -> f64 {
        freq_of_bark(b as f64 + 0.5).clamp(self.band_edges_hz[b], self.band_edges_hz[b + 1])
    }

    /// Per-bin membership mask for a set of 0-based bands.
    pub fn bin_mask(&self, bands: std::ops::Range<usize>) -> Vec<bool> {
        self.bin_to_band.iter().map(|b| bands.contains(b)).collect()
    }
}

/// Per-frame band powers for one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPsd {
    n_frames: usize,
    linear: Vec<f64>,
    db: Vec<f64>,
}

/// 10·log10 with the -120 dB floor.
pub fn power_db(linear: f64) -> f64 {
    10.0 * linear.max(POWER_FLOOR).log10()
}

impl BandPsd {
    /// Builds from row-major linear powers (`n_frames × 26`).
    pub fn from_linear(linear: Vec<f64>) -> Result<Self> {
        if linear.len() % NUM_BANDS != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a multiple of {NUM_BANDS} bands",
                linear.len()
            )));
        }
        if linear.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("band powers must be finite and nonnegative".into()));
        }
        let db = linear.iter().map(|&v| power_db(v)).collect();
        Ok(BandPsd {
            n_frames: linear.len() / NUM_BANDS,
            linear,
            db,
        })
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

/// Sums a frame of squared magnitudes into band powers.
pub fn band_powers(power: &[f64], out: &mut [f64; NUM_BANDS]) {
    let bands = BarkBands::standard();
    out.fill(0.0);
    for (p, &b) in power.iter().zip(bands.bin_to_band()) {
        out[b] += p;
    }
}

/// Band PSD of every frame: `Σ_{k in band} |X(n,k)|²`.
pub fn band_psd(spec: &Spectrogram) -> BandPsd {
    let mut linear = Vec::with_capacity(spec.n_frames() * NUM_BANDS);
    let mut power = vec![0.0; NUM_BINS];
    let mut row = [0.0; NUM_BANDS];
    for frame in spec.frames() {
        for (p, c) in power.iter_mut().zip(frame) {
            *p = c.norm_sqr();
        }
        band_powers(&power, &mut row);
        linear.extend_from_slice(&row);
    }
    let db = linear.iter().map(|&v| power_db(v)).collect();
    BandPsd {
        n_frames: spec.n_frames(),
        linear,
        db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn bark_reference_values() {
        assert_eq!(bark_of_freq(0.0).unwrap(), 0.0);
        assert!((bark_of_freq(1000.0).unwrap() - 8.5105).abs() < 1e-3);
        // The formula tops out below 25 Bark at Nyquist.
        assert!((bark_of_freq(22050.0).unwrap() - 24.740).abs() < 1e-3);
        assert!(bark_of_freq(-1.0).is_err());
        assert!(bark_of_freq(22051.0).is_err());
    }

    #[test]
    fn band_numbers() {
        assert_eq!(band_index(0.0), 1);
        assert_eq!(band_index(1000.0), 9);
        assert_eq!(band_index(22050.0), 25);
        assert_eq!(band_index(1e9), 25);
    }

    #[test]
    fn layout_partitions_bins() {
        let bands = BarkBands::standard();
        let edges = bands.band_edges_hz();
        assert_eq!(edges.len(), 27);
        assert!(edges.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(edges[0], 0.0);
        assert_eq!(edges[26], 22050.0);
        assert!((edges[24] - 15_500.0).abs() < 100.0, "{}", edges[24]);
        let total: usize = (0..NUM_BANDS).map(|b| bands.bins(b).len()).sum();
        assert_eq!(total, NUM_BINS);
        for b in 0..NUM_BANDS {
            for k in bands.bins(b) {
                assert_eq!(bands.bin_to_band()[k], b);
            }
        }
        assert!(bands.bins(25).is_empty());
    }

    #[test]
    fn impulse_lands_in_band_nine() {
        let mut spec = Spectrogram::zeros(1, 2048);
        spec.frame_mut(0)[46] = Complex64::new(3.0, 4.0);
        let psd = band_psd(&spec);
        for b in 0..NUM_BANDS {
            if b == 8 {
                assert_eq!(psd.linear(0)[b], 25.0);
            } else {
                assert_eq!(psd.linear(0)[b], 0.0);
            }
        }
    }

    #[test]
    fn zero_frame_is_floored() {
        let psd = band_psd(&Spectrogram::zeros(2, 2560));
        assert!(psd.db(1).iter().all(|&d| d == DB_FLOOR));
    }
}
