use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Signal, HOP, NUM_BINS, SAMPLE_RATE, WINDOW_LEN};
use crate::error::{Error, Result};

/// Synthesis samples whose summed squared window falls below this value are
/// treated as uncovered by any frame.
const COVERAGE_EPS: f64 = 1e-3;

/// Periodic Hann window of length `WINDOW_LEN`.
pub(crate) fn hann() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..WINDOW_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WINDOW_LEN as f64).cos())
            .collect()
    })
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans() -> &'static Plans {
    static PLANS: OnceLock<Plans> = OnceLock::new();
    PLANS.get_or_init(|| {
        let mut planner = FftPlanner::new();
        Plans {
            forward: planner.plan_fft_forward(WINDOW_LEN),
            inverse: planner.plan_fft_inverse(WINDOW_LEN),
        }
    })
}

/// One-sided complex STFT, frames stored row-major (`n_frames × NUM_BINS`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    source_len: usize,
}

impl Spectrogram {
    /// Wraps raw frame data. `source_len` is the length of the signal the
    /// frames were taken from and is used by synthesis.
    pub fn from_frames(data: Vec<Complex64>, n_frames: usize, source_len: usize) -> Result<Self> {
        if data.len() != n_frames * NUM_BINS {
            return Err(Error::Shape(format!(
                "{} values do not form {n_frames} frames of {NUM_BINS} bins",
                data.len()
            )));
        }
        Ok(Spectrogram {
            data,
            n_frames,
            source_len,
        })
    }

    pub fn zeros(n_frames: usize, source_len: usize) -> Self {
        Spectrogram {
            data: vec![Complex64::new(0.0, 0.0); n_frames * NUM_BINS],
            n_frames,
            source_len,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        NUM_BINS
    }

    pub fn window_len(&self) -> usize {
        WINDOW_LEN
    }

    pub fn hop(&self) -> usize {
        HOP
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        &self.data[n * NUM_BINS..(n + 1) * NUM_BINS]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.data[n * NUM_BINS..(n + 1) * NUM_BINS]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(NUM_BINS)
    }

    /// Squared magnitudes of frame `n`.
    pub fn frame_power(&self, n: usize) -> Vec<f64> {
        self.frame(n).iter().map(|c| c.norm_sqr()).collect()
    }

    /// Returns a copy with every bin multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Spectrogram {
        Spectrogram {
            data: self.data.iter().map(|c| c * gain).collect(),
            n_frames: self.n_frames,
            source_len: self.source_len,
        }
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < WINDOW_LEN {
        0
    } else {
        (len - WINDOW_LEN) / HOP + 1
    }
}

/// Short-time Fourier transform with a periodic Hann window, 2048-point
/// frames and a 512-sample hop. Analysis starts at sample 0 without padding.
pub fn stft(signal: &Signal) -> Result<Spectrogram> {
    let x = signal.samples();
    if x.len() < WINDOW_LEN {
        return Err(Error::SignalTooShort {
            len: x.len(),
            min: WINDOW_LEN,
        });
    }
    let n_frames = frame_count(x.len());
    let window = hann();
    let fft = &plans().forward;
    let mut buf = vec![Complex64::new(0.0, 0.0); WINDOW_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(n_frames * NUM_BINS);
    for n in 0..n_frames {
        let start = n * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..NUM_BINS]);
    }
    Ok(Spectrogram {
        data,
        n_frames,
        source_len: x.len(),
    })
}

/// Weighted overlap-add synthesis. Returns the samples together with a flag
/// per sample telling whether at least one frame covers it.
pub(crate) fn istft_with_coverage(spec: &Spectrogram) -> (Vec<f64>, Vec<bool>) {
    let covered_len = match spec.n_frames {
        0 => 0,
        n => (n - 1) * HOP + WINDOW_LEN,
    };
    let len = spec.source_len.max(covered_len);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let window = hann();
    let ifft = &plans().inverse;
    let mut buf = vec![Complex64::new(0.0, 0.0); WINDOW_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / WINDOW_LEN as f64;
    for n in 0..spec.n_frames {
        let frame = spec.frame(n);
        buf[..NUM_BINS].copy_from_slice(frame);
        // Real-signal symmetry; imaginary parts of DC and Nyquist are dropped.
        buf[0].im = 0.0;
        buf[NUM_BINS - 1].im = 0.0;
        for k in 1..NUM_BINS - 1 {
            buf[WINDOW_LEN - k] = frame[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = n * HOP;
        for i in 0..WINDOW_LEN {
            out[start + i] += buf[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut covered = vec![false; len];
    for ((y, w), c) in out.iter_mut().zip(&norm).zip(covered.iter_mut()) {
        if *w > COVERAGE_EPS {
            *y /= *w;
            *c = true;
        } else {
            *y = 0.0;
        }
    }
    if spec.source_len > 0 {
        out.truncate(spec.source_len);
        covered.truncate(spec.source_len);
    }
    (out, covered)
}

/// Inverse STFT by weighted overlap-add. The output has the length of the
/// analysed signal; samples no frame covers (the first few samples and the
/// tail after the last full frame) are zero.
pub fn istft(spec: &Spectrogram) -> Result<Signal> {
    let (samples, _) = istft_with_coverage(spec);
    Signal::new(samples, SAMPLE_RATE)
}

/// Inverse STFT where uncovered samples are taken from `fallback`.
pub fn istft_or(spec: &Spectrogram, fallback: &Signal) -> Result<Signal> {
    if fallback.len() != spec.source_len {
        return Err(Error::Shape(format!(
            "fallback has {} samples, spectrogram was taken from {}",
            fallback.len(),
            spec.source_len
        )));
    }
    let (mut samples, covered) = istft_with_coverage(spec);
    for ((y, c), x) in samples.iter_mut().zip(&covered).zip(fallback.samples()) {
        if !c {
            *y = *x;
        }
    }
    Signal::new(samples, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, len: usize) -> Signal {
        let s = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Signal::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn frame_count_ten_seconds() {
        assert_eq!(frame_count(441_000), 858);
        let spec = stft(&Signal::new(vec![0.0; 441_000], SAMPLE_RATE).unwrap()).unwrap();
        assert_eq!(spec.n_frames(), 858);
        assert_eq!(spec.n_bins(), 1025);
    }

    #[test]
    fn too_short_is_rejected() {
        let s = Signal::new(vec![0.0; 2047], SAMPLE_RATE).unwrap();
        assert!(matches!(stft(&s), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn dc_bin_equals_window_sum() {
        let s = Signal::new(vec![1.0; 4096], SAMPLE_RATE).unwrap();
        let spec = stft(&s).unwrap();
        let window_sum: f64 = hann().iter().sum();
        assert!((spec.frame(0)[0].norm() - window_sum).abs() < 1e-9);
        assert!((window_sum - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn sine_peak_bin() {
        let spec = stft(&sine(1000.0, 8192)).unwrap();
        let p = spec.frame_power(1);
        let peak = (0..p.len())
            .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
            .unwrap();
        assert_eq!(peak, 46);
    }

    #[test]
    fn zero_and_scaled_synthesis() {
        let spec = Spectrogram::zeros(5, 4096);
        assert!(istft(&spec).unwrap().samples().iter().all(|&v| v == 0.0));

        let x = sine(440.0, 8192);
        let spec = stft(&x).unwrap();
        let y1 = istft(&spec).unwrap();
        let y2 = istft(&spec.scaled(2.0)).unwrap();
        for (a, b) in y1.samples().iter().zip(y2.samples()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fallback_fills_uncovered_edges() {
        let x = sine(300.0, 5000);
        let spec = stft(&x).unwrap();
        let y = istft_or(&spec, &x).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
