use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::profiles::{HeadphoneProfile, NoiseRecipe};
use crate::error::Result;
use crate::signal_io::{bin_frequency, istft, stft, Signal, SAMPLE_RATE, WINDOW_LEN};

/// White Gaussian noise shaped by an amplitude response in the frequency
/// domain of the whole signal.
pub(crate) fn shaped_noise(len: usize, rng: &mut ChaCha8Rng, amplitude: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let df = SAMPLE_RATE as f64 / len as f64;
    for (j, x) in buf.iter_mut().enumerate() {
        let f = j.min(len - j) as f64 * df;
        *x *= amplitude(f);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn modulate(x: &mut [f64], rate_hz: f64, depth: f64, phase: f64) {
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / SAMPLE_RATE as f64;
        *v *= 1.0 + depth * (2.0 * PI * rate_hz * t + phase).sin();
    }
}

/// Noise following `recipe`, before level normalisation.
pub fn synth_noise_recipe(recipe: &NoiseRecipe, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = shaped_noise(len, rng, |f| recipe.amplitude(f));
    let level = rms(&x);
    for &(freq, rel_db) in &recipe.tones {
        let amp = level * 10f64.powf(rel_db / 20.0) * std::f64::consts::SQRT_2;
        let freq = freq * rng.gen_range(0.97..1.03);
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64 + phase).sin();
        }
    }
    if let Some((rate, depth)) = recipe.modulation {
        let phase = rng.gen_range(0.0..2.0 * PI);
        modulate(&mut x, rate, depth, phase);
    }
    x
}

/// Music stand-in: a sequence of three-note harmonic chords with short
/// fades, over a pink noise bed, with slow amplitude modulation.
pub fn synth_music_samples(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; len];
    let fade = (0.01 * SAMPLE_RATE as f64) as usize;
    let mut start = 0;
    while start < len {
        let seg = ((rng.gen_range(0.4..1.0) * SAMPLE_RATE as f64) as usize).min(len - start);
        let root = 110.0 * 2f64.powf(rng.gen_range(0.0..1.6));
        let harmonics = rng.gen_range(6..14);
        for ratio in [1.0, 1.26, 1.5] {
            let f0 = root * ratio;
            for h in 1..=harmonics {
                let f = f0 * h as f64;
                if f >= 0.45 * SAMPLE_RATE as f64 {
                    break;
                }
                let amp = rng.gen_range(0.5..1.0) / h as f64;
                let phase = rng.gen_range(0.0..2.0 * PI);
                for i in 0..seg {
                    let env = (i.min(seg - 1 - i) as f64 / fade as f64).min(1.0);
                    let t = (start + i) as f64 / SAMPLE_RATE as f64;
                    x[start + i] += env * amp * (2.0 * PI * f * t + phase).sin();
                }
            }
        }
        start += seg;
    }
    let tonal = rms(&x);
    let bed = shaped_noise(len, rng, |f| NoiseRecipe::pink().amplitude(f));
    let bed_scale = tonal * 10f64.powf(-25.0 / 20.0) / rms(&bed).max(1e-300);
    for (v, b) in x.iter_mut().zip(&bed) {
        *v += bed_scale * b;
    }
    let rate = rng.gen_range(0.2..1.0);
    let depth = rng.gen_range(0.3..0.6);
    let phase = rng.gen_range(0.0..2.0 * PI);
    modulate(&mut x, rate, depth, phase);
    x
}

/// Multiplies the STFT of `noise` by the headphone curve and resynthesises.
/// The signal is zero-padded by one window on each side so every sample is
/// fully covered by the overlap-add.
pub fn apply_headphone(noise: &Signal, profile: &HeadphoneProfile) -> Result<Signal> {
    let len = noise.len();
    let mut padded = vec![0.0; len + 2 * WINDOW_LEN];
    padded[WINDOW_LEN..WINDOW_LEN + len].copy_from_slice(noise.samples());
    let padded = Signal::new(padded, noise.sample_rate())?;
    let mut spec = stft(&padded)?;
    let gains: Vec<f64> = (0..spec.n_bins())
        .map(|k| 10f64.powf(profile.attenuation_db(bin_frequency(k)) / 20.0))
        .collect();
    for n in 0..spec.n_frames() {
        for (x, g) in spec.frame_mut(n).iter_mut().zip(&gains) {
            *x *= *g;
        }
    }
    let out = istft(&spec)?;
    Signal::new(out.samples()[WINDOW_LEN..WINDOW_LEN + len].to_vec(), noise.sample_rate())
}
