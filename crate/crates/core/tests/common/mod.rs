#![allow(dead_code)]

use std::f64::consts::PI;

use maskeq::bark::{band_psd, BarkBands};
use maskeq::gain_solvers::NeedMask;
use maskeq::masking::{analyze_thresholds, MaskingOptions};
use maskeq::shaping::NUM_GAIN_BANDS;
use maskeq::signal_io::{stft, Signal, Spectrogram, SAMPLE_RATE, WINDOW_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROBE_SAMPLES: usize = 24_576;

/// Tone masker plus a quiet noise bed, and a multi-tone noise confined to
/// one band whose level sits `gap_db` above the music's mean threshold there.
pub struct ToneProbe {
    pub band: usize,
    pub music: Spectrogram,
    pub noise: Spectrogram,
}

fn bin_sine(bin: usize, amp: f64, phase: f64, out: &mut [f64]) {
    let w = 2.0 * PI * bin as f64 / WINDOW_LEN as f64;
    for (i, x) in out.iter_mut().enumerate() {
        *x += amp * (w * i as f64 + phase).cos();
    }
}

pub fn tone_probe(band: usize, gap_db: f64, seed: u64) -> ToneProbe {
    tone_probe_with_bed(band, gap_db, -60.0, seed)
}

pub fn tone_probe_with_bed(band: usize, gap_db: f64, bed_db: f64, seed: u64) -> ToneProbe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = BarkBands::standard().bins(band);
    assert!(bins.len() >= 8, "band {band} too narrow for a probe");
    let tone_bin = bins.start + 1;
    let tone_amp = 10f64.powf(rng.gen_range(-30.0..-10.0) / 20.0);
    let mut music = vec![0.0; PROBE_SAMPLES];
    bin_sine(tone_bin, tone_amp, rng.gen_range(0.0..2.0 * PI), &mut music);
    let bed = tone_amp * 10f64.powf(bed_db / 20.0);
    for x in music.iter_mut() {
        *x += bed * rng.gen_range(-1.0..1.0);
    }

    let mut noise = vec![0.0; PROBE_SAMPLES];
    let mut k = tone_bin + 3;
    while k + 2 < bins.end {
        bin_sine(k, 1e-3, rng.gen_range(0.0..2.0 * PI), &mut noise);
        k += 3;
    }
    let music = stft(&Signal::new(music, SAMPLE_RATE).unwrap()).unwrap();
    let noise = stft(&Signal::new(noise, SAMPLE_RATE).unwrap()).unwrap();

    let (_, thr) = analyze_thresholds(&music, &MaskingOptions::default());
    let psd = band_psd(&noise);
    let n = music.n_frames() as f64;
    let mean_gap: f64 = (0..music.n_frames())
        .map(|f| psd.db(f)[band] - thr.db(f)[band])
        .sum::<f64>()
        / n;
    let noise = noise.scaled(10f64.powf((gap_db - mean_gap) / 20.0));
    ToneProbe { band, music, noise }
}

/// Mask where only `band` is actuated and needed.
pub fn single_band_mask(n_frames: usize, band: usize) -> NeedMask {
    let mut need = vec![false; n_frames * 26];
    let mut active = vec![false; n_frames * NUM_GAIN_BANDS];
    for n in 0..n_frames {
        need[n * 26 + band] = true;
        active[n * NUM_GAIN_BANDS + band] = true;
    }
    NeedMask::new(n_frames, need, active).unwrap()
}

/// Random tone mixture over a uniform noise floor.
pub fn random_spec(seed: u64, len: usize, amp: f64, tones: usize) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs: Vec<(f64, f64)> = (0..tones)
        .map(|_| (rng.gen_range(80.0..12000.0), rng.gen_range(0.05..1.0)))
        .collect();
    let x: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let tonal: f64 = freqs
                .iter()
                .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin())
                .sum();
            amp * (tonal / tones.max(1) as f64 + 0.1 * rng.gen_range(-1.0..1.0))
        })
        .collect();
    stft(&Signal::new(x, SAMPLE_RATE).unwrap()).unwrap()
}
