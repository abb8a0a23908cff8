use maskeq::bark::{band_psd, BarkBands};
use maskeq::scene::*;
use maskeq::signal_io::{bin_frequency, read_wav, stft, Calibration, Signal, SAMPLE_RATE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn spec(env: &str, seed: u64, duration_s: f64) -> SceneSpec {
    SceneSpec {
        duration_s,
        ..sample_scene(env, seed).unwrap()
    }
}

/// Mean per-bin power near `f` over all frames.
fn power_near(sig: &Signal, f: f64, half_width: f64) -> f64 {
    let s = stft(sig).unwrap();
    let bins: Vec<usize> = (0..s.n_bins())
        .filter(|&k| (bin_frequency(k) - f).abs() <= half_width)
        .collect();
    let mut total = 0.0;
    for n in 0..s.n_frames() {
        let p = s.frame_power(n);
        total += bins.iter().map(|&k| p[k]).sum::<f64>();
    }
    total / (s.n_frames() * bins.len()) as f64
}

#[test]
fn sampled_levels_respect_bounds() {
    for seed in 0..300 {
        let s = sample_scene("construction", seed).unwrap();
        assert!((40.0..=95.0).contains(&s.noise_level_dba));
        assert!((-5.0..=15.0).contains(&s.snr_db));
        assert!((45.0..=100.0).contains(&s.music_level_dba));
        assert!(HEADPHONES.contains(&s.headphone.as_str()));
    }
    assert_eq!(music_level(95.0, 15.0), 100.0);
    assert_eq!(music_level(40.0, -5.0), 45.0);
    assert_eq!(sample_scene("beach", 4).unwrap(), sample_scene("beach", 4).unwrap());
    assert_ne!(sample_scene("beach", 4).unwrap(), sample_scene("beach", 5).unwrap());
    assert!(sample_scene("forest", 1).is_err());
    assert_eq!(sample_scene("office", 1).unwrap().n_samples(), 441_000);
}

#[test]
fn different_seeds_are_uncorrelated() {
    for env in ENVIRONMENTS {
        let a = synth_noise(&spec(env, 1, 10.0)).unwrap();
        let b = synth_noise(&spec(env, 2, 10.0)).unwrap();
        let c = ncc(a.samples(), b.samples());
        assert!(c.abs() < 0.1, "{env} noise ncc {c}");
    }
    let a = synth_music(&spec("urban", 1, 2.0)).unwrap();
    let b = synth_music(&spec("urban", 2, 2.0)).unwrap();
    assert!(ncc(a.samples(), b.samples()).abs() < 0.1);
}

#[test]
fn pink_recipe_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = synth_noise_recipe(&NoiseRecipe::pink(), 5 * SAMPLE_RATE as usize, &mut rng);
    let psd = band_psd(&stft(&Signal::new(x, SAMPLE_RATE).unwrap()).unwrap());
    let bands = BarkBands::standard();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for b in 0..26 {
        let edges = bands.band_edges_hz();
        let center = bands.center_hz(b);
        if !(100.0..=5000.0).contains(&center) || bands.bins(b).is_empty() {
            continue;
        }
        let mean: f64 = (0..psd.n_frames()).map(|n| psd.linear(n)[b]).sum::<f64>() / psd.n_frames() as f64;
        let density = mean / bands.bins(b).len() as f64;
        let _ = edges;
        xs.push(center.log2());
        ys.push(10.0 * density.log10());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 3.0).abs() <= 1.0, "slope {slope} dB/octave");
}

#[test]
fn headphone_attenuation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let white = Signal::new(
        synth_noise_recipe(
            &NoiseRecipe {
                slope_db_per_octave: 0.0,
                low_hz: 20.0,
                high_hz: 22_050.0,
                tones: vec![],
                modulation: None,
            },
            2 * SAMPLE_RATE as usize,
            &mut rng,
        ),
        SAMPLE_RATE,
    )
    .unwrap();
    let same = apply_headphone(&white, &HeadphoneProfile::transparent()).unwrap();
    let err = white
        .samples()
        .iter()
        .zip(same.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "identity error {err}");

    let cal = Calibration::default();
    for name in HEADPHONES {
        let profile = HeadphoneProfile::named(name).unwrap();
        let out = apply_headphone(&white, &profile).unwrap();
        assert!(measure_dba(&out, &cal).unwrap() <= measure_dba(&white, &cal).unwrap());
        for f in [2_000.0, 4_000.0, 8_000.0, 12_000.0] {
            let drop = 10.0 * (power_near(&out, f, 100.0) / power_near(&white, f, 100.0)).log10();
            let expected = profile.attenuation_db(f);
            assert!((drop - expected).abs() <= 1.0, "{name} at {f}: {drop} vs {expected}");
        }
    }
    let closed = HeadphoneProfile::named("closed").unwrap();
    let out = apply_headphone(&white, &closed).unwrap();
    let drop = 10.0 * (power_near(&out, 8_000.0, 100.0) / power_near(&white, 8_000.0, 100.0)).log10();
    assert!((drop + 25.0).abs() <= 1.0);
}

#[test]
fn normalization() {
    let cal = Calibration::default();
    let x = synth_music(&spec("office", 7, 1.0)).unwrap();
    let y = normalize_dba(&x, 72.0, &cal).unwrap();
    assert!((measure_dba(&y, &cal).unwrap() - 72.0).abs() <= 0.1);
    let z = normalize_dba(&y, 72.0, &cal).unwrap();
    let err = y
        .samples()
        .iter()
        .zip(z.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6);
    let w = normalize_dba(&x, 82.0, &cal).unwrap();
    let ratio = w.samples()[1000] / y.samples()[1000];
    assert!((ratio - 10f64.sqrt()).abs() < 1e-9);
    let silent = Signal::new(vec![0.0; 8192], SAMPLE_RATE).unwrap();
    assert!(normalize_dba(&silent, 60.0, &cal).is_err());
}

#[test]
fn manifest_generation() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimulateConfig {
        count_per_env: 5,
        seed: 11,
        duration_s: 0.25,
        ..SimulateConfig::default()
    };
    let entries = build_manifest(&config, dir.path()).unwrap();
    assert_eq!(entries.len(), 30);
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(text.lines().count(), 30);
    let wavs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 60);

    let back = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, entries);
    let cal = Calibration::default();
    for e in &back {
        let mut expect = sample_scene(&e.environment, e.seed).unwrap();
        expect.duration_s = 0.25;
        assert_eq!(e.spec(), expect);
        let (music, noise) = load_pair(e, dir.path()).unwrap();
        assert!((measure_dba(&music, &cal).unwrap() - e.music_level_dba).abs() <= 0.2);
        assert!((measure_dba(&noise, &cal).unwrap() - e.noise_at_ear_dba).abs() <= 0.2);
        assert!(e.noise_at_ear_dba <= e.noise_level_dba + 0.2);
    }

    let dir2 = tempfile::tempdir().unwrap();
    build_manifest(&config, dir2.path()).unwrap();
    for e in &entries {
        for p in [&e.music_path, &e.noise_path] {
            assert_eq!(
                std::fs::read(dir.path().join(p)).unwrap(),
                std::fs::read(dir2.path().join(p)).unwrap()
            );
        }
    }
    assert_eq!(
        std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap()
    );
    let _ = read_wav(dir.path().join(&entries[0].music_path)).unwrap();
}

#[test]
fn user_recordings_must_be_active() {
    let dir = tempfile::tempdir().unwrap();
    let cal = Calibration::default();
    let music = normalize_dba(&synth_music(&spec("urban", 1, 0.5)).unwrap(), 70.0, &cal).unwrap();
    let mut quiet = vec![0.0; music.len()];
    quiet[..1000].copy_from_slice(&music.samples()[..1000]);
    let quiet = Signal::new(quiet, SAMPLE_RATE).unwrap();
    let mp = dir.path().join("m.wav");
    let qp = dir.path().join("q.wav");
    maskeq::signal_io::write_wav(&music, &mp, maskeq::signal_io::BitDepth::Float32).unwrap();
    maskeq::signal_io::write_wav(&quiet, &qp, maskeq::signal_io::BitDepth::Float32).unwrap();
    assert!(scene_from_wavs(&mp, &mp).is_ok());
    assert!(scene_from_wavs(&mp, &qp).is_err());
}
