mod common;

use maskeq::bark::{band_psd, BandPsd};
use maskeq::gain_solvers::{
    loss_l0, loss_power, need_mask, solve_gains, solve_with_mask, total_loss, SceneObjective,
    SolverConfig,
};
use maskeq::masking::{analyze_thresholds, frame_tonality, masking_thresholds, MaskingOptions};
use maskeq::shaping::{apply_gains, GainMatrix, NUM_GAIN_BANDS};
use maskeq::signal_io::Spectrogram;
use common::random_spec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pipeline_loss(music: &Spectrogram, noise: &Spectrogram, gains: &GainMatrix, lambda: f64) -> f64 {
    let opts = MaskingOptions::default();
    let processed = apply_gains(music, gains).unwrap();
    let (_, thr) = analyze_thresholds(&processed, &opts);
    let l0 = loss_l0(&band_psd(noise), &thr);
    let lp = loss_power(music, &processed);
    total_loss(l0, lp, lambda, 1.0)
}

#[test]
fn masked_scene_gives_zero_gains() {
    let music = random_spec(1, 8192, 0.3, 6);
    let noise = random_spec(2, 8192, 1e-6, 0);
    let (gains, trace) = solve_gains(&music, &noise, &SolverConfig::default()).unwrap();
    assert!(gains.as_slice().iter().all(|&g| g == 0.0));
    assert_eq!(trace.rows[0].l0, 0.0);
}

#[test]
fn single_band_probe_matches_grid_oracle() {
    let probe = common::tone_probe(10, 8.0, 7);
    let n_frames = probe.music.n_frames();
    let noise_psd = band_psd(&probe.noise);
    let objective = SceneObjective::new(&probe.music, &noise_psd, MaskingOptions::default());
    let mask = common::single_band_mask(n_frames, probe.band);
    let (gains, _) = solve_with_mask(&objective, &mask, &SolverConfig::default()).unwrap();

    let opts = MaskingOptions::default();
    let grid: Vec<f64> = (0..=300).map(|i| -5.0 + 0.05 * i as f64).collect();
    let mut per_frame: Vec<Vec<f64>> = vec![Vec::new(); n_frames];
    for &g in &grid {
        let mut gm = GainMatrix::zeros(n_frames);
        for n in 0..n_frames {
            gm.row_mut(n)[probe.band] = g;
        }
        let (_, thr) = analyze_thresholds(&apply_gains(&probe.music, &gm).unwrap(), &opts);
        for n in 0..n_frames {
            let l: f64 = noise_psd
                .db(n)
                .iter()
                .zip(thr.db(n))
                .map(|(a, b)| (a - b).max(0.0))
                .sum();
            per_frame[n].push(l);
        }
    }
    for n in 0..n_frames {
        let best = per_frame[n].iter().cloned().fold(f64::INFINITY, f64::min);
        let i = per_frame[n].iter().position(|&l| l <= best + 1e-9).unwrap();
        let oracle = grid[i];
        let solved = gains.get(n, probe.band);
        assert!((solved - oracle).abs() <= 0.25, "frame {n}: {solved} vs {oracle}");
        for b in 0..NUM_GAIN_BANDS {
            if b != probe.band {
                assert_eq!(gains.get(n, b), 0.0);
            }
        }
    }
    let processed = apply_gains(&probe.music, &gains).unwrap();
    let (_, thr) = analyze_thresholds(&processed, &opts);
    for n in 0..n_frames {
        let gap: f64 = noise_psd
            .db(n)
            .iter()
            .zip(thr.db(n))
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
        assert!(gap <= 0.1, "frame {n} residual {gap}");
    }
}

#[test]
fn zero_budget_drives_level_change_down() {
    let probe = common::tone_probe(12, 8.0, 3);
    let config = SolverConfig {
        delta_p_max: Some(0.0),
        ..SolverConfig::default()
    };
    let (_, trace) = solve_gains(&probe.music, &probe.noise, &config).unwrap();
    let lambdas: Vec<f64> = trace.rows.iter().map(|r| r.lambda).collect();
    assert!(lambdas.iter().all(|&l| l >= 0.0));
    assert!(lambdas.iter().cloned().fold(0.0, f64::max) > 0.0);
    let last = trace.last().unwrap();
    assert!(last.l_power <= 0.2, "final L_power {}", last.l_power);
}

#[test]
fn gradient_matches_pipeline_differences() {
    let music = random_spec(11, 6144, 0.2, 5);
    let noise = random_spec(12, 6144, 0.05, 2);
    let n_frames = music.n_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gains = GainMatrix::zeros(n_frames);
    for g in gains.as_mut_slice() {
        *g = rng.gen_range(-5.0..10.0);
    }
    let lambda = 0.3;
    let objective = SceneObjective::new(&music, &band_psd(&noise), MaskingOptions::default());
    let analytic = objective.total_loss_gradient(&gains, lambda);
    let h = 1e-3;
    let mut checked = 0;
    while checked < 20 {
        let n = rng.gen_range(0..n_frames);
        let b = rng.gen_range(0..NUM_GAIN_BANDS);
        let mut up = gains.clone();
        up.row_mut(n)[b] += h;
        let mut dn = gains.clone();
        dn.row_mut(n)[b] -= h;
        let fd = (pipeline_loss(&music, &noise, &up, lambda)
            - pipeline_loss(&music, &noise, &dn, lambda))
            / (2.0 * h);
        let a = analytic.get(n, b);
        let scale = a.abs().max(fd.abs());
        assert!(
            (a - fd).abs() <= 1e-4 * scale + 1e-12,
            "frame {n} band {b}: analytic {a}, numeric {fd}"
        );
        checked += 1;
    }
}

/// Holds each frame's tonality at its unprocessed value: boosting a band can
/// make a frame more tonal, which lowers thresholds everywhere.
fn l0_fixed_tonality(music: &Spectrogram, noise: &BandPsd, gains: &GainMatrix) -> f64 {
    let alphas: Vec<f64> = frame_tonality(music).iter().map(|t| t.alpha).collect();
    let processed = apply_gains(music, gains).unwrap();
    let thr = masking_thresholds(&band_psd(&processed), &alphas, &MaskingOptions::default());
    loss_l0(noise, &thr)
}

#[test]
fn single_gain_increase_never_raises_l0_at_fixed_tonality() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..4 {
        let music = random_spec(100 + seed, 4096, 0.2, 4);
        let noise = random_spec(200 + seed, 4096, 0.1, 1);
        let npsd = band_psd(&noise);
        let mut g = GainMatrix::zeros(music.n_frames());
        for v in g.as_mut_slice() {
            *v = rng.gen_range(-5.0..5.0);
        }
        let base = l0_fixed_tonality(&music, &npsd, &g);
        for _ in 0..10 {
            let n = rng.gen_range(0..music.n_frames());
            let b = rng.gen_range(0..NUM_GAIN_BANDS);
            let mut up = g.clone();
            up.row_mut(n)[b] += rng.gen_range(0.1..5.0);
            let l = l0_fixed_tonality(&music, &npsd, &up);
            assert!(l <= base + 1e-9, "L0 rose from {base} to {l}");
        }
    }
}

#[test]
fn solver_outputs_respect_bounds_and_mask() {
    let music = random_spec(21, 12288, 0.1, 5);
    let noise = random_spec(22, 12288, 0.2, 1);
    let config = SolverConfig {
        delta_p_max: Some(1.0),
        ..SolverConfig::default()
    };
    let (gains, trace) = solve_gains(&music, &noise, &config).unwrap();
    let (_, initial) = analyze_thresholds(&music, &config.masking);
    let mask = need_mask(&band_psd(&noise), &initial, config.reach_radius);
    for (g, &a) in gains.as_slice().iter().zip(mask.active()) {
        assert!((-5.0..=10.0).contains(g));
        if !a {
            assert_eq!(*g, 0.0);
        }
    }
    assert!(trace.rows.iter().all(|r| r.lambda >= 0.0));
    let first = trace.rows.first().unwrap().l0;
    assert!(trace.last().unwrap().l0 <= first);
}
