mod common;

use common::random_spec;
use maskeq::predictor::{
    batch_loss, init_model, prepare_scene, train, TrainConfig, TrainingScene,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenes(count: u64, config: &TrainConfig) -> Vec<TrainingScene> {
    (0..count)
        .map(|s| {
            let music = random_spec(300 + s, 8192, 0.05, 4);
            let noise = random_spec(400 + s, 8192, 0.2, 1);
            prepare_scene(&music, &noise, config).unwrap()
        })
        .collect()
}

#[test]
fn one_epoch_reduces_loss_on_single_scene() {
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let data = scenes(1, &config);
    let frames: Vec<(usize, usize)> = (0..data[0].n_frames()).map(|n| (0, n)).collect();
    let model = init_model(&config).unwrap();
    let before = batch_loss(&model, &data, &frames, 0.0, None).total;
    let (trained, log) = train(model, &data, &config).unwrap();
    let after = batch_loss(&trained, &data, &frames, 0.0, None).total;
    assert!(after < before, "{after} >= {before}");
    assert!(log.batches.iter().all(|b| b.lambda == 0.0 && b.lambda_next == 0.0));
}

#[test]
fn network_gradient_matches_finite_differences() {
    let config = TrainConfig::default();
    let data = scenes(2, &config);
    let frames: Vec<(usize, usize)> = (0..2)
        .flat_map(|s| (0..data[s].n_frames()).map(move |n| (s, n)))
        .collect();
    let mut model = init_model(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Spread outputs over the gain range so many bands are inside the clamp.
    for p in model.params_mut() {
        *p *= 4.0;
    }
    let (lambda, budget) = (0.5, Some(0.5));
    let eval = batch_loss(&model, &data, &frames, lambda, budget);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 {
        attempts += 1;
        assert!(attempts < 2000, "too few parameters with nonzero gradient");
        let i = rng.gen_range(0..model.params().len());
        let a = eval.grad[i];
        if a == 0.0 {
            continue;
        }
        let h = 1e-6 * (1.0 + model.params()[i].abs());
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let up = batch_loss(&model, &data, &frames, lambda, budget).total;
        model.params_mut()[i] = orig - h;
        let dn = batch_loss(&model, &data, &frames, lambda, budget).total;
        model.params_mut()[i] = orig;
        let fd = (up - dn) / (2.0 * h);
        assert!(
            (fd - a).abs() <= 1e-4 * a.abs().max(fd.abs()),
            "param {i}: analytic {a}, numeric {fd}"
        );
        checked += 1;
    }
}

#[test]
fn lambda_follows_constraint_violations() {
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        delta_p_max: Some(0.5),
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let data = scenes(2, &config);
    let (_, log) = train(init_model(&config).unwrap(), &data, &config).unwrap();
    for b in &log.batches {
        assert!(b.lambda >= 0.0 && b.lambda_next >= 0.0);
        if b.l_power > 0.5 {
            assert!(b.lambda_next > b.lambda);
        } else {
            assert!(b.lambda_next <= b.lambda);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        delta_p_max: Some(1.0),
        ..TrainConfig::default()
    };
    let data = scenes(2, &config);
    let (m1, l1) = train(init_model(&config).unwrap(), &data, &config).unwrap();
    let (m2, l2) = train(init_model(&config).unwrap(), &data, &config).unwrap();
    assert_eq!(m1.to_bytes(), m2.to_bytes());
    assert_eq!(l1, l2);
}
