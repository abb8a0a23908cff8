use criterion::{black_box, criterion_group, criterion_main, Criterion};

use maskeq::pipeline::{analyze_scene, process, Method, PipelineConfig};
use maskeq::predictor::{features, init_model, TrainConfig};
use maskeq::scene::{generate_scene, sample_scene, SceneSpec};
use maskeq::signal_io::{istft, stft, Calibration};

fn scene(duration_s: f64) -> (maskeq::signal_io::Signal, maskeq::signal_io::Signal) {
    let spec = SceneSpec {
        duration_s,
        ..sample_scene("urban", 3).unwrap()
    };
    let pair = generate_scene(&spec, &Calibration::default()).unwrap();
    (pair.music, pair.noise)
}

fn bench_dsp(c: &mut Criterion) {
    let (music, noise) = scene(10.0);
    c.bench_function("stft_10s", |b| b.iter(|| stft(black_box(&music)).unwrap()));
    let spec = stft(&music).unwrap();
    c.bench_function("istft_10s", |b| b.iter(|| istft(black_box(&spec)).unwrap()));
    let cfg = PipelineConfig::default();
    c.bench_function("analyze_10s", |b| b.iter(|| analyze_scene(&music, &noise, &cfg).unwrap()));
}

fn bench_methods(c: &mut Criterion) {
    let (music, noise) = scene(2.0);
    let cfg = PipelineConfig::default();
    let a = analyze_scene(&music, &noise, &cfg).unwrap();
    c.bench_function("estreder_2s", |b| b.iter(|| process(&a, Method::Estreder, &cfg, None).unwrap()));

    let model = init_model(&TrainConfig::default()).unwrap();
    let feats = features(&a.music_psd, &a.noise_psd, &a.initial).unwrap();
    c.bench_function("predictor_forward_2s", |b| b.iter(|| model.forward(black_box(&feats)).unwrap()));

    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    group.bench_function("solver_2s", |b| {
        b.iter(|| process(&a, Method::Solver { delta_p_max: Some(1.0) }, &cfg, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_dsp, bench_methods);
criterion_main!(benches);
