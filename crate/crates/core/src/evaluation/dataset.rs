use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{gld, nmr, nmr_with_count, Range};
use super::stats::{bonferroni, wilcoxon_signed_rank, MIN_PAIRS};
use crate::error::{Error, Result};
use crate::masking::analyze_thresholds;
use crate::pipeline::{analyze_scene, process, Method, PipelineConfig, Processed, SceneAnalysis};
use crate::predictor::PredictorModel;
use crate::scene::{load_pair, ManifestEntry};

/// Metrics of one method on one scene. Range NMR fields are empty when the
/// range has no selected band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub method: String,
    pub nmr: Option<f64>,
    pub nmr_low: Option<f64>,
    pub nmr_mid: Option<f64>,
    pub nmr_high: Option<f64>,
    pub nmr_initial: Option<f64>,
    pub gld: Option<f64>,
    pub gld_low: Option<f64>,
    pub gld_mid: Option<f64>,
    pub gld_high: Option<f64>,
    /// Number of selected (frame, band) entries over all 26 bands.
    pub valid_band_count: usize,
    pub error: Option<String>,
}

impl EvalRecord {
    fn failed(scene_id: &str, method: Method, error: &Error) -> Self {
        EvalRecord {
            scene_id: scene_id.to_string(),
            method: method.to_string(),
            nmr: None,
            nmr_low: None,
            nmr_mid: None,
            nmr_high: None,
            nmr_initial: None,
            gld: None,
            gld_low: None,
            gld_mid: None,
            gld_high: None,
            valid_band_count: 0,
            error: Some(error.to_string()),
        }
    }

    pub fn metric(&self, metric: Metric, range: Range) -> Option<f64> {
        match (metric, range) {
            (Metric::Nmr, Range::Broadband) => self.nmr,
            (Metric::Nmr, Range::Low) => self.nmr_low,
            (Metric::Nmr, Range::Mid) => self.nmr_mid,
            (Metric::Nmr, Range::High) => self.nmr_high,
            (Metric::Gld, Range::Broadband) => self.gld,
            (Metric::Gld, Range::Low) => self.gld_low,
            (Metric::Gld, Range::Mid) => self.gld_mid,
            (Metric::Gld, Range::High) => self.gld_high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nmr,
    Gld,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    pub methods: Vec<Method>,
    /// Reference for the significance tests.
    pub baseline: Method,
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pipeline: PipelineConfig::default(),
            methods: vec![Method::None, Method::Estreder, Method::Solver { delta_p_max: None }],
            baseline: Method::Estreder,
            batches: 20,
            batch_size: 10,
            seed: 0,
        }
    }
}

/// Metrics of an already processed scene.
pub fn scene_record(
    scene_id: &str,
    analysis: &SceneAnalysis,
    method: Method,
    processed: &Processed,
    config: &PipelineConfig,
) -> EvalRecord {
    let (_, thr) = analyze_thresholds(&processed.spectrogram, &config.masking);
    let noise = &analysis.noise_psd;
    let init = &analysis.initial;
    let (nmr_all, count) = nmr_with_count(noise, &thr, init, Range::Broadband);
    let g = |r| Some(gld(&analysis.music, &processed.spectrogram, r));
    EvalRecord {
        scene_id: scene_id.to_string(),
        method: method.to_string(),
        nmr: nmr_all,
        nmr_low: nmr(noise, &thr, init, Range::Low),
        nmr_mid: nmr(noise, &thr, init, Range::Mid),
        nmr_high: nmr(noise, &thr, init, Range::High),
        nmr_initial: nmr(noise, init, init, Range::Broadband),
        gld: g(Range::Broadband),
        gld_low: g(Range::Low),
        gld_mid: g(Range::Mid),
        gld_high: g(Range::High),
        valid_band_count: count,
        error: None,
    }
}

/// Runs every method on an analysed scene.
pub fn evaluate_scene(
    scene_id: &str,
    analysis: &SceneAnalysis,
    methods: &[Method],
    config: &PipelineConfig,
    model: Option<&PredictorModel>,
) -> Vec<EvalRecord> {
    methods
        .iter()
        .map(|&method| match process(analysis, method, config, model) {
            Ok(p) => scene_record(scene_id, analysis, method, &p, config),
            Err(e) => EvalRecord::failed(scene_id, method, &e),
        })
        .collect()
}

/// One method-versus-baseline test on one metric and range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub baseline: String,
    pub metric: Metric,
    pub range: Range,
    pub n_scenes: usize,
    /// Mean of `method − baseline` over the paired scenes.
    pub mean_difference: Option<f64>,
    /// Mean over batches of the two-sided Wilcoxon p.
    pub p_raw: Option<f64>,
    pub p_corrected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub baseline: String,
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bonferroni_factor: usize,
    pub comparisons: Vec<Comparison>,
}

impl StatReport {
    pub fn find(&self, method: &str, metric: Metric, range: Range) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.method == method && c.metric == metric && c.range == range)
    }
}

const METRICS: [Metric; 2] = [Metric::Nmr, Metric::Gld];

/// Batch protocol: `batches` random subsets of `batch_size` paired scenes,
/// a Wilcoxon test per subset, and the mean p, Bonferroni-corrected by the
/// number of metric/range comparisons per method.
pub fn statistics(records: &[EvalRecord], config: &EvalConfig) -> StatReport {
    let factor = METRICS.len() * Range::ALL.len();
    let baseline = config.baseline.to_string();
    let mut comparisons = Vec::new();
    for method in config.methods.iter().map(|m| m.to_string()) {
        if method == baseline {
            continue;
        }
        for metric in METRICS {
            for range in Range::ALL {
                let (x, y) = paired(records, &method, &baseline, metric, range);
                let n = x.len();
                let mean_difference = (n > 0).then(|| x.iter().zip(&y).map(|(a, b)| a - b).sum::<f64>() / n as f64);
                let p_raw = batch_p(&x, &y, config);
                comparisons.push(Comparison {
                    method: method.clone(),
                    baseline: baseline.clone(),
                    metric,
                    range,
                    n_scenes: n,
                    mean_difference,
                    p_raw,
                    p_corrected: p_raw.map(|p| bonferroni(p, factor)),
                });
            }
        }
    }
    StatReport {
        baseline,
        batches: config.batches,
        batch_size: config.batch_size,
        seed: config.seed,
        bonferroni_factor: factor,
        comparisons,
    }
}

fn paired(records: &[EvalRecord], method: &str, baseline: &str, metric: Metric, range: Range) -> (Vec<f64>, Vec<f64>) {
    let mut scenes: Vec<&str> = records.iter().map(|r| r.scene_id.as_str()).collect();
    scenes.sort_unstable();
    scenes.dedup();
    let value = |scene: &str, m: &str| {
        records
            .iter()
            .find(|r| r.scene_id == scene && r.method == m)
            .and_then(|r| r.metric(metric, range))
    };
    scenes
        .into_iter()
        .filter_map(|s| Some((value(s, method)?, value(s, baseline)?)))
        .unzip()
}

fn batch_p(x: &[f64], y: &[f64], config: &EvalConfig) -> Option<f64> {
    let n = x.len();
    let k = config.batch_size.min(n);
    if k < MIN_PAIRS || config.batches == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total = 0.0;
    for _ in 0..config.batches {
        let idx = sample(&mut rng, n, k).into_vec();
        let a: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        total += wilcoxon_signed_rank(&a, &b).ok()?;
    }
    Some(total / config.batches as f64)
}

/// Evaluates every manifest scene with every method. Scenes that cannot be
/// loaded or analysed produce error records; the run continues.
pub fn evaluate_dataset(
    entries: &[ManifestEntry],
    base_dir: &Path,
    config: &EvalConfig,
    model: Option<&PredictorModel>,
) -> Result<(Vec<EvalRecord>, StatReport)> {
    config.pipeline.validate()?;
    if config.methods.contains(&Method::Predictor) && model.is_none() {
        return Err(Error::Config("predictor method needs a model".into()));
    }
    let per_scene: Vec<Vec<EvalRecord>> = entries
        .par_iter()
        .map(|e| {
            let analysis = load_pair(e, base_dir).and_then(|(m, n)| analyze_scene(&m, &n, &config.pipeline));
            match analysis {
                Ok(a) => evaluate_scene(&e.id, &a, &config.methods, &config.pipeline, model),
                Err(err) => {
                    log::warn!("scene {}: {err}", e.id);
                    config
                        .methods
                        .iter()
                        .map(|&m| EvalRecord::failed(&e.id, m, &err))
                        .collect()
                }
            }
        })
        .collect();
    let records: Vec<EvalRecord> = per_scene.into_iter().flatten().collect();
    let report = statistics(&records, config);
    Ok((records, report))
}

pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in records {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records_jsonl(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(path: &Path, report: &StatReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
