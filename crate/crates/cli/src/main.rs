use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use maskeq::evaluation::{self, EvalConfig, EvalRecord};
use maskeq::export::{write_band_csv, write_gains_csv, write_trace_csv};
use maskeq::gain_solvers::loss_power;
use maskeq::pipeline::{analyze_scene, process, render, Method, PipelineConfig};
use maskeq::predictor::{self, load_model, save_model, PredictorModel, TrainConfig};
use maskeq::scene::{self, read_manifest, scene_from_wavs, SimulateConfig, ENVIRONMENTS};
use maskeq::signal_io::{frame_power_dba, stft, write_wav, BitDepth};

/// Perceptual noise masking by spectral envelope shaping.
#[derive(Parser)]
#[command(name = "maskeq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pipeline.solver.step_size=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: WAV pairs plus `manifest.jsonl`.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated environments or `all`.
        #[arg(long)]
        envs: Option<String>,
        #[arg(long)]
        per_env: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scene length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write band powers, initial thresholds and the need mask of a scene.
    ///
    /// Outputs `music_psd.csv`, `noise_psd.csv`, `thresholds.csv` (dB per
    /// frame and Bark band), `need.csv` (1 where a band needs masking) and
    /// `summary.json`.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        music: PathBuf,
        #[arg(long)]
        noise: PathBuf,
    },
    /// Filter the music of one scene.
    ///
    /// Outputs `processed.wav` (float32), `gains.csv` (frame,g1..g24 in dB),
    /// `report.json` (evaluation record, L_power and solver summary) and,
    /// for the solver, `trace.csv`.
    Process {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        music: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        /// estreder, solver or predictor.
        #[arg(long)]
        method: String,
        /// Level budget in dBA for the solver.
        #[arg(long)]
        delta_p_max: Option<f64>,
        /// Predictor model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the gain predictor on a manifest.
    ///
    /// Outputs `model.bin`, `training_log.csv` (epoch,l0,l_power,lambda) and
    /// `batches.csv` (per-batch losses and multipliers).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        delta_p_max: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate methods over a manifest.
    ///
    /// Outputs `records.csv` and `records.jsonl` with one row per scene and
    /// method: scene_id, method, nmr, nmr_low, nmr_mid, nmr_high (dB, empty
    /// when no band is selected), nmr_initial (dB), gld, gld_low, gld_mid,
    /// gld_high (dBA), valid_band_count and error. `stats.json` holds the
    /// batch protocol parameters and, per method, metric and range, the mean
    /// difference to the baseline with raw and Bonferroni-corrected p.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated: none, estreder, solver, solver:<dBA>, predictor.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Invalid arguments or configuration; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateSection {
    methods: Option<Vec<Method>>,
    baseline: Option<Method>,
    batches: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    simulate: SimulateConfig,
    pipeline: PipelineConfig,
    train: TrainConfig,
    evaluate: EvaluateSection,
}

impl RunConfig {
    fn eval_config(&self) -> EvalConfig {
        let d = EvalConfig::default();
        let e = &self.evaluate;
        EvalConfig {
            pipeline: self.pipeline.clone(),
            methods: e.methods.clone().unwrap_or(d.methods),
            baseline: e.baseline.unwrap_or(d.baseline),
            batches: e.batches.unwrap_or(d.batches),
            batch_size: e.batch_size.unwrap_or(d.batch_size),
            seed: e.seed.unwrap_or(d.seed),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        return usage(format!("override `{spec}` is not KEY=VALUE"));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in path {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return usage(format!("override `{key}`: `{p}` is not a section")),
        };
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut table = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in &common.overrides {
        apply_override(&mut table, o)?;
    }
    RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| UsageError(format!("configuration: {e}")).into())
}

fn prepare_out(common: &Common, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let text = toml::to_string_pretty(config).context("serializing resolved config")?;
    fs::write(common.out.join("config.resolved"), text).context("writing config.resolved")?;
    Ok(())
}

fn check_input(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return usage(format!("{what} {} does not exist", path.display()));
    }
    Ok(())
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(f).collect()
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse().map_err(|e: maskeq::Error| UsageError(e.to_string()).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(
    common: &Common,
    envs: Option<String>,
    per_env: Option<usize>,
    seed: Option<u64>,
    duration: Option<f64>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let sim = &mut cfg.simulate;
    if let Some(e) = envs {
        sim.environments = if e == "all" {
            ENVIRONMENTS.iter().map(|s| s.to_string()).collect()
        } else {
            parse_list(&e, |s| Ok(s.to_string()))?
        };
    }
    if let Some(v) = per_env {
        sim.count_per_env = v;
    }
    if let Some(v) = seed {
        sim.seed = v;
    }
    if let Some(v) = duration {
        sim.duration_s = v;
    }
    for e in &sim.environments {
        if !ENVIRONMENTS.contains(&e.as_str()) {
            return usage(format!("unknown environment `{e}` (expected one of {})", ENVIRONMENTS.join(", ")));
        }
    }
    scene::manifest_specs(sim).map_err(|e| UsageError(e.to_string()))?;
    prepare_out(common, &cfg)?;
    let entries = scene::build_manifest(&cfg.simulate, &common.out)?;
    log::info!("wrote {} scenes to {}", entries.len(), common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeSummary {
    n_frames: usize,
    nmr_initial: Option<f64>,
    need_count: usize,
    active_count: usize,
    music_dba: Option<f64>,
    noise_dba: Option<f64>,
}

fn cmd_analyze(common: &Common, music: &Path, noise: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.pipeline.validate().map_err(|e| UsageError(e.to_string()))?;
    check_input(music, "music file")?;
    check_input(noise, "noise file")?;
    let (m, n) = scene_from_wavs(music, noise)?;
    let a = analyze_scene(&m, &n, &cfg.pipeline)?;
    prepare_out(common, &cfg)?;
    let frames = a.music.n_frames();
    let out = &common.out;
    write_band_csv(&out.join("music_psd.csv"), (0..frames).map(|f| a.music_psd.db(f)))?;
    write_band_csv(&out.join("noise_psd.csv"), (0..frames).map(|f| a.noise_psd.db(f)))?;
    write_band_csv(&out.join("thresholds.csv"), (0..frames).map(|f| a.initial.db(f)))?;
    let need: Vec<Vec<f64>> = (0..frames)
        .map(|f| a.mask.need_row(f).iter().map(|&b| f64::from(u8::from(b))).collect())
        .collect();
    write_band_csv(&out.join("need.csv"), need.iter().map(Vec::as_slice))?;
    let cal = cfg.simulate.calibration;
    let summary = AnalyzeSummary {
        n_frames: frames,
        nmr_initial: evaluation::nmr(&a.noise_psd, &a.initial, &a.initial, evaluation::Range::Broadband),
        need_count: a.mask.need().iter().filter(|&&b| b).count(),
        active_count: a.mask.active().iter().filter(|&&b| b).count(),
        music_dba: frame_power_dba(&a.music, &cal).active_mean(),
        noise_dba: frame_power_dba(&a.noise, &cal).active_mean(),
    };
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct ProcessReport {
    method: Method,
    record: EvalRecord,
    l_power: f64,
    clipped_samples: usize,
    solver_iterations: Option<usize>,
    final_lambda: Option<f64>,
}

fn load_model_arg(path: &Path) -> Result<PredictorModel> {
    check_input(path, "model file")?;
    Ok(load_model(path)?)
}

fn cmd_process(
    common: &Common,
    music: &Path,
    noise: &Path,
    method: &str,
    delta_p_max: Option<f64>,
    model: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.pipeline.validate().map_err(|e| UsageError(e.to_string()))?;
    let method = match (parse_method(method)?, delta_p_max) {
        (Method::None, _) => return usage("process needs --method estreder, solver or predictor"),
        (Method::Solver { .. }, Some(d)) if d >= 0.0 => Method::Solver { delta_p_max: Some(d) },
        (_, Some(_)) => return usage("--delta-p-max needs a nonnegative value and --method solver"),
        (m, None) => m,
    };
    let model = match (method, model) {
        (Method::Predictor, None) => return usage("--method predictor needs --model"),
        (Method::Predictor, Some(p)) => Some(load_model_arg(p)?),
        _ => None,
    };
    check_input(music, "music file")?;
    check_input(noise, "noise file")?;
    let (m, n) = scene_from_wavs(music, noise)?;
    let a = analyze_scene(&m, &n, &cfg.pipeline)?;
    let processed = process(&a, method, &cfg.pipeline, model.as_ref())?;
    let record = evaluation::evaluate_scene("input", &a, &[method], &cfg.pipeline, model.as_ref())
        .pop()
        .expect("one record per method");
    prepare_out(common, &cfg)?;
    let out = &common.out;
    let signal = render(&processed, &a)?;
    let written = write_wav(&signal, out.join("processed.wav"), BitDepth::Float32)?;
    if written.has_clipping() {
        log::warn!("{} output samples exceed full scale", written.clipped_samples);
    }
    write_gains_csv(&out.join("gains.csv"), &processed.gains)?;
    if let Some(trace) = &processed.trace {
        write_trace_csv(&out.join("trace.csv"), trace)?;
    }
    let last = processed.trace.as_ref().and_then(|t| t.last());
    let report = ProcessReport {
        method,
        record,
        l_power: loss_power(&a.music, &processed.spectrogram),
        clipped_samples: written.clipped_samples,
        solver_iterations: last.map(|r| r.iteration),
        final_lambda: last.map(|r| r.lambda),
    };
    write_json(&out.join("report.json"), &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: &Common,
    manifest: &Path,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    delta_p_max: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let t = &mut cfg.train;
    if let Some(v) = epochs {
        t.epochs = v;
    }
    if let Some(v) = learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = batch_size {
        t.batch_size = v;
    }
    if delta_p_max.is_some() {
        t.delta_p_max = delta_p_max;
    }
    if let Some(v) = seed {
        t.seed = v;
    }
    t.validate().map_err(|e| UsageError(e.to_string()))?;
    check_input(manifest, "manifest")?;
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut scenes = Vec::with_capacity(entries.len());
    for e in &entries {
        let (m, n) = scene::load_pair(e, base)?;
        scenes.push(predictor::prepare_scene(&stft(&m)?, &stft(&n)?, &cfg.train)?);
    }
    prepare_out(common, &cfg)?;
    let model = predictor::init_model(&cfg.train)?;
    let (model, log) = predictor::train(model, &scenes, &cfg.train)?;
    let out = &common.out;
    save_model(&model, &out.join("model.bin"))?;
    let mut w = csv_writer(&out.join("training_log.csv"))?;
    for e in &log.epochs {
        w.serialize(e)?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("batches.csv"))?;
    for b in &log.batches {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    common: &Common,
    manifest: &Path,
    methods: Option<String>,
    baseline: Option<String>,
    model: Option<&Path>,
    batches: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let e = &mut cfg.evaluate;
    if let Some(m) = methods {
        e.methods = Some(parse_list(&m, parse_method)?);
    }
    if let Some(b) = baseline {
        e.baseline = Some(parse_method(&b)?);
    }
    e.batches = batches.or(e.batches);
    e.batch_size = batch_size.or(e.batch_size);
    e.seed = seed.or(e.seed);
    let eval = cfg.eval_config();
    eval.pipeline.validate().map_err(|e| UsageError(e.to_string()))?;
    if eval.methods.is_empty() {
        return usage("no methods to evaluate");
    }
    let model = match model {
        Some(p) => Some(load_model_arg(p)?),
        None if eval.methods.contains(&Method::Predictor) => {
            return usage("method predictor needs --model");
        }
        None => None,
    };
    check_input(manifest, "manifest")?;
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    prepare_out(common, &cfg)?;
    let (records, report) = evaluation::evaluate_dataset(&entries, base, &eval, model.as_ref())?;
    let out = &common.out;
    evaluation::write_records_csv(&out.join("records.csv"), &records)?;
    evaluation::write_records_jsonl(&out.join("records.jsonl"), &records)?;
    evaluation::write_report_json(&out.join("stats.json"), &report)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} records carry errors");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            envs,
            per_env,
            seed,
            duration,
        } => cmd_simulate(&common, envs, per_env, seed, duration),
        Command::Analyze { common, music, noise } => cmd_analyze(&common, &music, &noise),
        Command::Process {
            common,
            music,
            noise,
            method,
            delta_p_max,
            model,
        } => cmd_process(&common, &music, &noise, &method, delta_p_max, model.as_deref()),
        Command::Train {
            common,
            manifest,
            epochs,
            learning_rate,
            batch_size,
            delta_p_max,
            seed,
        } => cmd_train(&common, &manifest, epochs, learning_rate, batch_size, delta_p_max, seed),
        Command::Evaluate {
            common,
            manifest,
            methods,
            baseline,
            model,
            batches,
            batch_size,
            seed,
        } => cmd_evaluate(
            &common,
            &manifest,
            methods,
            baseline,
            model.as_deref(),
            batches,
            batch_size,
            seed,
        ),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<maskeq::Error>() {
        Some(
            maskeq::Error::Config(_) | maskeq::Error::UnknownEnvironment(_) | maskeq::Error::UnknownHeadphone(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
