//! Synthetic listening scenes: music proxy and ambient noise heard through
//! a headphone's passive attenuation, at sampled dBA levels.

mod profiles;
mod synth;

pub use profiles::{
    EnvironmentProfile, HeadphoneProfile, NoiseRecipe, ENVIRONMENTS, HEADPHONES,
    NOISE_LEVEL_MAX_DBA, NOISE_LEVEL_MIN_DBA,
};
pub use synth::{apply_headphone, synth_music_samples, synth_noise_recipe};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{
    frame_power_dba, read_wav, stft, write_wav, BitDepth, Calibration, Signal, SAMPLE_RATE,
    WINDOW_LEN,
};

pub const MUSIC_LEVEL_MIN_DBA: f64 = 45.0;
pub const MUSIC_LEVEL_MAX_DBA: f64 = 100.0;
pub const SNR_RANGE_DB: (f64, f64) = (-5.0, 15.0);
pub const DEFAULT_DURATION_S: f64 = 10.0;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

const STREAM_SPEC: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_MUSIC: u64 = 2;

/// Sampled parameters of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub environment: String,
    pub headphone: String,
    /// Ambient level before the headphone.
    pub noise_level_dba: f64,
    pub snr_db: f64,
    pub music_level_dba: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent per-scene seed derived from a dataset seed and scene index.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws levels and a headphone for `environment`: noise from a normal
/// distribution truncated to [40, 95] dBA, SNR uniform in [-5, 15] dB and
/// the music level clamped to [45, 100] dBA.
pub fn sample_scene(environment: &str, seed: u64) -> Result<SceneSpec> {
    let env = EnvironmentProfile::named(environment)?;
    let mut rng = rng_for(seed, STREAM_SPEC);
    let normal = Normal::new(env.noise_level_mean, env.noise_level_std)
        .map_err(|e| Error::Config(e.to_string()))?;
    let noise_level_dba = loop {
        let v = normal.sample(&mut rng);
        if (NOISE_LEVEL_MIN_DBA..=NOISE_LEVEL_MAX_DBA).contains(&v) {
            break v;
        }
    };
    let snr_db = rng.gen_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
    let headphone = HEADPHONES[rng.gen_range(0..HEADPHONES.len())].to_string();
    Ok(SceneSpec {
        environment: env.name.to_string(),
        headphone,
        noise_level_dba,
        snr_db,
        music_level_dba: music_level(noise_level_dba, snr_db),
        duration_s: DEFAULT_DURATION_S,
        seed,
    })
}

pub fn music_level(noise_level_dba: f64, snr_db: f64) -> f64 {
    (noise_level_dba + snr_db).clamp(MUSIC_LEVEL_MIN_DBA, MUSIC_LEVEL_MAX_DBA)
}

/// Environment noise before normalisation.
pub fn synth_noise(spec: &SceneSpec) -> Result<Signal> {
    let env = EnvironmentProfile::named(&spec.environment)?;
    let mut rng = rng_for(spec.seed, STREAM_NOISE);
    Signal::new(synth_noise_recipe(&env.recipe, spec.n_samples(), &mut rng), SAMPLE_RATE)
}

/// Music proxy before normalisation.
pub fn synth_music(spec: &SceneSpec) -> Result<Signal> {
    let mut rng = rng_for(spec.seed, STREAM_MUSIC);
    Signal::new(synth_music_samples(spec.n_samples(), &mut rng), SAMPLE_RATE)
}

/// Mean frame dBA over non-silent frames.
pub fn measure_dba(signal: &Signal, calibration: &Calibration) -> Result<f64> {
    if signal.len() < WINDOW_LEN {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            min: WINDOW_LEN,
        });
    }
    frame_power_dba(&stft(signal)?, calibration)
        .active_mean()
        .ok_or(Error::SilentSignal)
}

/// Scales `signal` so its mean frame dBA equals `target_dba`.
pub fn normalize_dba(signal: &Signal, target_dba: f64, calibration: &Calibration) -> Result<Signal> {
    let level = measure_dba(signal, calibration)?;
    Ok(signal.scaled(10f64.powf((target_dba - level) / 20.0)))
}

/// Music and at-ear noise of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub music: Signal,
    /// Noise after the headphone's passive attenuation.
    pub noise: Signal,
    pub spec: SceneSpec,
    /// Measured level of `noise`.
    pub noise_at_ear_dba: f64,
}

/// Synthesises a scene: noise normalised to the ambient level then passed
/// through the headphone; music normalised to its level. Both are rounded
/// to f32 precision, the storage format.
pub fn generate_scene(spec: &SceneSpec, calibration: &Calibration) -> Result<ScenePair> {
    let headphone = HeadphoneProfile::named(&spec.headphone)?;
    let ambient = normalize_dba(&synth_noise(spec)?, spec.noise_level_dba, calibration)?;
    let noise = apply_headphone(&ambient, &headphone)?.quantized_f32();
    let music = normalize_dba(&synth_music(spec)?, spec.music_level_dba, calibration)?.quantized_f32();
    let noise_at_ear_dba = measure_dba(&noise, calibration)?;
    Ok(ScenePair {
        music,
        noise,
        spec: spec.clone(),
        noise_at_ear_dba,
    })
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub environment: String,
    pub headphone: String,
    pub noise_level_dba: f64,
    pub snr_db: f64,
    pub music_level_dba: f64,
    pub noise_at_ear_dba: f64,
    pub duration_s: f64,
    /// Relative to the manifest's directory.
    pub music_path: PathBuf,
    pub noise_path: PathBuf,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            environment: self.environment.clone(),
            headphone: self.headphone.clone(),
            noise_level_dba: self.noise_level_dba,
            snr_db: self.snr_db,
            music_level_dba: self.music_level_dba,
            duration_s: self.duration_s,
            seed: self.seed,
        }
    }
}

/// Generation settings for a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub environments: Vec<String>,
    pub count_per_env: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub calibration: Calibration,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            environments: ENVIRONMENTS.iter().map(|s| s.to_string()).collect(),
            count_per_env: 5,
            seed: 0,
            duration_s: DEFAULT_DURATION_S,
            calibration: Calibration::default(),
        }
    }
}

/// Scene specs of a manifest, in order: environment-major, then index.
pub fn manifest_specs(config: &SimulateConfig) -> Result<Vec<SceneSpec>> {
    if !(config.duration_s * SAMPLE_RATE as f64 >= WINDOW_LEN as f64) {
        return Err(Error::Config("duration_s is shorter than one analysis window".into()));
    }
    let mut specs = Vec::new();
    for (e, env) in config.environments.iter().enumerate() {
        for k in 0..config.count_per_env {
            let index = (e * config.count_per_env + k) as u64;
            let mut spec = sample_scene(env, scene_seed(config.seed, index))?;
            spec.duration_s = config.duration_s;
            specs.push(spec);
        }
    }
    Ok(specs)
}

/// Generates every scene, writes float32 WAV pairs and `manifest.jsonl`
/// into `out_dir`, and returns the entries.
pub fn build_manifest(config: &SimulateConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let specs = manifest_specs(config)?;
    let pairs: Vec<ScenePair> = specs
        .par_iter()
        .map(|s| generate_scene(s, &config.calibration))
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let id = format!("scene_{i:04}");
        let music_path = PathBuf::from(format!("{id}_music.wav"));
        let noise_path = PathBuf::from(format!("{id}_noise.wav"));
        write_wav(&pair.music, out_dir.join(&music_path), BitDepth::Float32)?;
        write_wav(&pair.noise, out_dir.join(&noise_path), BitDepth::Float32)?;
        let s = &pair.spec;
        entries.push(ManifestEntry {
            id,
            environment: s.environment.clone(),
            headphone: s.headphone.clone(),
            noise_level_dba: s.noise_level_dba,
            snr_db: s.snr_db,
            music_level_dba: s.music_level_dba,
            noise_at_ear_dba: pair.noise_at_ear_dba,
            duration_s: s.duration_s,
            music_path,
            noise_path,
            seed: s.seed,
        });
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(|err| Error::Parse {
            path: path.to_path_buf(),
            reason: err.to_string(),
        })?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(entries)
}

/// Reads a manifest entry's WAV pair; paths are relative to `base_dir`.
pub fn load_pair(entry: &ManifestEntry, base_dir: &Path) -> Result<(Signal, Signal)> {
    Ok((
        read_wav(&base_dir.join(&entry.music_path))?,
        read_wav(&base_dir.join(&entry.noise_path))?,
    ))
}

/// Fraction of 2048-sample blocks with RMS above -80 dBFS.
pub fn activity_ratio(signal: &Signal) -> f64 {
    let blocks: Vec<f64> = signal
        .samples()
        .chunks(WINDOW_LEN)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    if blocks.is_empty() {
        return 0.0;
    }
    blocks.iter().filter(|&&r| r > 1e-4).count() as f64 / blocks.len() as f64
}

/// Minimum active-block ratio for user recordings.
pub const MIN_ACTIVITY: f64 = 0.5;

/// Assembles a scene from user WAV files, rejecting mostly silent ones.
pub fn scene_from_wavs(music_path: &Path, noise_path: &Path) -> Result<(Signal, Signal)> {
    let music = read_wav(music_path)?;
    let noise = read_wav(noise_path)?;
    for (path, s) in [(music_path, &music), (noise_path, &noise)] {
        if activity_ratio(s) < MIN_ACTIVITY {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: "recording is mostly silent".into(),
            });
        }
    }
    let len = music.len().min(noise.len());
    if len < WINDOW_LEN {
        return Err(Error::SignalTooShort { len, min: WINDOW_LEN });
    }
    Ok((
        Signal::new(music.samples()[..len].to_vec(), SAMPLE_RATE)?,
        Signal::new(noise.samples()[..len].to_vec(), SAMPLE_RATE)?,
    ))
}
