use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, FEATURE_CENTER_DB, FEATURE_DIM, FEATURE_SCALE_DB};
use crate::error::{Error, Result};
use crate::shaping::{GainMatrix, NUM_GAIN_BANDS};

pub const MODEL_MAGIC: &[u8; 4] = b"DPNM";
pub const MODEL_VERSION: u32 = 1;

/// Fully connected network with rectified hidden layers and a linear
/// output. Parameters are stored flat, layer by layer, weights (row-major,
/// `out × in`) before biases.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    layer_dims: Vec<usize>,
    seed: u64,
    norm_center: f64,
    norm_scale: f64,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Per-layer activations kept for backpropagation.
pub(crate) struct Activations {
    /// `layers[0]` is the input; `layers[l]` the (rectified) output of layer l.
    pub layers: Vec<Vec<f64>>,
}

impl PredictorModel {
    /// Uniform fan-in initialisation, `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn new(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {layer_dims:?}")));
        }
        if layer_dims[0] != FEATURE_DIM || *layer_dims.last().unwrap() != NUM_GAIN_BANDS {
            return Err(Error::Config(format!(
                "layer dims must start at {FEATURE_DIM} and end at {NUM_GAIN_BANDS}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(PredictorModel {
            layer_dims,
            seed,
            norm_center: FEATURE_CENTER_DB,
            norm_scale: FEATURE_SCALE_DB,
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normalization(&self) -> (f64, f64) {
        (self.norm_center, self.norm_scale)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn forward_frame(&self, input: &[f64]) -> Activations {
        let mut layers = vec![input.to_vec()];
        let mut offset = 0;
        let last = self.layer_dims.len() - 2;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = &layers[l];
            let y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = biases[o]
                        + weights[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            layers.push(y);
        }
        Activations { layers }
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    pub(crate) fn backward_frame(&self, acts: &Activations, d_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.layer_dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l < n_layers - 1 {
                for (d, &a) in delta.iter_mut().zip(&acts.layers[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let off = offsets[l];
            let x = &acts.layers[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (g, &xi) in grad[off + o * n_in..off + (o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Raw network gains (before masking and clamping).
    pub fn forward(&self, feats: &FeatureMatrix) -> Result<GainMatrix> {
        let mut out = Vec::with_capacity(feats.n_frames() * NUM_GAIN_BANDS);
        for n in 0..feats.n_frames() {
            let acts = self.forward_frame(feats.row(n));
            out.extend_from_slice(acts.layers.last().unwrap());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        GainMatrix::from_db(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + self.params.len() * 8);
        b.extend_from_slice(MODEL_MAGIC);
        b.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.norm_center.to_le_bytes());
        b.extend_from_slice(&self.norm_scale.to_le_bytes());
        for p in &self.params {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b
    }

    /// Parses a model file image. Errors carry a reason string.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ModelParseError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(ModelParseError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(ModelParseError::Version(version));
        }
        let n_dims = r.u32()? as usize;
        if n_dims < 2 || n_dims > 64 {
            return Err(ModelParseError::Format(format!("{n_dims} layer dims")));
        }
        let layer_dims = (0..n_dims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let seed = r.u64()?;
        let norm_center = r.f64()?;
        let norm_scale = r.f64()?;
        let count = param_count(&layer_dims);
        if r.remaining() != count * 8 {
            return Err(ModelParseError::Format(format!(
                "expected {} parameter bytes, found {}",
                count * 8,
                r.remaining()
            )));
        }
        let params = (0..count).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelParseError::Format("non-finite parameter".into()));
        }
        if layer_dims[0] != FEATURE_DIM || *layer_dims.last().unwrap() != NUM_GAIN_BANDS {
            return Err(ModelParseError::Format(format!("unsupported layer dims {layer_dims:?}")));
        }
        Ok(PredictorModel {
            layer_dims,
            seed,
            norm_center,
            norm_scale,
            params,
        })
    }
}

#[derive(Debug)]
pub enum ModelParseError {
    Version(u32),
    Format(String),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ModelParseError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelParseError::Format("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> std::result::Result<u32, ModelParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, ModelParseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, ModelParseError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(model: &PredictorModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    PredictorModel::from_bytes(&bytes).map_err(|e| match e {
        ModelParseError::Version(found) => Error::ModelVersion {
            found,
            expected: MODEL_VERSION,
        },
        ModelParseError::Format(reason) => Error::Parse {
            path: path.to_path_buf(),
            reason,
        },
    })
}
