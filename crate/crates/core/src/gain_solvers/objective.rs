//! Differentiable per-frame masking objective.
//!
//! For gains `g` on the 24 actuated bands the processed power of bin `k` is
//! `p̂_k = p_k·10^(r_k/10)` with `r = Σ_b g_b·w_b`. From `p̂` the frame's
//! band powers, tonality and thresholds are recomputed, giving
//!
//! * `l0 = Σ_ν max(noise_dB(ν) − T̂_dB(ν), 0)` (unnormalised masking deficit),
//! * `Δ = P̂_dBA − P_dBA` (level change).
//!
//! Gradients of both with respect to `g` are exact, including the path
//! through the spectral-flatness tonality coefficient.

use std::f64::consts::LN_10;

use crate::bark::{band_powers, power_db, BandPsd, BarkBands, NUM_BANDS};
use crate::masking::{
    threshold_alpha_sensitivity, threshold_frame, MaskingOptions, SpreadingMatrix, SFM_MAX_DB,
};
use crate::shaping::{PatternBank, NUM_GAIN_BANDS};
use crate::signal_io::{a_weighting_power_gains, Spectrogram, NUM_BINS};

const NEPER_PER_DB: f64 = LN_10 / 10.0;
const DB_PER_NEPER: f64 = 10.0 / LN_10;
const SFM_POWER_FLOOR: f64 = 1e-300;

/// Loss terms and gradients of one frame.
#[derive(Debug, Clone)]
pub struct FrameEval {
    /// `Σ_ν ReLU(noise_dB − T̂_dB)` over all 26 bands.
    pub l0_sum: f64,
    /// Processed minus original A-weighted level, dB.
    pub level_change_db: f64,
    pub grad_l0: [f64; NUM_GAIN_BANDS],
    pub grad_level: [f64; NUM_GAIN_BANDS],
    /// Processed thresholds in dB.
    pub thresholds_db: [f64; NUM_BANDS],
}

/// Everything needed to evaluate one frame for arbitrary gains.
#[derive(Debug, Clone)]
pub struct FrameObjective {
    music_power: Vec<f64>,
    ln_music_power: Vec<f64>,
    noise_db: [f64; NUM_BANDS],
    base_level_power: f64,
    options: MaskingOptions,
}

impl FrameObjective {
    pub fn new(music_power: Vec<f64>, noise_db: &[f64], options: MaskingOptions) -> Self {
        assert_eq!(music_power.len(), NUM_BINS);
        let ln_music_power = music_power.iter().map(|p| p.max(SFM_POWER_FLOOR).ln()).collect();
        let base_level_power = weighted_sum(&music_power);
        let mut nd = [0.0; NUM_BANDS];
        nd.copy_from_slice(&noise_db[..NUM_BANDS]);
        FrameObjective {
            music_power,
            ln_music_power,
            noise_db: nd,
            base_level_power,
            options,
        }
    }

    pub fn music_power(&self) -> &[f64] {
        &self.music_power
    }

    pub fn noise_db(&self) -> &[f64; NUM_BANDS] {
        &self.noise_db
    }

    /// Evaluates losses and gradients at `gains`.
    pub fn evaluate(&self, gains: &[f64]) -> FrameEval {
        let bank = PatternBank::standard();
        let bands = BarkBands::standard();
        let a_gains = a_weighting_power_gains();

        let mut response = [0.0; NUM_BINS];
        bank.compose_into(gains, &mut response);
        let mut power = [0.0; NUM_BINS];
        for ((p, &p0), &r) in power.iter_mut().zip(&self.music_power).zip(&response) {
            *p = p0 * (r * NEPER_PER_DB).exp();
        }

        // Tonality on bins 1..K-1.
        let n_sfm = (NUM_BINS - 1) as f64;
        let arith_sum: f64 = power[1..].iter().sum();
        let (alpha, alpha_live) = if arith_sum > 0.0 {
            let mean_ln: f64 = power[1..]
                .iter()
                .zip(&self.ln_music_power[1..])
                .zip(&response[1..])
                .map(|((&p, &lnp), &r)| {
                    if p >= SFM_POWER_FLOOR {
                        lnp + r * NEPER_PER_DB
                    } else {
                        SFM_POWER_FLOOR.ln()
                    }
                })
                .sum::<f64>()
                / n_sfm;
            let sfm_db = (DB_PER_NEPER * (mean_ln - (arith_sum / n_sfm).ln())).min(0.0);
            let alpha = (sfm_db / SFM_MAX_DB).clamp(0.0, 1.0);
            (alpha, sfm_db > SFM_MAX_DB && sfm_db < 0.0)
        } else {
            (0.0, false)
        };

        let mut band = [0.0; NUM_BANDS];
        band_powers(&power, &mut band);
        let frame = threshold_frame(&band, alpha, &self.options);

        let mut thresholds_db = [0.0; NUM_BANDS];
        let mut l0_sum = 0.0;
        // ∂l0/∂T̂(ν)
        let mut d_thr = [0.0; NUM_BANDS];
        for nu in 0..NUM_BANDS {
            let t = frame.linear[nu];
            thresholds_db[nu] = power_db(t);
            let gap = self.noise_db[nu] - thresholds_db[nu];
            if gap > 0.0 {
                l0_sum += gap;
                if t > crate::bark::POWER_FLOOR {
                    d_thr[nu] = -DB_PER_NEPER / t;
                }
            }
        }

        // ∂l0/∂B̂(μ) through the spreading sum (floor-active rows carry none).
        let spreading = SpreadingMatrix::standard();
        let mut d_band = [0.0; NUM_BANDS];
        for nu in 0..NUM_BANDS {
            if d_thr[nu] == 0.0 || frame.floor_active[nu] {
                continue;
            }
            let scale = d_thr[nu] * frame.unfloored[nu];
            let c: f64 = (0..NUM_BANDS).map(|mu| spreading.get(nu, mu) * band[mu]).sum();
            if c <= 0.0 {
                continue;
            }
            // T(ν) = c(ν)·q(ν) with q independent of B, so ∂T/∂B(μ) = s·T/c.
            let k = scale / c;
            for (mu, d) in d_band.iter_mut().enumerate() {
                *d += k * spreading.get(nu, mu);
            }
        }

        // ∂l0/∂alpha
        let d_alpha = if alpha_live {
            threshold_alpha_sensitivity(&frame)
                .iter()
                .zip(&d_thr)
                .map(|(s, d)| s * d)
                .sum::<f64>()
        } else {
            0.0
        };

        // Per-bin sensitivities with respect to the response in dB.
        let level_power = weighted_sum(&power);
        let mut d_resp_l0 = [0.0; NUM_BINS];
        let mut d_resp_level = [0.0; NUM_BINS];
        let bin_band = bands.bin_to_band();
        for k in 0..NUM_BINS {
            let p = power[k];
            let mut d = d_band[bin_band[k]] * p * NEPER_PER_DB;
            if d_alpha != 0.0 && k >= 1 {
                let geo = if p >= SFM_POWER_FLOOR { 1.0 / n_sfm } else { 0.0 };
                let d_sfm = geo - p / arith_sum;
                d += d_alpha * d_sfm / SFM_MAX_DB;
            }
            d_resp_l0[k] = d;
            if level_power > 0.0 {
                d_resp_level[k] = a_gains[k] * p / level_power;
            }
        }
        let mut grad_l0 = [0.0; NUM_GAIN_BANDS];
        let mut grad_level = [0.0; NUM_GAIN_BANDS];
        bank.project(&d_resp_l0, &mut grad_l0);
        bank.project(&d_resp_level, &mut grad_level);

        let level_change_db = if level_power > 0.0 && self.base_level_power > 0.0 {
            DB_PER_NEPER * (level_power / self.base_level_power).ln()
        } else {
            0.0
        };

        FrameEval {
            l0_sum,
            level_change_db,
            grad_l0,
            grad_level,
            thresholds_db,
        }
    }
}

fn weighted_sum(power: &[f64]) -> f64 {
    power
        .iter()
        .zip(a_weighting_power_gains())
        .map(|(p, a)| p * a)
        .sum()
}

/// Frame objectives for a whole scene.
#[derive(Debug, Clone)]
pub struct SceneObjective {
    frames: Vec<FrameObjective>,
}

/// Scene-level loss values at a gain matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLosses {
    pub l0: f64,
    pub l_power: f64,
}

impl SceneObjective {
    pub fn new(music: &Spectrogram, noise_psd: &BandPsd, options: MaskingOptions) -> Self {
        let frames = (0..music.n_frames())
            .map(|n| FrameObjective::new(music.frame_power(n), noise_psd.db(n), options))
            .collect();
        SceneObjective { frames }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, n: usize) -> &FrameObjective {
        &self.frames[n]
    }

    /// L0 (mean over frames and all 26 bands) and L_power (mean absolute
    /// level change) at `gains`.
    pub fn losses(&self, gains: &crate::shaping::GainMatrix) -> SceneLosses {
        let n = self.frames.len().max(1) as f64;
        let (l0, lp) = self
            .frames
            .iter()
            .zip(gains.rows())
            .map(|(f, g)| {
                let e = f.evaluate(g);
                (e.l0_sum, e.level_change_db.abs())
            })
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        SceneLosses {
            l0: l0 / (n * NUM_BANDS as f64),
            l_power: lp / n,
        }
    }

    /// Gradient of `L0 − λ·(ΔP_max − L_power)` with respect to every gain.
    pub fn total_loss_gradient(&self, gains: &crate::shaping::GainMatrix, lambda: f64) -> crate::shaping::GainMatrix {
        let n = self.frames.len().max(1) as f64;
        let mut out = crate::shaping::GainMatrix::zeros(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let e = f.evaluate(gains.row(i));
            let sign = e.level_change_db.signum() * f64::from(e.level_change_db != 0.0);
            for (b, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = e.grad_l0[b] / (n * NUM_BANDS as f64) + lambda * sign * e.grad_level[b] / n;
            }
        }
        out
    }
}
