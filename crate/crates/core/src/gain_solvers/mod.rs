//! Gain computation: the per-band baseline rule and the constrained
//! optimizer that minimises the masking deficit under a level budget with
//! a projected multiplier update.

mod objective;
mod optimizer;

pub use objective::{FrameEval, FrameObjective, SceneLosses, SceneObjective};
pub use optimizer::{solve_gains, solve_with_mask, SolverConfig, SolverTrace, TraceRow};

use crate::bark::{BandPsd, NUM_BANDS};
use crate::masking::ThresholdMatrix;
use crate::shaping::{clamp_gain, GainMatrix, NUM_GAIN_BANDS};
use crate::signal_io::{frame_power_dba, Calibration, Spectrogram};

/// Bands where the noise exceeds the initial thresholds, and the actuated
/// bands close enough to one of them to help.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedMask {
    n_frames: usize,
    need: Vec<bool>,
    active: Vec<bool>,
}

impl NeedMask {
    /// Builds a mask from explicit `need` (`n_frames × 26`) and `active`
    /// (`n_frames × 24`) flags.
    pub fn new(n_frames: usize, need: Vec<bool>, active: Vec<bool>) -> crate::Result<Self> {
        if need.len() != n_frames * NUM_BANDS || active.len() != n_frames * NUM_GAIN_BANDS {
            return Err(crate::Error::Shape(format!(
                "need mask of {} frames needs {} and {} flags, got {} and {}",
                n_frames,
                n_frames * NUM_BANDS,
                n_frames * NUM_GAIN_BANDS,
                need.len(),
                active.len()
            )));
        }
        Ok(NeedMask {
            n_frames,
            need,
            active,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// `n_frames × 26`
    pub fn need(&self) -> &[bool] {
        &self.need
    }

    /// `n_frames × 24`
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn need_row(&self, n: usize) -> &[bool] {
        &self.need[n * NUM_BANDS..(n + 1) * NUM_BANDS]
    }

    pub fn active_row(&self, n: usize) -> &[bool] {
        &self.active[n * NUM_GAIN_BANDS..(n + 1) * NUM_GAIN_BANDS]
    }

    pub fn any_active(&self) -> bool {
        self.active.iter().any(|&a| a)
    }
}

/// `need(n,ν) = noise_dB > T_dB`; `active(n,μ)` is set when some needed band
/// lies within `reach_radius` bands of μ.
pub fn need_mask(noise: &BandPsd, initial: &ThresholdMatrix, reach_radius: usize) -> NeedMask {
    let n_frames = noise.n_frames();
    let mut need = Vec::with_capacity(n_frames * NUM_BANDS);
    let mut active = Vec::with_capacity(n_frames * NUM_GAIN_BANDS);
    for n in 0..n_frames {
        let row: Vec<bool> = noise
            .db(n)
            .iter()
            .zip(initial.db(n))
            .map(|(nd, td)| nd > td)
            .collect();
        for mu in 0..NUM_GAIN_BANDS {
            let lo = mu.saturating_sub(reach_radius);
            let hi = (mu + reach_radius).min(NUM_BANDS - 1);
            active.push(row[lo..=hi].iter().any(|&x| x));
        }
        need.extend(row);
    }
    NeedMask {
        n_frames,
        need,
        active,
    }
}

/// Baseline rule: each band is raised by the amount its noise exceeds the
/// initial threshold, `max(noise_dB − T_dB, 0)`, then clamped.
pub fn estreder_gains(noise: &BandPsd, thresholds: &ThresholdMatrix) -> GainMatrix {
    let mut g = GainMatrix::zeros(noise.n_frames());
    for n in 0..noise.n_frames() {
        let nd = noise.db(n);
        let td = thresholds.db(n);
        for (b, v) in g.row_mut(n).iter_mut().enumerate() {
            *v = clamp_gain((nd[b] - td[b]).max(0.0));
        }
    }
    g
}

/// Mean masking deficit over all frames and 26 bands, in dB.
pub fn loss_l0(noise: &BandPsd, processed: &ThresholdMatrix) -> f64 {
    let n = noise.n_frames();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = noise
        .db_rows()
        .zip(processed.db_rows())
        .flat_map(|(nd, td)| nd.iter().zip(td).map(|(a, b)| (a - b).max(0.0)))
        .sum();
    total / (n * NUM_BANDS) as f64
}

/// Mean absolute change of the per-frame A-weighted level, in dBA.
pub fn loss_power(original: &Spectrogram, processed: &Spectrogram) -> f64 {
    let cal = Calibration::default();
    let a = frame_power_dba(original, &cal);
    let b = frame_power_dba(processed, &cal);
    if a.is_empty() {
        return 0.0;
    }
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (y - x).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// `L0 − λ·(ΔP_max − L_power)`.
pub fn total_loss(l0: f64, l_power: f64, lambda: f64, delta_p_max: f64) -> f64 {
    l0 - lambda * (delta_p_max - l_power)
}

/// Projected ascent step on the multiplier.
pub fn update_lambda(lambda: f64, l_power: f64, delta_p_max: f64, lambda_rate: f64) -> f64 {
    (lambda + lambda_rate * (l_power - delta_p_max)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psd(rows: &[[f64; NUM_BANDS]]) -> BandPsd {
        BandPsd::from_linear(
            rows.iter()
                .flat_map(|r| r.iter().map(|db| 10f64.powf(db / 10.0)))
                .collect(),
        )
        .unwrap()
    }

    fn thr(rows: &[[f64; NUM_BANDS]]) -> ThresholdMatrix {
        ThresholdMatrix::from_linear(
            rows.iter()
                .flat_map(|r| r.iter().map(|db| 10f64.powf(db / 10.0)))
                .collect(),
        )
    }

    #[test]
    fn baseline_rule() {
        let mut noise = [40.0; NUM_BANDS];
        let mut t = [50.0; NUM_BANDS];
        noise[3] = 60.0;
        t[3] = 52.0;
        noise[7] = 70.0;
        t[7] = 52.0;
        let g = estreder_gains(&psd(&[noise]), &thr(&[t]));
        assert!((g.get(0, 3) - 8.0).abs() < 1e-9);
        assert!((g.get(0, 7) - 10.0).abs() < 1e-12);
        assert_eq!(g.get(0, 0), 0.0);
        assert!(g.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mask_windows() {
        let quiet = need_mask(&psd(&[[10.0; NUM_BANDS]]), &thr(&[[20.0; NUM_BANDS]]), 3);
        assert!(!quiet.any_active());

        let mut noise = [10.0; NUM_BANDS];
        noise[9] = 30.0;
        let m = need_mask(&psd(&[noise]), &thr(&[[20.0; NUM_BANDS]]), 3);
        let active: Vec<usize> = (0..NUM_GAIN_BANDS).filter(|&b| m.active_row(0)[b]).collect();
        assert_eq!(active, (6..=12).collect::<Vec<_>>());

        let mut noise = [10.0; NUM_BANDS];
        noise[25] = 30.0;
        let m = need_mask(&psd(&[noise]), &thr(&[[20.0; NUM_BANDS]]), 2);
        let active: Vec<usize> = (0..NUM_GAIN_BANDS).filter(|&b| m.active_row(0)[b]).collect();
        assert_eq!(active, vec![23]);
    }

    #[test]
    fn l0_values() {
        let noise = psd(&[[30.0; NUM_BANDS]; 10]);
        assert_eq!(loss_l0(&noise, &thr(&[[40.0; NUM_BANDS]; 10])), 0.0);
        let mut rows = [[40.0; NUM_BANDS]; 10];
        rows[4][5] = 17.0;
        assert!((loss_l0(&noise, &thr(&rows)) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn multiplier_arithmetic() {
        assert_eq!(total_loss(0.7, 3.0, 0.0, 1.0), 0.7);
        assert_eq!(total_loss(0.7, 1.0, 5.0, 1.0), 0.7);
        assert!((total_loss(0.5, 3.0, 2.0, 1.0) - 4.5).abs() < 1e-12);
        assert_eq!(update_lambda(0.0, 0.5, 1.0, 1e-3), 0.0);
        assert!((update_lambda(0.1, 3.0, 1.0, 1e-3) - 0.102).abs() < 1e-12);
        assert_eq!(update_lambda(0.001, 1.0, 3.0, 1e-3), 0.0);
    }

    #[test]
    fn power_loss_values() {
        use crate::shaping::{apply_response, ResponseMatrix};
        use num_complex::Complex64;
        let mut spec = Spectrogram::zeros(4, 3584);
        for n in 0..4 {
            for (k, x) in spec.frame_mut(n).iter_mut().enumerate() {
                *x = Complex64::new(1.0 / (1.0 + k as f64), 0.0);
            }
        }
        assert_eq!(loss_power(&spec, &spec), 0.0);
        let up = apply_response(&spec, &ResponseMatrix::flat(4, 2.0)).unwrap();
        assert!((loss_power(&spec, &up) - 2.0).abs() < 1e-9);
        let mut alt = spec.clone();
        for n in 0..4 {
            let g = if n % 2 == 0 { 2.0 } else { -2.0 };
            for x in alt.frame_mut(n) {
                *x *= 10f64.powf(g / 20.0);
            }
        }
        assert!((loss_power(&spec, &alt) - 2.0).abs() < 1e-9);
    }
}
