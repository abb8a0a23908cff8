use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size evaluated with the exact null distribution.
pub const EXACT_MAX_N: usize = 20;
pub const MIN_PAIRS: usize = 5;

/// Nonzero differences with their midranks of `|d|`.
fn signed_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::Stats(format!("need at least {MIN_PAIRS} pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite sample".into()));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = mid);
        i = j + 1;
    }
    Ok((d, ranks))
}

fn w_plus(d: &[f64], ranks: &[f64]) -> f64 {
    d.iter().zip(ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum()
}

/// Exact two-sided p by enumerating the sign-flip distribution of the
/// (mid)ranks.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    let (d, ranks) = signed_ranks(a, b)?;
    if d.is_empty() {
        return Ok(1.0);
    }
    // Midranks are multiples of 1/2; count in half-units.
    let halves: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = halves.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &h in &halves {
        for s in (h..=total).rev() {
            counts[s] += counts[s - h];
        }
    }
    let all = 2f64.powi(d.len() as i32);
    let w = (2.0 * w_plus(&d, &ranks)).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    Ok((2.0 * lower.min(upper)).min(1.0))
}

/// Normal approximation with tie and continuity corrections.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    let (d, ranks) = signed_ranks(a, b)?;
    if d.is_empty() {
        return Ok(1.0);
    }
    let n = d.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut i = 0;
    while i < ranks.len() {
        let j = ranks[i..].iter().take_while(|&&r| r == ranks[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((w_plus(&d, &ranks) - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Stats(e.to_string()))?;
    Ok((2.0 * (1.0 - normal.cdf(z))).min(1.0))
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples; exact for up
/// to 20 nonzero differences, normal approximation above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    let nonzero = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if nonzero <= EXACT_MAX_N {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}

pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_all_positive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        assert!((wilcoxon_exact(&a, &b).unwrap() - 0.0625).abs() < 1e-15);
        assert!((wilcoxon_signed_rank(&b, &a).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap(), 1.0);
        assert_eq!(wilcoxon_normal(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn too_few_pairs() {
        assert!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn exact_small_table() {
        // n = 6, W+ = 2 (only rank 2 positive): P(W+ <= 2) = 3/64.
        let a = [-1.0, 2.0, -3.0, -4.0, -5.0, -6.0];
        let p = wilcoxon_exact(&a, &[0.0; 6]).unwrap();
        assert!((p - 6.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn bonferroni_caps() {
        assert_eq!(bonferroni(0.01, 8), 0.08);
        assert_eq!(bonferroni(0.3, 8), 1.0);
    }
}
