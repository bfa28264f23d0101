//! Small statistics helpers shared by the samplers and the oracle checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mean with a standard-error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Mean and naive standard error (samples treated as independent).
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Biased (1/n) variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Delete-one-block jackknife of a statistic over `blocks` contiguous blocks.
/// Returns the full-sample value with the jackknife standard error.
pub fn jackknife(values: &[f64], blocks: usize, stat: impl Fn(&[f64]) -> f64) -> Estimate {
    let full = stat(values);
    let blocks = blocks.min(values.len());
    if blocks < 2 {
        return Estimate {
            mean: full,
            stderr: 0.0,
        };
    }
    let len = values.len() / blocks;
    let used = len * blocks;
    let mut buf = Vec::with_capacity(used);
    let partial: Vec<f64> = (0..blocks)
        .map(|k| {
            buf.clear();
            buf.extend_from_slice(&values[..k * len]);
            buf.extend_from_slice(&values[(k + 1) * len..used]);
            stat(&buf)
        })
        .collect();
    let pm = mean(&partial);
    let b = blocks as f64;
    let var = (b - 1.0) / b * partial.iter().map(|x| (x - pm).powi(2)).sum::<f64>();
    Estimate {
        mean: full,
        stderr: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of observed counts against probabilities.
///
/// Bins expecting fewer than five counts are pooled together (and the pool is
/// folded into the smallest remaining bin if it is still too small). Counts
/// observed where the probability is exactly zero give p = 0.
pub fn chi_square_test(observed: &[u64], probabilities: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), probabilities.len());
    let total: u64 = observed.iter().sum();
    let t = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probabilities) {
        if p == 0.0 {
            if o > 0 {
                return ChiSquareResult {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = p * t;
        if e < 5.0 {
            pool.0 += o as f64;
            pool.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pool.1 > 0.0 {
        if pool.1 >= 5.0 || bins.is_empty() {
            bins.push(pool);
        } else {
            let (i, _) = bins
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .unwrap();
            bins[i].0 += pool.0;
            bins[i].1 += pool.1;
        }
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn population_std_case() {
        let s = population_std(&[1.0, 1.2, 1.4, 1.0, 1.4]);
        assert!((s - 0.032f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jackknife_of_mean_matches_standard_error() {
        let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64).collect();
        let jk = jackknife(&v, 100, mean);
        let naive = Estimate::from_samples(&v);
        assert!((jk.stderr - naive.stderr).abs() < 1e-10);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let r = chi_square_test(&[250, 250, 500], &[0.25, 0.25, 0.5]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let r = chi_square_test(&[1, 999], &[0.0, 1.0]);
        assert_eq!(r.p_value, 0.0);
        let r = chi_square_test(&[900, 100], &[0.5, 0.5]);
        assert!(r.p_value < 1e-10);
    }
}
