//! From predictions to transition estimates: mean prediction per label, the
//! central-difference derivative D(β), its peak β*, ensemble spread and the
//! logarithmic finite-size fit.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::predictor::BetaPredictor;
use crate::stats::{mean, population_std};

pub const DEFAULT_SMOOTHING_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub beta_labels: Vec<f64>,
    pub mean_pred: Vec<f64>,
    pub counts: Vec<usize>,
    /// Population standard deviation of the predictions at each label.
    pub spread: Vec<f64>,
}

impl PredictionCurve {
    pub fn from_points(beta_labels: Vec<f64>, mean_pred: Vec<f64>) -> Result<Self> {
        if beta_labels.len() != mean_pred.len() {
            return Err(Error::SizeMismatch {
                expected: beta_labels.len(),
                found: mean_pred.len(),
            });
        }
        check_ascending(&beta_labels)?;
        let len = beta_labels.len();
        Ok(Self {
            beta_labels,
            mean_pred,
            counts: vec![1; len],
            spread: vec![0.0; len],
        })
    }
}

fn check_ascending(grid: &[f64]) -> Result<()> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("β grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Mean prediction of `model` over each label group of `eval`.
pub fn prediction_curve(model: &dyn BetaPredictor, eval: &LabeledDataset) -> Result<PredictionCurve> {
    let groups = eval.group_by_beta();
    if groups.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let preds = map_indexed(groups.len(), |i| {
        model.predict_many(&groups[i].1.iter().map(|r| &r.sample).collect::<Vec<_>>())
    });
    let mut curve = PredictionCurve {
        beta_labels: Vec::with_capacity(groups.len()),
        mean_pred: Vec::with_capacity(groups.len()),
        counts: Vec::with_capacity(groups.len()),
        spread: Vec::with_capacity(groups.len()),
    };
    for ((beta, _), p) in groups.iter().zip(preds) {
        let p = p?;
        curve.beta_labels.push(*beta);
        curve.mean_pred.push(mean(&p));
        curve.spread.push(population_std(&p));
        curve.counts.push(p.len());
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCurve {
    pub beta: Vec<f64>,
    pub d: Vec<f64>,
}

/// D(β_i) = [m(β_{i+1}) − m(β_{i−1})] / (β_{i+1} − β_{i−1}) on interior points.
pub fn derivative_curve(curve: &PredictionCurve) -> Result<DerivativeCurve> {
    let b = &curve.beta_labels;
    let m = &curve.mean_pred;
    if b.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "derivative needs at least 3 grid points, got {}",
            b.len()
        )));
    }
    check_ascending(b)?;
    Ok(DerivativeCurve {
        beta: b[1..b.len() - 1].to_vec(),
        d: (1..b.len() - 1)
            .map(|i| (m[i + 1] - m[i - 1]) / (b[i + 1] - b[i - 1]))
            .collect(),
    })
}

/// Centered box average; windows are truncated at the ends of the curve.
pub fn box_smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nn,
    Dos,
    ChiF,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakStatus {
    Peak,
    NoPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub beta_star: f64,
    /// Population standard deviation over ensemble members (0 for one model).
    pub uncertainty: f64,
    pub method: Method,
    /// Mean spacing of the grid the peak was searched on.
    pub grid_resolution: f64,
    /// Smoothing window actually applied (1 = none).
    pub window: usize,
    pub status: PeakStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<f64>,
}

/// Grid value of the maximum of `values` (first occurrence on ties).
pub fn argmax_beta(beta: &[f64], values: &[f64]) -> Option<f64> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best.map(|i| beta[i])
}

/// β* = argmax of the box-smoothed D. Smoothing is skipped for curves of at
/// most five points. A flat curve yields `PeakStatus::NoPeak` with β* at the
/// first grid point.
pub fn find_crossover(dcurve: &DerivativeCurve, window: usize, method: Method) -> Result<TransitionReport> {
    if dcurve.d.is_empty() || dcurve.d.len() != dcurve.beta.len() {
        return Err(Error::Empty("derivative curve".into()));
    }
    if window == 0 {
        return Err(Error::InvalidParameter("smoothing window must be >= 1".into()));
    }
    let window = if dcurve.d.len() <= 5 { 1 } else { window };
    let smoothed = box_smooth(&dcurve.d, window);
    let first = smoothed[0];
    let flat = smoothed.iter().all(|&v| v == first);
    let beta_star = argmax_beta(&dcurve.beta, &smoothed)
        .ok_or_else(|| Error::InvalidParameter("derivative curve is all NaN".into()))?;
    let b = &dcurve.beta;
    let grid_resolution = if b.len() > 1 {
        (b[b.len() - 1] - b[0]) / (b.len() - 1) as f64
    } else {
        0.0
    };
    Ok(TransitionReport {
        beta_star,
        uncertainty: 0.0,
        method,
        grid_resolution,
        window,
        status: if flat { PeakStatus::NoPeak } else { PeakStatus::Peak },
        members: Vec::new(),
    })
}

/// Height of the tallest secondary local maximum of the smoothed curve,
/// relative to the global maximum. Maxima within `separation` grid points of
/// the global one count as the same peak. Returns 0 when there is none.
pub fn secondary_peak_ratio(dcurve: &DerivativeCurve, window: usize, separation: usize) -> Result<f64> {
    if dcurve.d.is_empty() {
        return Err(Error::Empty("derivative curve".into()));
    }
    let window = if dcurve.d.len() <= 5 { 1 } else { window.max(1) };
    let s = box_smooth(&dcurve.d, window);
    let top = (0..s.len()).fold(0, |best, i| if s[i] > s[best] { i } else { best });
    if s[top] <= 0.0 {
        return Ok(0.0);
    }
    let last = s.len() - 1;
    let second = (0..s.len())
        .filter(|&i| i.abs_diff(top) > separation)
        .filter(|&i| (i == 0 || s[i] >= s[i - 1]) && (i == last || s[i] >= s[i + 1]))
        .map(|i| s[i])
        .fold(0.0, f64::max);
    Ok(second / s[top])
}

/// Combines per-model reports into mean β* and population standard deviation.
pub fn combine_reports(reports: &[TransitionReport]) -> Result<TransitionReport> {
    let first = reports.first().ok_or_else(|| Error::Empty("ensemble".into()))?;
    let members: Vec<f64> = reports.iter().map(|r| r.beta_star).collect();
    Ok(TransitionReport {
        beta_star: mean(&members),
        uncertainty: population_std(&members),
        method: first.method,
        grid_resolution: first.grid_resolution,
        window: first.window,
        status: if reports.iter().all(|r| r.status == PeakStatus::NoPeak) {
            PeakStatus::NoPeak
        } else {
            PeakStatus::Peak
        },
        members,
    })
}

pub fn ensemble_crossover(
    models: &[&dyn BetaPredictor],
    eval: &LabeledDataset,
    window: usize,
    method: Method,
) -> Result<TransitionReport> {
    let reports = models
        .iter()
        .map(|m| find_crossover(&derivative_curve(&prediction_curve(*m, eval)?)?, window, method))
        .collect::<Result<Vec<_>>>()?;
    combine_reports(&reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub sizes: Vec<usize>,
    pub beta_star: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

/// Ordinary least squares of β* on ln(2N²). R² is 1 when β* is constant.
pub fn scaling_fit(points: &[(usize, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "scaling fit needs at least 3 sizes, got {}",
            points.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|&(n, _)| (2.0 * (n * n) as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|&(_, b)| b).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "scaling fit needs at least two distinct sizes".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - (a + b * xi)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    Ok(ScalingFit {
        sizes: points.iter().map(|p| p.0).collect(),
        beta_star: y,
        a,
        b,
        residuals,
        r_squared: if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, ModelKind, Record, Sample};
    use crate::lattice::{Basis, LatticeGeometry, SpinConfig};

    fn eval_set(grid: &[f64], per: usize) -> LabeledDataset {
        let g = &LatticeGeometry::new(2).unwrap();
        let records = grid
            .iter()
            .flat_map(|&beta| {
                (0..per as u64).map(move |k| Record {
                    beta,
                    sample: Sample::Spins(SpinConfig::from_bitmask(g, k, Basis::Z)),
                })
            })
            .collect();
        LabeledDataset {
            meta: DatasetMeta::new(ModelKind::Igt, 2, grid.to_vec(), per, 0),
            records,
        }
    }

    #[test]
    fn stub_predictors() {
        let grid = [0.1, 0.2, 0.3, 0.4];
        let ds = eval_set(&grid, 3);
        let c = prediction_curve(&|_: &Sample| 0.25, &ds).unwrap();
        assert_eq!(c.mean_pred, vec![0.25; 4]);
        assert_eq!(c.counts, vec![3; 4]);
        let d = derivative_curve(&c).unwrap();
        assert_eq!(d.d, vec![0.0, 0.0]);
    }

    #[test]
    fn forced_derivative() {
        let c = PredictionCurve::from_points(vec![0.1, 0.2, 0.3], vec![0.20, 0.35, 0.50]).unwrap();
        let d = derivative_curve(&c).unwrap();
        assert_eq!(d.beta, vec![0.2]);
        assert!((d.d[0] - 1.5).abs() < 1e-12);
        let short = PredictionCurve::from_points(vec![0.1, 0.2], vec![0.0, 0.0]).unwrap();
        assert!(derivative_curve(&short).is_err());
    }

    #[test]
    fn peak_and_ties() {
        let beta: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let tri = DerivativeCurve {
            beta: beta.clone(),
            d: vec![0.0, 1.0, 2.0, 1.0, 0.0],
        };
        let r = find_crossover(&tri, 3, Method::Nn).unwrap();
        assert_eq!(r.beta_star, 0.2);
        assert_eq!(r.window, 1);
        let twin = DerivativeCurve {
            beta,
            d: vec![0.0, 2.0, 1.0, 2.0, 0.0],
        };
        assert_eq!(find_crossover(&twin, 3, Method::Nn).unwrap().beta_star, 0.1);
    }

    #[test]
    fn flat_curve_has_no_peak() {
        let c = DerivativeCurve {
            beta: vec![1.0, 2.0, 3.0],
            d: vec![1.0; 3],
        };
        assert_eq!(find_crossover(&c, 3, Method::Dos).unwrap().status, PeakStatus::NoPeak);
    }

    #[test]
    fn smoothing_truncates_at_edges() {
        assert_eq!(box_smooth(&[3.0, 0.0, 0.0, 6.0], 3), vec![1.5, 1.0, 2.0, 3.0]);
        assert_eq!(box_smooth(&[1.0, 5.0, 2.0], 1), vec![1.0, 5.0, 2.0]);
    }

    #[test]
    fn smoothing_suppresses_isolated_spike() {
        let beta: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let d = vec![0.0, 5.0, 0.0, 0.0, 3.0, 3.0, 3.0, 0.0, 0.0];
        let c = DerivativeCurve { beta, d };
        assert_eq!(find_crossover(&c, 1, Method::Nn).unwrap().beta_star, 1.0);
        assert_eq!(find_crossover(&c, 3, Method::Nn).unwrap().beta_star, 5.0);
    }

    #[test]
    fn ensemble_arithmetic() {
        let reports: Vec<TransitionReport> = [1.0, 1.2, 1.4, 1.0, 1.4]
            .iter()
            .map(|&b| TransitionReport {
                beta_star: b,
                uncertainty: 0.0,
                method: Method::Nn,
                grid_resolution: 0.1,
                window: 3,
                status: PeakStatus::Peak,
                members: vec![],
            })
            .collect();
        let r = combine_reports(&reports).unwrap();
        assert!((r.beta_star - 1.2).abs() < 1e-12);
        assert!((r.uncertainty - 0.032f64.sqrt()).abs() < 1e-12);
        let single = combine_reports(&reports[..1]).unwrap();
        assert_eq!(single.uncertainty, 0.0);
    }

    #[test]
    fn identical_models_have_zero_spread() {
        let grid: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let ds = eval_set(&grid, 2);
        let f = |s: &Sample| s.features()[0] * 0.1;
        let models: Vec<&dyn BetaPredictor> = vec![&f, &f, &f];
        let r = ensemble_crossover(&models, &ds, 3, Method::Nn).unwrap();
        assert_eq!(r.uncertainty, 0.0);
        assert_eq!(r.members.len(), 3);
    }

    #[test]
    fn synthetic_log_scaling() {
        let pts: Vec<(usize, f64)> = [4usize, 6, 8, 10, 12]
            .iter()
            .map(|&n| (n, 0.3 + 0.9 * (2.0 * (n * n) as f64).ln()))
            .collect();
        let fit = scaling_fit(&pts).unwrap();
        assert!((fit.b - 0.9).abs() < 1e-12);
        assert!((fit.a - 0.3).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat = scaling_fit(&[(4, 1.0), (6, 1.0), (8, 1.0)]).unwrap();
        assert_eq!(flat.b, 0.0);
        assert!(scaling_fit(&[(4, 1.0), (6, 1.0)]).is_err());
        assert!(scaling_fit(&[(4, 1.0), (4, 2.0), (4, 1.5)]).is_err());
    }

    #[test]
    fn secondary_peak_ratio_cases() {
        let beta: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let d = DerivativeCurve {
            beta: beta.clone(),
            d: vec![0.0, 1.0, 4.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        };
        assert!((secondary_peak_ratio(&d, 1, 3).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(secondary_peak_ratio(&d, 1, 4).unwrap(), 0.0);
        let single = DerivativeCurve {
            beta,
            d: vec![0.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0, 0.0],
        };
        assert_eq!(secondary_peak_ratio(&single, 1, 2).unwrap(), 0.0);
    }
}
