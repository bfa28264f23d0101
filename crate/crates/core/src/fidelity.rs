//! Fidelity susceptibility of the deformed toric-code ground state.
//!
//! For this family of states χ_F reduces to a quarter of the variance of the
//! field energy E(h) = Σ_i λ_i σ_i^x(h) under the σx projection weights, so it
//! is computed from that variance rather than by differentiating overlaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::igt::SamplerSettings;
use crate::lattice::{FieldConfig, LatticeGeometry};
use crate::parallel::map_indexed;
use crate::rng::{chain_rng, rng_from_seed, ChainRng};
use crate::stats::{jackknife, variance, Estimate};
use crate::toric::{ExactToricOracle, SigmaXChain, ToricField};

pub const JACKKNIFE_BLOCKS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiFMethod {
    Mc,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiFCurve {
    pub beta_grid: Vec<f64>,
    pub chi_values: Vec<f64>,
    /// Jackknife errors (zero for exact curves).
    pub stderr: Vec<f64>,
    pub method: ChiFMethod,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Exact (1/4)(⟨E²⟩ − ⟨E⟩²) by enumeration, n ≤ 3.
pub fn chi_f_exact(n: usize, field: &ToricField) -> Result<f64> {
    let oracle = ExactToricOracle::new(n, field.clone())?;
    Ok(chi_f_from_oracle(&oracle))
}

pub fn chi_f_from_oracle(oracle: &ExactToricOracle) -> f64 {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (k, &e) in oracle.energies().iter().enumerate() {
        let p = oracle.sigma_x_probability_by_index(k);
        m1 += p * e;
        m2 += p * e * e;
    }
    (0.25 * (m2 - m1 * m1)).max(0.0)
}

fn quarter_variance(values: &[f64]) -> f64 {
    0.25 * variance(values)
}

fn chi_f_chain(geometry: &LatticeGeometry, field: &ToricField, settings: &SamplerSettings, rng: ChainRng) -> Estimate {
    let mut chain = SigmaXChain::new(geometry, &field.lambdas, field.beta, rng);
    chain.sweeps(settings.therm_sweeps);
    let energies: Vec<f64> = (0..settings.count)
        .map(|_| {
            chain.sweeps(settings.stride_sweeps);
            chain.energy()
        })
        .collect();
    jackknife(&energies, JACKKNIFE_BLOCKS, quarter_variance)
}

/// Monte Carlo χ_F with its 20-block jackknife error, using the default
/// schedule (100 thermalization sweeps, samples one sweep apart).
pub fn chi_f_mc(n: usize, field: &ToricField, mc_samples: usize, seed: u64) -> Result<Estimate> {
    chi_f_mc_with(n, field, &SamplerSettings::new(mc_samples), seed)
}

pub fn chi_f_mc_with(n: usize, field: &ToricField, settings: &SamplerSettings, seed: u64) -> Result<Estimate> {
    if settings.count < 2 {
        return Err(Error::InvalidParameter("mc_samples must be >= 2".into()));
    }
    settings.check()?;
    let geometry = LatticeGeometry::new(n)?;
    if field.lambdas.len() != geometry.bond_count() {
        return Err(Error::SizeMismatch {
            expected: geometry.bond_count(),
            found: field.lambdas.len(),
        });
    }
    Ok(chi_f_chain(&geometry, field, settings, rng_from_seed(seed)))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("β grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("β grid must be strictly ascending".into()));
    }
    Ok(())
}

/// χ_F on a grid, one chain per point seeded with `(master_seed, i, 0)`.
pub fn chi_f_curve_mc(
    n: usize,
    lambdas: &FieldConfig,
    grid: &[f64],
    settings: &SamplerSettings,
    master_seed: u64,
) -> Result<ChiFCurve> {
    check_grid(grid)?;
    let geometry = LatticeGeometry::new(n)?;
    let fields = grid
        .iter()
        .map(|&b| ToricField::new(lambdas.clone(), b))
        .collect::<Result<Vec<_>>>()?;
    if lambdas.len() != geometry.bond_count() {
        return Err(Error::SizeMismatch {
            expected: geometry.bond_count(),
            found: lambdas.len(),
        });
    }
    if settings.count < 2 {
        return Err(Error::InvalidParameter("mc_samples must be >= 2".into()));
    }
    settings.check()?;
    let estimates = map_indexed(grid.len(), |i| {
        chi_f_chain(&geometry, &fields[i], settings, chain_rng(master_seed, i as u64, 0))
    });
    Ok(ChiFCurve {
        beta_grid: grid.to_vec(),
        chi_values: estimates.iter().map(|e| e.mean).collect(),
        stderr: estimates.iter().map(|e| e.stderr).collect(),
        method: ChiFMethod::Mc,
        mc_samples: settings.count,
        seed: master_seed,
    })
}

pub fn chi_f_curve_exact(n: usize, lambdas: &FieldConfig, grid: &[f64]) -> Result<ChiFCurve> {
    check_grid(grid)?;
    let chi_values = grid
        .iter()
        .map(|&b| chi_f_exact(n, &ToricField::new(lambdas.clone(), b)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChiFCurve {
        beta_grid: grid.to_vec(),
        stderr: vec![0.0; chi_values.len()],
        chi_values,
        method: ChiFMethod::Exact,
        mc_samples: 0,
        seed: 0,
    })
}

/// Grid value at the maximum of χ_F; ties go to the smaller β.
pub fn chi_f_peak(curve: &ChiFCurve) -> Result<f64> {
    if curve.chi_values.is_empty() || curve.chi_values.len() != curve.beta_grid.len() {
        return Err(Error::Empty("χ_F curve".into()));
    }
    let mut best = 0;
    for (i, &v) in curve.chi_values.iter().enumerate() {
        if v > curve.chi_values[best] {
            best = i;
        }
    }
    Ok(curve.beta_grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toric::{FieldPreset, GroupElementH};

    fn g(n: usize) -> LatticeGeometry {
        LatticeGeometry::new(n).unwrap()
    }

    #[test]
    fn zero_field_has_zero_susceptibility() {
        let zero = FieldConfig::uniform(&g(2), 0.0).unwrap();
        assert_eq!(
            chi_f_exact(2, &ToricField::new(zero.clone(), 0.7).unwrap()).unwrap(),
            0.0
        );
        let zero8 = FieldConfig::uniform(&g(4), 0.0).unwrap();
        let est = chi_f_mc(4, &ToricField::new(zero8, 0.7).unwrap(), 200, 3).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn infinite_temperature_is_uniform_quarter_variance() {
        let geom = g(2);
        let uniform = FieldConfig::uniform(&geom, 1.0).unwrap();
        let es: Vec<f64> = (0..8)
            .map(|k| crate::toric::field_energy(&geom, &uniform, &GroupElementH::from_index(&geom, k)))
            .collect();
        let m = es.iter().sum::<f64>() / 8.0;
        let expected = 0.25 * es.iter().map(|e| (e - m).powi(2)).sum::<f64>() / 8.0;
        let got = chi_f_exact(2, &ToricField::new(uniform, 0.0).unwrap()).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn large_amplitude_concentrates() {
        let uniform = FieldConfig::uniform(&g(3), 1.0).unwrap();
        let chi = chi_f_exact(3, &ToricField::new(uniform, 12.0).unwrap()).unwrap();
        assert!(chi < 1e-12, "{chi}");
    }

    #[test]
    fn sign_flip_symmetry_n2() {
        let geom = g(2);
        for seed in 0..10 {
            let f = FieldPreset::Random { seed }.resolve(&geom).unwrap();
            for beta in [0.1, 0.6, 1.5] {
                let a = chi_f_exact(2, &ToricField::new(f.clone(), beta).unwrap()).unwrap();
                let b = chi_f_exact(2, &ToricField::new(f.negated(), beta).unwrap()).unwrap();
                assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
                assert!(a >= 0.0);
            }
        }
    }

    #[test]
    fn peak_extraction() {
        let mut curve = ChiFCurve {
            beta_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            chi_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            stderr: vec![0.0; 5],
            method: ChiFMethod::Exact,
            mc_samples: 0,
            seed: 0,
        };
        assert_eq!(chi_f_peak(&curve).unwrap(), 0.4);
        curve.chi_values = vec![1.0, 2.0, 3.0, 2.0, 1.0];
        assert_eq!(chi_f_peak(&curve).unwrap(), 0.2);
        curve.chi_values = vec![1.0, 3.0, 2.0, 3.0, 1.0];
        assert_eq!(chi_f_peak(&curve).unwrap(), 0.1);
    }

    #[test]
    fn rejects_too_few_samples() {
        let uniform = FieldConfig::uniform(&g(2), 1.0).unwrap();
        assert!(chi_f_mc(2, &ToricField::new(uniform, 0.3).unwrap(), 1, 0).is_err());
    }
}
