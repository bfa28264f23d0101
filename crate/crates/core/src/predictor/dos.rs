//! Density-of-states predictor for the Ising gauge theory.
//!
//! The training set is reduced to its energy histogram per label. A sample is
//! then assigned the mean label of all training configurations that share its
//! energy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, ModelKind, Sample};
use crate::error::{Error, Result};
use crate::igt::igt_energy;
use crate::lattice::{LatticeGeometry, SpinConfig};

use super::BetaPredictor;

/// Conditional energy frequencies ε(β, E) of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOfStates {
    pub n: usize,
    pub beta_grid: Vec<f64>,
    /// Distinct energies, ascending.
    pub energies: Vec<i64>,
    /// `counts[b][e]` is the number of records with label `beta_grid[b]` and energy `energies[e]`.
    pub counts: Vec<Vec<u64>>,
}

impl DensityOfStates {
    pub fn epsilon(&self, beta_index: usize, energy_index: usize) -> f64 {
        let row = &self.counts[beta_index];
        let total: u64 = row.iter().sum();
        if total == 0 {
            0.0
        } else {
            row[energy_index] as f64 / total as f64
        }
    }

    /// ε(β, ·) for one label as a vector over `energies`.
    pub fn column(&self, beta_index: usize) -> Vec<f64> {
        (0..self.energies.len()).map(|e| self.epsilon(beta_index, e)).collect()
    }

    pub fn model(&self) -> DosModel {
        let mut table = BTreeMap::new();
        for (e, &energy) in self.energies.iter().enumerate() {
            let (mut weight, mut total) = (0.0, 0u64);
            for (b, &beta) in self.beta_grid.iter().enumerate() {
                let c = self.counts[b][e];
                weight += beta * c as f64;
                total += c;
            }
            if total > 0 {
                table.insert(energy, (weight / total as f64, total));
            }
        }
        DosModel { n: self.n, table }
    }
}

pub fn dos_build(dataset: &LabeledDataset) -> Result<DensityOfStates> {
    if dataset.meta.kind != ModelKind::Igt {
        return Err(Error::InvalidParameter(format!(
            "density of states needs an igt dataset, got {:?}",
            dataset.meta.kind
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let geometry = LatticeGeometry::new(dataset.meta.n)?;
    let groups = dataset.group_by_beta();
    let mut per_beta = Vec::with_capacity(groups.len());
    let mut all = BTreeMap::new();
    for (_, records) in &groups {
        let mut hist = BTreeMap::new();
        for r in records {
            let c = spins_of(&r.sample, &geometry)?;
            *hist.entry(igt_energy(&geometry, c)).or_insert(0u64) += 1;
        }
        for &e in hist.keys() {
            all.insert(e, ());
        }
        per_beta.push(hist);
    }
    let energies: Vec<i64> = all.into_keys().collect();
    let counts = per_beta
        .iter()
        .map(|h| energies.iter().map(|e| h.get(e).copied().unwrap_or(0)).collect())
        .collect();
    Ok(DensityOfStates {
        n: dataset.meta.n,
        beta_grid: groups.iter().map(|(b, _)| *b).collect(),
        energies,
        counts,
    })
}

fn spins_of<'a>(sample: &'a Sample, geometry: &LatticeGeometry) -> Result<&'a SpinConfig> {
    let c = sample
        .spins()
        .ok_or_else(|| Error::InvalidParameter("density of states needs spin samples".into()))?;
    if c.len() != geometry.bond_count() {
        return Err(Error::SizeMismatch {
            expected: geometry.bond_count(),
            found: c.len(),
        });
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DosPrediction {
    pub beta: f64,
    /// True when the energy was absent from the training set and the value
    /// was interpolated (or clamped) from neighbouring energies.
    pub fallback: bool,
}

/// β^av(E) table: mean training label and record count per energy.
#[derive(Debug, Clone, PartialEq)]
pub struct DosModel {
    pub n: usize,
    pub table: BTreeMap<i64, (f64, u64)>,
}

impl DosModel {
    pub fn beta_av(&self, energy: i64) -> Result<DosPrediction> {
        if let Some(&(b, _)) = self.table.get(&energy) {
            return Ok(DosPrediction {
                beta: b,
                fallback: false,
            });
        }
        let below = self.table.range(..energy).next_back();
        let above = self.table.range(energy..).next();
        let beta = match (below, above) {
            (Some((&e0, &(b0, _))), Some((&e1, &(b1, _)))) => b0 + (b1 - b0) * (energy - e0) as f64 / (e1 - e0) as f64,
            (Some((_, &(b, _))), None) | (None, Some((_, &(b, _)))) => b,
            (None, None) => return Err(Error::Empty("density-of-states model".into())),
        };
        Ok(DosPrediction { beta, fallback: true })
    }

    pub fn predict_config(&self, geometry: &LatticeGeometry, config: &SpinConfig) -> Result<DosPrediction> {
        if geometry.n() != self.n {
            return Err(Error::SizeMismatch {
                expected: self.n,
                found: geometry.n(),
            });
        }
        self.beta_av(igt_energy(geometry, config))
    }

    /// Writes `energy,beta_av,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("energy,beta_av,count\n");
        for (e, (b, c)) in &self.table {
            writeln!(out, "{e},{b},{c}").unwrap();
        }
        out
    }

    pub fn from_csv(n: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "energy,beta_av,count" => {}
            _ => return Err(Error::Format("density-of-states file: missing header".into())),
        }
        let mut table = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("density-of-states file: bad row {}", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let e: i64 = f[0].parse().map_err(|_| bad())?;
            let b: f64 = f[1].parse().map_err(|_| bad())?;
            let c: u64 = f[2].parse().map_err(|_| bad())?;
            if !b.is_finite() || table.insert(e, (b, c)).is_some() {
                return Err(bad());
            }
        }
        if table.is_empty() {
            return Err(Error::Empty("density-of-states file".into()));
        }
        LatticeGeometry::new(n)?;
        Ok(Self { n, table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(n: usize, path: &Path) -> Result<Self> {
        Self::from_csv(n, &std::fs::read_to_string(path)?)
    }

    /// A predictor bound to a geometry, usable by the detector.
    pub fn bind(&self) -> Result<BoundDos<'_>> {
        Ok(BoundDos {
            model: self,
            geometry: LatticeGeometry::new(self.n)?,
        })
    }
}

pub struct BoundDos<'a> {
    model: &'a DosModel,
    geometry: LatticeGeometry,
}

impl BoundDos<'_> {
    pub fn predict_flagged(&self, sample: &Sample) -> Result<DosPrediction> {
        let c = spins_of(sample, &self.geometry)?;
        self.model.predict_config(&self.geometry, c)
    }
}

impl BetaPredictor for BoundDos<'_> {
    fn predict(&self, sample: &Sample) -> Result<f64> {
        Ok(self.predict_flagged(sample)?.beta)
    }
}
