//! Labeled datasets and their on-disk form.
//!
//! A dataset is stored as two files sharing a stem: `<stem>.json` holds the
//! [`DatasetMeta`] sidecar and `<stem>.csv` holds one record per line with no
//! header. Column 0 is the β label; the remaining `input_dim` columns are the
//! sample, written as `1`/`-1` for spin strings and as shortest round-trip
//! decimals for expectation vectors. Spin columns follow the bond layout of
//! [`crate::lattice`].

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Basis, SpinConfig};
use crate::toric::FieldPreset;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Igt,
    ToricX,
    ToricZ,
    Stabilizer,
}

impl ModelKind {
    pub fn basis(self) -> Option<Basis> {
        match self {
            ModelKind::Igt | ModelKind::ToricZ => Some(Basis::Z),
            ModelKind::ToricX => Some(Basis::X),
            ModelKind::Stabilizer => None,
        }
    }

    pub fn input_dim(self, n: usize) -> usize {
        match self {
            ModelKind::Stabilizer => n * n,
            _ => 2 * n * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Spins(SpinConfig),
    Expectations(Vec<f64>),
}

impl Sample {
    pub fn dim(&self) -> usize {
        match self {
            Sample::Spins(c) => c.len(),
            Sample::Expectations(v) => v.len(),
        }
    }

    pub fn spins(&self) -> Option<&SpinConfig> {
        match self {
            Sample::Spins(c) => Some(c),
            Sample::Expectations(_) => None,
        }
    }

    /// Writes the sample as real features into `out`.
    pub fn write_features(&self, out: &mut [f64]) {
        match self {
            Sample::Spins(c) => {
                for (o, &s) in out.iter_mut().zip(c.values()) {
                    *o = s as f64;
                }
            }
            Sample::Expectations(v) => out.copy_from_slice(v),
        }
    }

    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write_features(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub beta: f64,
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub n: usize,
    pub input_dim: usize,
    pub beta_grid: Vec<f64>,
    pub per_beta: usize,
    pub seed: u64,
    pub therm_sweeps: usize,
    pub stride_sweeps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl DatasetMeta {
    pub fn new(kind: ModelKind, n: usize, beta_grid: Vec<f64>, per_beta: usize, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            n,
            input_dim: kind.input_dim(n),
            beta_grid,
            per_beta,
            seed,
            therm_sweeps: 0,
            stride_sweeps: 0,
            field: None,
            mc_samples: None,
            role: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Concatenates datasets sampled on disjoint parts of one grid, in order.
    pub fn concat(meta: DatasetMeta, parts: Vec<LabeledDataset>) -> Self {
        let records = parts.into_iter().flat_map(|d| d.records).collect();
        Self { meta, records }
    }

    /// Records grouped by label, in ascending label order.
    pub fn group_by_beta(&self) -> Vec<(f64, Vec<&Record>)> {
        let mut groups: Vec<(f64, Vec<&Record>)> = Vec::new();
        let mut order: Vec<&Record> = self.records.iter().collect();
        order.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        for r in order {
            match groups.last_mut() {
                Some((b, g)) if *b == r.beta => g.push(r),
                _ => groups.push((r.beta, vec![r])),
            }
        }
        groups
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.sample.dim() != self.meta.input_dim {
                return Err(Error::Format(format!(
                    "record {i}: width {} does not match input_dim {}",
                    r.sample.dim(),
                    self.meta.input_dim
                )));
            }
            if !r.beta.is_finite() {
                return Err(Error::Format(format!("record {i}: non-finite label")));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?);
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            write!(line, "{}", r.beta).unwrap();
            match &r.sample {
                Sample::Spins(c) => {
                    for &s in c.values() {
                        write!(line, ",{s}").unwrap();
                    }
                }
                Sample::Expectations(v) => {
                    for x in v {
                        write!(line, ",{x}").unwrap();
                    }
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let meta_text = fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        let file = fs::File::open(dir.join(format!("{stem}.csv")))?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = |what: &str| Error::Format(format!("line {}: {what}", lineno + 1));
            let beta: f64 = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| bad("bad label"))?;
            let sample = match meta.kind.basis() {
                Some(basis) => {
                    let values = fields
                        .map(|f| f.trim().parse::<i8>().map_err(|_| bad("bad spin")))
                        .collect::<Result<Vec<_>>>()?;
                    Sample::Spins(SpinConfig::new(values, basis)?)
                }
                None => Sample::Expectations(
                    fields
                        .map(|f| f.trim().parse::<f64>().map_err(|_| bad("bad value")))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            records.push(Record { beta, sample });
        }
        let ds = Self { meta, records };
        ds.validate()?;
        Ok(ds)
    }
}

/// `points` equally spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (points - 1) as f64;
            (0..points)
                .map(|i| if i == points - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeGeometry;

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 5.0, 50);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[49], 5.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let g = LatticeGeometry::new(2).unwrap();
        let mut meta = DatasetMeta::new(ModelKind::Igt, 3, vec![1.0], 1, 0);
        meta.input_dim = 18;
        let ds = LabeledDataset {
            meta,
            records: vec![Record {
                beta: 1.0,
                sample: Sample::Spins(SpinConfig::all_up(&g, Basis::Z)),
            }],
        };
        assert!(ds.validate().is_err());
    }

    #[test]
    fn grouping_is_sorted() {
        let g = LatticeGeometry::new(2).unwrap();
        let rec = |b| Record {
            beta: b,
            sample: Sample::Spins(SpinConfig::all_up(&g, Basis::Z)),
        };
        let ds = LabeledDataset {
            meta: DatasetMeta::new(ModelKind::Igt, 2, vec![0.5, 1.0], 2, 0),
            records: vec![rec(1.0), rec(0.5), rec(1.0)],
        };
        let groups = ds.group_by_beta();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, 0.5);
        assert_eq!(groups[1].1.len(), 2);
    }
}
