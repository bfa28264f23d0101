//! Headered numeric CSV tables used for every curve the pipeline exports.

use std::fmt::Write as _;
use std::path::Path;

use crate::detector::{DerivativeCurve, PredictionCurve};
use crate::error::{Error, Result};
use crate::fidelity::ChiFCurve;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CurveTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty curve file".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        if columns.iter().any(|c| c.parse::<f64>().is_ok()) {
            return Err(Error::Format("curve file has no header line".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("curve file row {}: not numeric", i + 2)))?;
            if row.len() != columns.len() {
                return Err(Error::Format(format!(
                    "curve file row {}: {} fields, header has {}",
                    i + 2,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

impl From<&PredictionCurve> for CurveTable {
    fn from(c: &PredictionCurve) -> Self {
        let mut t = CurveTable::new(&["beta", "mean_pred", "count", "spread"]);
        for i in 0..c.beta_labels.len() {
            t.push(vec![c.beta_labels[i], c.mean_pred[i], c.counts[i] as f64, c.spread[i]]);
        }
        t
    }
}

impl From<&DerivativeCurve> for CurveTable {
    fn from(c: &DerivativeCurve) -> Self {
        let mut t = CurveTable::new(&["beta", "d"]);
        for (b, d) in c.beta.iter().zip(&c.d) {
            t.push(vec![*b, *d]);
        }
        t
    }
}

impl From<&ChiFCurve> for CurveTable {
    fn from(c: &ChiFCurve) -> Self {
        let mut t = CurveTable::new(&["beta", "chi_f", "stderr"]);
        for i in 0..c.beta_grid.len() {
            t.push(vec![c.beta_grid[i], c.chi_values[i], c.stderr[i]]);
        }
        t
    }
}

impl TryFrom<&CurveTable> for PredictionCurve {
    type Error = Error;

    fn try_from(t: &CurveTable) -> Result<Self> {
        let get = |name: &str| {
            t.column(name)
                .ok_or_else(|| Error::Format(format!("prediction curve needs a `{name}` column")))
        };
        let beta = get("beta")?;
        let len = beta.len();
        Ok(PredictionCurve {
            beta_labels: beta,
            mean_pred: get("mean_pred")?,
            counts: t
                .column("count")
                .map(|c| c.iter().map(|&v| v as usize).collect())
                .unwrap_or_else(|| vec![1; len]),
            spread: t.column("spread").unwrap_or_else(|| vec![0.0; len]),
        })
    }
}

impl TryFrom<&CurveTable> for DerivativeCurve {
    type Error = Error;

    fn try_from(t: &CurveTable) -> Result<Self> {
        let beta = t
            .column("beta")
            .ok_or_else(|| Error::Format("curve needs a `beta` column".into()))?;
        let d = t
            .column("d")
            .or_else(|| t.column("chi_f"))
            .ok_or_else(|| Error::Format("derivative curve needs a `d` or `chi_f` column".into()))?;
        Ok(DerivativeCurve { beta, d })
    }
}
