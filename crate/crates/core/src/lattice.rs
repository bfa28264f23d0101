//! Periodic N×N square lattice with spins on the 2N² bonds.
//!
//! Index layout (shared by every file format in this crate):
//! - vertex `(r, c)` and plaquette `(r, c)` both have index `r * n + c`;
//!   plaquette `(r, c)` is the square whose top-left corner is vertex `(r, c)`.
//! - horizontal bond `(r, c)` joins vertex `(r, c)` to `(r, c + 1)`, index `r * n + c`.
//! - vertical bond `(r, c)` joins vertex `(r, c)` to `(r + 1, c)`, index `n² + r * n + c`.
//!
//! All arithmetic on row/column is modulo `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pauli basis in which a classical ±1 string is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Z,
    X,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGeometry {
    n: usize,
    plaquette_bonds: Vec<[usize; 4]>,
    vertex_bonds: Vec<[usize; 4]>,
    bond_plaquettes: Vec<[usize; 2]>,
    bond_vertices: Vec<[usize; 2]>,
}

impl LatticeGeometry {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("lattice size must be at least 2, got {n}")));
        }
        let nn = n * n;
        let h = |r: usize, c: usize| (r % n) * n + (c % n);
        let v = |r: usize, c: usize| nn + (r % n) * n + (c % n);
        let site = |r: usize, c: usize| (r % n) * n + (c % n);

        let mut plaquette_bonds = Vec::with_capacity(nn);
        let mut vertex_bonds = Vec::with_capacity(nn);
        for r in 0..n {
            for c in 0..n {
                plaquette_bonds.push([h(r, c), h(r + 1, c), v(r, c), v(r, c + 1)]);
                vertex_bonds.push([h(r, c), h(r, c + n - 1), v(r, c), v(r + n - 1, c)]);
            }
        }

        let mut bond_plaquettes = vec![[0; 2]; 2 * nn];
        let mut bond_vertices = vec![[0; 2]; 2 * nn];
        for r in 0..n {
            for c in 0..n {
                // horizontal bond: bottom edge of plaquette (r-1, c), top edge of (r, c)
                bond_plaquettes[h(r, c)] = [site(r, c), site(r + n - 1, c)];
                bond_vertices[h(r, c)] = [site(r, c), site(r, c + 1)];
                // vertical bond: left edge of plaquette (r, c), right edge of (r, c-1)
                bond_plaquettes[v(r, c)] = [site(r, c), site(r, c + n - 1)];
                bond_vertices[v(r, c)] = [site(r, c), site(r + 1, c)];
            }
        }

        Ok(Self {
            n,
            plaquette_bonds,
            vertex_bonds,
            bond_plaquettes,
            bond_vertices,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bond_count(&self) -> usize {
        2 * self.n * self.n
    }

    pub fn plaquette_count(&self) -> usize {
        self.n * self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.n * self.n
    }

    pub fn plaquette_bonds(&self, p: usize) -> &[usize; 4] {
        &self.plaquette_bonds[p]
    }

    pub fn vertex_bonds(&self, s: usize) -> &[usize; 4] {
        &self.vertex_bonds[s]
    }

    pub fn bond_plaquettes(&self, b: usize) -> &[usize; 2] {
        &self.bond_plaquettes[b]
    }

    pub fn bond_vertices(&self, b: usize) -> &[usize; 2] {
        &self.bond_vertices[b]
    }

    fn check_config(&self, c: &SpinConfig) -> Result<()> {
        if c.len() != self.bond_count() {
            return Err(Error::SizeMismatch {
                expected: self.bond_count(),
                found: c.len(),
            });
        }
        Ok(())
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.plaquette_count() {
            return Err(Error::SizeMismatch {
                expected: self.plaquette_count(),
                found: mask.len(),
            });
        }
        Ok(())
    }

    /// Product of the four spins around plaquette `p`.
    pub fn plaquette_product(&self, c: &SpinConfig, p: usize) -> Result<i8> {
        self.check_config(c)?;
        if p >= self.plaquette_count() {
            return Err(Error::IndexOutOfRange {
                what: "plaquette",
                index: p,
                len: self.plaquette_count(),
            });
        }
        Ok(self.plaquette_product_unchecked(c.values(), p))
    }

    #[inline]
    pub(crate) fn plaquette_product_unchecked(&self, spins: &[i8], p: usize) -> i8 {
        self.plaquette_bonds[p].iter().map(|&b| spins[b]).product()
    }

    /// Product of the four spins meeting at vertex `s`. Meaningful for x-basis strings.
    pub fn vertex_product(&self, c: &SpinConfig, s: usize) -> Result<i8> {
        self.check_config(c)?;
        if s >= self.vertex_count() {
            return Err(Error::IndexOutOfRange {
                what: "vertex",
                index: s,
                len: self.vertex_count(),
            });
        }
        Ok(self.vertex_bonds[s].iter().map(|&b| c.values()[b]).product())
    }

    /// Flips every bond once per adjacent masked plaquette.
    pub fn apply_plaquette_flips(&self, c: &SpinConfig, mask: &[bool]) -> Result<SpinConfig> {
        self.check_config(c)?;
        self.check_mask(mask)?;
        let mut values = c.values().to_vec();
        for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for &b in &self.plaquette_bonds[p] {
                values[b] = -values[b];
            }
        }
        Ok(SpinConfig::from_raw(values, c.basis()))
    }

    /// Flips every bond once per adjacent masked vertex.
    pub fn apply_vertex_flips(&self, c: &SpinConfig, mask: &[bool]) -> Result<SpinConfig> {
        self.check_config(c)?;
        self.check_mask(mask)?;
        let mut values = c.values().to_vec();
        for (s, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for &b in &self.vertex_bonds[s] {
                values[b] = -values[b];
            }
        }
        Ok(SpinConfig::from_raw(values, c.basis()))
    }

    /// Plaquettes whose product is −1. Empty iff the configuration has only closed loops.
    pub fn violated_plaquettes(&self, c: &SpinConfig) -> Result<Vec<usize>> {
        self.check_config(c)?;
        Ok((0..self.plaquette_count())
            .filter(|&p| self.plaquette_product_unchecked(c.values(), p) < 0)
            .collect())
    }

    /// Vertices whose product is −1.
    pub fn violated_vertices(&self, c: &SpinConfig) -> Result<Vec<usize>> {
        self.check_config(c)?;
        Ok((0..self.vertex_count())
            .filter(|&s| self.vertex_bonds[s].iter().map(|&b| c.values()[b]).product::<i8>() < 0)
            .collect())
    }

    /// Bit mask (bit i ⇔ bond i) of the four bonds of plaquette `p`. Only valid for n ≤ 5.
    pub(crate) fn plaquette_bitmask(&self, p: usize) -> u64 {
        self.plaquette_bonds[p].iter().fold(0, |m, &b| m | (1u64 << b))
    }

    pub(crate) fn vertex_bitmask(&self, s: usize) -> u64 {
        self.vertex_bonds[s].iter().fold(0, |m, &b| m | (1u64 << b))
    }
}

/// A classical ±1 string over the bonds, tagged with its Pauli basis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    values: Vec<i8>,
    basis: Basis,
}

impl SpinConfig {
    pub fn new(values: Vec<i8>, basis: Basis) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidSpin(*bad as i64));
        }
        Ok(Self { values, basis })
    }

    pub(crate) fn from_raw(values: Vec<i8>, basis: Basis) -> Self {
        debug_assert!(values.iter().all(|&v| v == 1 || v == -1));
        Self { values, basis }
    }

    pub fn all_up(geometry: &LatticeGeometry, basis: Basis) -> Self {
        Self {
            values: vec![1; geometry.bond_count()],
            basis,
        }
    }

    /// Spin string with −1 exactly on the bonds set in `flips`.
    pub fn from_bitmask(geometry: &LatticeGeometry, flips: u64, basis: Basis) -> Self {
        let values = (0..geometry.bond_count())
            .map(|b| if flips >> b & 1 == 1 { -1 } else { 1 })
            .collect();
        Self { values, basis }
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flip(&mut self, bond: usize) {
        self.values[bond] = -self.values[bond];
    }

    /// Bit mask of the −1 entries. Only valid for at most 64 bonds.
    pub fn to_bitmask(&self) -> u64 {
        debug_assert!(self.values.len() <= 64);
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0)
            .fold(0, |m, (b, _)| m | (1u64 << b))
    }
}

/// Background field strengths λ_i ∈ [−1, 1], one per bond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    lambdas: Vec<f64>,
}

impl FieldConfig {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(bad) = lambdas.iter().find(|l| !(l.abs() <= 1.0)) {
            return Err(Error::InvalidField(format!("field strength {bad} outside [-1, 1]")));
        }
        Ok(Self { lambdas })
    }

    pub fn uniform(geometry: &LatticeGeometry, value: f64) -> Result<Self> {
        Self::new(vec![value; geometry.bond_count()])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            lambdas: self.lambdas.iter().map(|l| -l).collect(),
        }
    }
}
