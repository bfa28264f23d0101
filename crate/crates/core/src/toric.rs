//! Projections of the field-deformed toric-code ground state
//!
//! |Ψ⟩ ∝ Σ_{h∈H} e^{(β/2) Σ_i λ_i σ_i^x(h)} h|0_x⟩
//!
//! onto the σx and σz bases, the pseudo-spin Ising mapping, and plaquette
//! stabilizer expectation values.
//!
//! Group elements are stored canonically: the bit of plaquette (or vertex) 0
//! is always clear, which quotients out the relation that the product of all
//! plaquette (vertex) operators is the identity on the torus. Both groups
//! therefore have 2^(n²−1) elements, indexed by `mask >> 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, LabeledDataset, ModelKind, Record, Sample};
use crate::error::{Error, Result};
use crate::igt::SamplerSettings;
use crate::lattice::{Basis, FieldConfig, LatticeGeometry, SpinConfig};
use crate::parallel::map_indexed;
use crate::rng::{chain_rng, rng_from_seed, ChainRng};
use crate::stats::{log_sum_exp, Estimate};

/// Largest n for the exact σx / σz oracles.
pub const EXACT_TORIC_MAX_N: usize = 3;
/// Largest n for σz sampling (2^(n²−1) loop terms per proposal).
pub const SIGMA_Z_MAX_N: usize = 4;

/// Named background-field layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum FieldPreset {
    /// λ_i = value on every bond.
    Uniform {
        value: f64,
    },
    /// λ = +1 where row + column is even, −1 otherwise.
    Checkerboard,
    /// λ = +1 on bonds in the top half of the rows, 0 below.
    HalfZero,
    /// λ_i drawn uniformly from [−1, 1].
    Random {
        seed: u64,
    },
    Explicit {
        lambdas: Vec<f64>,
    },
}

impl FieldPreset {
    pub fn resolve(&self, geometry: &LatticeGeometry) -> Result<FieldConfig> {
        let n = geometry.n();
        let nn = n * n;
        let row_col = |b: usize| {
            let k = b % nn;
            (k / n, k % n)
        };
        match self {
            FieldPreset::Uniform { value } => FieldConfig::uniform(geometry, *value),
            FieldPreset::Checkerboard => FieldConfig::new(
                (0..geometry.bond_count())
                    .map(|b| {
                        let (r, c) = row_col(b);
                        if (r + c) % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect(),
            ),
            FieldPreset::HalfZero => FieldConfig::new(
                (0..geometry.bond_count())
                    .map(|b| if row_col(b).0 < n / 2 { 1.0 } else { 0.0 })
                    .collect(),
            ),
            FieldPreset::Random { seed } => {
                let mut rng = rng_from_seed(*seed);
                FieldConfig::new((0..geometry.bond_count()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            }
            FieldPreset::Explicit { lambdas } => {
                if lambdas.len() != geometry.bond_count() {
                    return Err(Error::SizeMismatch {
                        expected: geometry.bond_count(),
                        found: lambdas.len(),
                    });
                }
                FieldConfig::new(lambdas.clone())
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            FieldPreset::Uniform { value } => format!("uniform({value})"),
            FieldPreset::Checkerboard => "checkerboard".into(),
            FieldPreset::HalfZero => "half-zero".into(),
            FieldPreset::Random { seed } => format!("random({seed})"),
            FieldPreset::Explicit { .. } => "explicit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToricField {
    pub lambdas: FieldConfig,
    pub beta: f64,
}

impl ToricField {
    pub fn new(lambdas: FieldConfig, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "field amplitude must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self { lambdas, beta })
    }

    fn check(&self, geometry: &LatticeGeometry) -> Result<()> {
        if self.lambdas.len() != geometry.bond_count() {
            return Err(Error::SizeMismatch {
                expected: geometry.bond_count(),
                found: self.lambdas.len(),
            });
        }
        Ok(())
    }
}

fn canonical(mut mask: Vec<bool>) -> Vec<bool> {
    if mask.first() == Some(&true) {
        mask.iter_mut().for_each(|b| *b = !*b);
    }
    mask
}

/// Product of plaquette operators, as the set of plaquettes applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupElementH {
    plaquette_mask: Vec<bool>,
}

impl GroupElementH {
    pub fn identity(geometry: &LatticeGeometry) -> Self {
        Self {
            plaquette_mask: vec![false; geometry.plaquette_count()],
        }
    }

    /// Canonicalizes by complementing when plaquette 0 is set.
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self {
            plaquette_mask: canonical(mask),
        }
    }

    /// Element number `index` of the canonical enumeration (bit k ⇔ plaquette k+1).
    pub fn from_index(geometry: &LatticeGeometry, index: u64) -> Self {
        let mask = (0..geometry.plaquette_count())
            .map(|p| p > 0 && index >> (p - 1) & 1 == 1)
            .collect();
        Self { plaquette_mask: mask }
    }

    pub fn index(&self) -> u64 {
        self.plaquette_mask
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &b)| b)
            .fold(0, |acc, (p, _)| acc | 1 << (p - 1))
    }

    pub fn mask(&self) -> &[bool] {
        &self.plaquette_mask
    }

    /// `B_p · h`.
    pub fn with_plaquette(&self, p: usize) -> Self {
        let mut mask = self.plaquette_mask.clone();
        mask[p] = !mask[p];
        Self::from_mask(mask)
    }

    /// σ^x string of h|0_x⟩.
    pub fn sigma_x(&self, geometry: &LatticeGeometry) -> SpinConfig {
        geometry
            .apply_plaquette_flips(&SpinConfig::all_up(geometry, Basis::X), &self.plaquette_mask)
            .expect("mask sized by geometry")
    }
}

/// Product of vertex operators; its bond set is a closed loop.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupElementG {
    vertex_mask: Vec<bool>,
}

impl GroupElementG {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self {
            vertex_mask: canonical(mask),
        }
    }

    pub fn from_index(geometry: &LatticeGeometry, index: u64) -> Self {
        let mask = (0..geometry.vertex_count())
            .map(|s| s > 0 && index >> (s - 1) & 1 == 1)
            .collect();
        Self { vertex_mask: mask }
    }

    pub fn mask(&self) -> &[bool] {
        &self.vertex_mask
    }

    /// Bonds flipped by this element, as the σz string of g|0_z⟩.
    pub fn loop_config(&self, geometry: &LatticeGeometry) -> SpinConfig {
        geometry
            .apply_vertex_flips(&SpinConfig::all_up(geometry, Basis::Z), &self.vertex_mask)
            .expect("mask sized by geometry")
    }
}

/// One pseudo-spin θ_p = ±1 per plaquette.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoSpinConfig {
    pub thetas: Vec<i8>,
}

impl PseudoSpinConfig {
    /// σ_i^x = θ_p θ_p′ for the two plaquettes p, p′ sharing bond i.
    pub fn bond_spins(&self, geometry: &LatticeGeometry) -> SpinConfig {
        let values = (0..geometry.bond_count())
            .map(|b| {
                let [p, q] = *geometry.bond_plaquettes(b);
                self.thetas[p] * self.thetas[q]
            })
            .collect();
        SpinConfig::from_raw(values, Basis::X)
    }
}

/// θ_p = −1 exactly on the plaquettes applied by h.
pub fn map_to_ising(h: &GroupElementH) -> PseudoSpinConfig {
    PseudoSpinConfig {
        thetas: h.mask().iter().map(|&b| if b { -1 } else { 1 }).collect(),
    }
}

/// Inverse of `h ↦ σ^x(h)`: recovers the canonical group element from an
/// x-basis string, or `None` if some vertex constraint is violated.
pub fn group_element_of(geometry: &LatticeGeometry, c: &SpinConfig) -> Option<GroupElementH> {
    let np = geometry.plaquette_count();
    let mut theta = vec![0i8; np];
    theta[0] = 1;
    let mut stack = vec![0usize];
    while let Some(p) = stack.pop() {
        for &b in geometry.plaquette_bonds(p) {
            let [a, q] = *geometry.bond_plaquettes(b);
            let other = if a == p { q } else { a };
            if theta[other] == 0 {
                theta[other] = theta[p] * c.values()[b];
                stack.push(other);
            }
        }
    }
    let consistent = (0..geometry.bond_count()).all(|b| {
        let [p, q] = *geometry.bond_plaquettes(b);
        theta[p] * theta[q] == c.values()[b]
    });
    consistent.then(|| GroupElementH {
        plaquette_mask: theta.iter().map(|&t| t < 0).collect(),
    })
}

/// Σ_i λ_i σ_i^x(h).
pub fn field_energy(geometry: &LatticeGeometry, lambdas: &FieldConfig, h: &GroupElementH) -> f64 {
    spin_field_energy(lambdas.lambdas(), h.sigma_x(geometry).values())
}

pub(crate) fn spin_field_energy(lambdas: &[f64], spins: &[i8]) -> f64 {
    lambdas.iter().zip(spins).map(|(l, &s)| l * s as f64).sum()
}

/// exp(β Σ_{⟨p,p′⟩} J_{p,p′} θ_p θ_p′) with J_{p,p′} = λ of the shared bond.
pub fn ising_boltzmann_weight(geometry: &LatticeGeometry, h: &GroupElementH, field: &ToricField) -> f64 {
    let theta = map_to_ising(h).thetas;
    let coupling_sum: f64 = (0..geometry.bond_count())
        .map(|b| {
            let [p, q] = *geometry.bond_plaquettes(b);
            field.lambdas.lambdas()[b] * (theta[p] * theta[q]) as f64
        })
        .sum();
    (field.beta * coupling_sum).exp()
}

/// Bond sets of every closed loop in G, indexed like [`GroupElementG::from_index`].
pub(crate) fn enumerate_loops(geometry: &LatticeGeometry) -> Vec<u64> {
    let vm: Vec<u64> = (0..geometry.vertex_count())
        .map(|s| geometry.vertex_bitmask(s))
        .collect();
    subset_xors(&vm[1..])
}

/// Flipped-bond sets σ^x(h) for every h in H, in canonical index order.
pub(crate) fn enumerate_orbit(geometry: &LatticeGeometry) -> Vec<u64> {
    let pm: Vec<u64> = (0..geometry.plaquette_count())
        .map(|p| geometry.plaquette_bitmask(p))
        .collect();
    subset_xors(&pm[1..])
}

fn subset_xors(generators: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; 1 << generators.len()];
    for k in 1..out.len() {
        let low = k.trailing_zeros() as usize;
        out[k] = out[k & (k - 1)] ^ generators[low];
    }
    out
}

/// Exact evaluation of both projections by enumeration, for n ≤ 3.
#[derive(Debug, Clone)]
pub struct ExactToricOracle {
    geometry: LatticeGeometry,
    field: ToricField,
    orbit: Vec<u64>,
    energies: Vec<f64>,
    log_z: f64,
    sigma_z: SigmaZAmplitudes,
}

impl ExactToricOracle {
    pub fn new(n: usize, field: ToricField) -> Result<Self> {
        if n > EXACT_TORIC_MAX_N {
            return Err(Error::TooLargeForEnumeration {
                n,
                limit: EXACT_TORIC_MAX_N,
            });
        }
        let geometry = LatticeGeometry::new(n)?;
        field.check(&geometry)?;
        let orbit = enumerate_orbit(&geometry);
        let lambdas = field.lambdas.lambdas();
        let total: f64 = lambdas.iter().sum();
        let energies: Vec<f64> = orbit.iter().map(|&x| total - 2.0 * bits_sum(x, lambdas)).collect();
        let log_z = log_sum_exp(energies.iter().map(|e| field.beta * e));
        let sigma_z = SigmaZAmplitudes::new(&geometry, &field)?;
        Ok(Self {
            geometry,
            field,
            orbit,
            energies,
            log_z,
            sigma_z,
        })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn field(&self) -> &ToricField {
        &self.field
    }

    pub fn group_order(&self) -> usize {
        self.energies.len()
    }

    /// E(h) for every canonical h, indexed by [`GroupElementH::index`].
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn log_partition_function(&self) -> f64 {
        self.log_z
    }

    /// p(S_h) = e^{βE(h)} / Σ_h̃ e^{βE(h̃)}.
    pub fn sigma_x_probability(&self, h: &GroupElementH) -> f64 {
        self.sigma_x_probability_by_index(h.index() as usize)
    }

    pub fn sigma_x_probability_by_index(&self, index: usize) -> f64 {
        (self.field.beta * self.energies[index] - self.log_z).exp()
    }

    /// p(z_M) for the flip set `m` (bit i ⇔ bond i reads −1).
    pub fn sigma_z_probability(&self, m: u64) -> f64 {
        self.sigma_z.probability(m)
    }

    /// Exact ⟨B_p⟩ = Σ_h p(S_h) e^{(β/2)(E(B_p h) − E(h))}.
    pub fn stabilizer_expectation(&self, p: usize) -> f64 {
        let flip = self.geometry.plaquette_bitmask(p);
        let lambdas = self.field.lambdas.lambdas();
        let beta = self.field.beta;
        self.orbit
            .iter()
            .zip(&self.energies)
            .map(|(&x, &e)| {
                let flipped = x ^ flip;
                let delta = -2.0 * (bits_sum(flip & !x, lambdas) - bits_sum(flip & x, lambdas));
                debug_assert!({
                    let total: f64 = lambdas.iter().sum();
                    ((total - 2.0 * bits_sum(flipped, lambdas)) - (e + delta)).abs() < 1e-9
                });
                (beta * e - self.log_z).exp() * (0.5 * beta * delta).exp()
            })
            .sum()
    }

    pub fn stabilizer_vector(&self) -> Vec<f64> {
        (0..self.geometry.plaquette_count())
            .map(|p| self.stabilizer_expectation(p))
            .collect()
    }
}

fn bits_sum(mut bits: u64, values: &[f64]) -> f64 {
    let mut s = 0.0;
    while bits != 0 {
        let i = bits.trailing_zeros() as usize;
        s += values[i];
        bits &= bits - 1;
    }
    s
}

/// Loop-sum evaluation of the σz outcome distribution
///
/// p(z_M) = K · S(M)²,  S(M) = Σ_{C∈G} Π_{i∈C⊕M} tanh(βλ_i/2),
///
/// where K = Π_i cosh²(βλ_i/2) / (|G| Π_i cosh(βλ_i) Σ_C Π_{i∈C} tanh(βλ_i))
/// normalizes Σ_M p(z_M) = 1. Products over a flip set are looked up one byte
/// of bonds at a time.
#[derive(Debug, Clone)]
pub struct SigmaZAmplitudes {
    loops: Vec<u64>,
    half_tables: Vec<[f64; 256]>,
    log_norm: f64,
}

impl SigmaZAmplitudes {
    pub fn new(geometry: &LatticeGeometry, field: &ToricField) -> Result<Self> {
        if geometry.n() > SIGMA_Z_MAX_N {
            return Err(Error::TooLargeForEnumeration {
                n: geometry.n(),
                limit: SIGMA_Z_MAX_N,
            });
        }
        field.check(geometry)?;
        let lambdas = field.lambdas.lambdas();
        let beta = field.beta;
        let loops = enumerate_loops(geometry);
        let half: Vec<f64> = lambdas.iter().map(|l| (0.5 * beta * l).tanh()).collect();
        let full: Vec<f64> = lambdas.iter().map(|l| (beta * l).tanh()).collect();
        let half_tables = byte_tables(&half);
        let full_tables = byte_tables(&full);
        let denominator: f64 = loops.iter().map(|&c| table_product(&full_tables, c)).sum();
        let log_cosh = |x: f64| {
            let a = x.abs();
            a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
        };
        let log_norm = lambdas
            .iter()
            .map(|l| 2.0 * log_cosh(0.5 * beta * l) - log_cosh(beta * l))
            .sum::<f64>()
            - (loops.len() as f64).ln()
            - denominator.ln();
        Ok(Self {
            loops,
            half_tables,
            log_norm,
        })
    }

    /// S(M).
    pub fn loop_sum(&self, m: u64) -> f64 {
        self.loops
            .iter()
            .map(|&c| table_product(&self.half_tables, c ^ m))
            .sum()
    }

    pub fn probability(&self, m: u64) -> f64 {
        let s = self.loop_sum(m);
        s * s * self.log_norm.exp()
    }
}

fn byte_tables(values: &[f64]) -> Vec<[f64; 256]> {
    values
        .chunks(8)
        .map(|chunk| {
            let mut t = [1.0; 256];
            for (v, entry) in t.iter_mut().enumerate() {
                for (bit, x) in chunk.iter().enumerate() {
                    if v >> bit & 1 == 1 {
                        *entry *= x;
                    }
                }
                if chunk.len() < 8 && v >> chunk.len() != 0 {
                    *entry = 0.0;
                }
            }
            t
        })
        .collect()
}

#[inline]
fn table_product(tables: &[[f64; 256]], bits: u64) -> f64 {
    let mut prod = 1.0;
    for (j, t) in tables.iter().enumerate() {
        prod *= t[(bits >> (8 * j) & 0xff) as usize];
    }
    prod
}

/// Plaquette-flip Metropolis chain on the σx orbit, started from |0_x⟩.
pub struct SigmaXChain<'g> {
    geometry: &'g LatticeGeometry,
    lambdas: &'g [f64],
    beta: f64,
    spins: Vec<i8>,
    rng: ChainRng,
}

impl<'g> SigmaXChain<'g> {
    pub fn new(geometry: &'g LatticeGeometry, lambdas: &'g FieldConfig, beta: f64, rng: ChainRng) -> Self {
        Self {
            geometry,
            lambdas: lambdas.lambdas(),
            beta,
            spins: vec![1; geometry.bond_count()],
            rng,
        }
    }

    /// Change of Σλσ if plaquette p were flipped.
    #[inline]
    pub fn flip_delta(&self, p: usize) -> f64 {
        -2.0 * self
            .geometry
            .plaquette_bonds(p)
            .iter()
            .map(|&b| self.lambdas[b] * self.spins[b] as f64)
            .sum::<f64>()
    }

    #[inline]
    pub fn step(&mut self) -> bool {
        let p = self.rng.gen_range(0..self.geometry.plaquette_count());
        let delta = self.flip_delta(p);
        let ok = delta >= 0.0 || self.rng.gen::<f64>() < (self.beta * delta).exp();
        if ok {
            for &b in self.geometry.plaquette_bonds(p) {
                self.spins[b] = -self.spins[b];
            }
        }
        ok
    }

    pub fn sweeps(&mut self, sweeps: usize) {
        // A random extra step keeps the chain aperiodic when every flip is accepted.
        let extra = usize::from(sweeps > 0 && self.rng.gen::<bool>());
        for _ in 0..sweeps * self.geometry.plaquette_count() + extra {
            self.step();
        }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn energy(&self) -> f64 {
        spin_field_energy(self.lambdas, &self.spins)
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig::from_raw(self.spins.clone(), Basis::X)
    }
}

fn check_toric_inputs(geometry: &LatticeGeometry, lambdas: &FieldConfig, grid: &[f64]) -> Result<()> {
    if lambdas.len() != geometry.bond_count() {
        return Err(Error::SizeMismatch {
            expected: geometry.bond_count(),
            found: lambdas.len(),
        });
    }
    for &b in grid {
        ToricField::new(lambdas.clone(), b)?;
    }
    Ok(())
}

fn toric_meta(kind: ModelKind, n: usize, grid: &[f64], settings: &SamplerSettings, seed: u64) -> DatasetMeta {
    let mut meta = DatasetMeta::new(kind, n, grid.to_vec(), settings.count, seed);
    meta.therm_sweeps = settings.therm_sweeps;
    meta.stride_sweeps = settings.stride_sweeps;
    meta
}

fn sigma_x_records(
    geometry: &LatticeGeometry,
    lambdas: &FieldConfig,
    beta: f64,
    settings: &SamplerSettings,
    rng: ChainRng,
) -> Vec<Record> {
    let mut chain = SigmaXChain::new(geometry, lambdas, beta, rng);
    chain.sweeps(settings.therm_sweeps);
    (0..settings.count)
        .map(|_| {
            chain.sweeps(settings.stride_sweeps);
            Record {
                beta,
                sample: Sample::Spins(chain.config()),
            }
        })
        .collect()
}

/// σx projections at a single amplitude, seeded directly by `seed`.
pub fn sample_sigma_x(n: usize, field: &ToricField, settings: &SamplerSettings, seed: u64) -> Result<LabeledDataset> {
    settings.check()?;
    let geometry = LatticeGeometry::new(n)?;
    check_toric_inputs(&geometry, &field.lambdas, &[field.beta])?;
    let records = sigma_x_records(&geometry, &field.lambdas, field.beta, settings, rng_from_seed(seed));
    Ok(LabeledDataset {
        meta: toric_meta(ModelKind::ToricX, n, &[field.beta], settings, seed),
        records,
    })
}

/// σx projections on a grid of amplitudes, one chain per grid point.
pub fn sample_sigma_x_grid(
    n: usize,
    lambdas: &FieldConfig,
    grid: &[f64],
    settings: &SamplerSettings,
    master_seed: u64,
    chain_index: u64,
) -> Result<LabeledDataset> {
    settings.check()?;
    let geometry = LatticeGeometry::new(n)?;
    check_toric_inputs(&geometry, lambdas, grid)?;
    let parts = map_indexed(grid.len(), |i| {
        sigma_x_records(
            &geometry,
            lambdas,
            grid[i],
            settings,
            chain_rng(master_seed, i as u64, chain_index),
        )
    });
    Ok(LabeledDataset {
        meta: toric_meta(ModelKind::ToricX, n, grid, settings, master_seed),
        records: parts.into_iter().flatten().collect(),
    })
}

/// Metropolis chain over σz outcomes, started from |0_z⟩.
///
/// Each step either flips one random bond, accepted with
/// min(1, S(M′)²/S(M)²), or flips the four bonds of a random vertex. The
/// vertex move leaves p(z_M) unchanged and is always accepted; it makes the
/// chain ergodic over the gauge orbit when β is small.
pub struct SigmaZChain<'a> {
    amplitudes: &'a SigmaZAmplitudes,
    vertex_masks: Vec<u64>,
    bonds: usize,
    flips: u64,
    loop_sum: f64,
    rng: ChainRng,
}

impl<'a> SigmaZChain<'a> {
    pub fn new(geometry: &LatticeGeometry, amplitudes: &'a SigmaZAmplitudes, rng: ChainRng) -> Self {
        Self {
            amplitudes,
            vertex_masks: (0..geometry.vertex_count())
                .map(|s| geometry.vertex_bitmask(s))
                .collect(),
            bonds: geometry.bond_count(),
            flips: 0,
            loop_sum: amplitudes.loop_sum(0),
            rng,
        }
    }

    pub fn step(&mut self) -> bool {
        if self.rng.gen::<bool>() {
            let s = self.rng.gen_range(0..self.vertex_masks.len());
            self.flips ^= self.vertex_masks[s];
            return true;
        }
        let b = self.rng.gen_range(0..self.bonds);
        let proposal = self.flips ^ (1u64 << b);
        let s_new = self.amplitudes.loop_sum(proposal);
        let ratio = if self.loop_sum == 0.0 {
            1.0
        } else {
            (s_new / self.loop_sum).powi(2)
        };
        let ok = ratio >= 1.0 || self.rng.gen::<f64>() < ratio;
        if ok {
            self.flips = proposal;
            self.loop_sum = s_new;
        }
        ok
    }

    pub fn sweeps(&mut self, sweeps: usize) {
        for _ in 0..sweeps * self.bonds {
            self.step();
        }
    }

    pub fn flips(&self) -> u64 {
        self.flips
    }
}

fn sigma_z_records(
    geometry: &LatticeGeometry,
    lambdas: &FieldConfig,
    beta: f64,
    settings: &SamplerSettings,
    rng: ChainRng,
) -> Result<Vec<Record>> {
    let amplitudes = SigmaZAmplitudes::new(geometry, &ToricField::new(lambdas.clone(), beta)?)?;
    let mut chain = SigmaZChain::new(geometry, &amplitudes, rng);
    chain.sweeps(settings.therm_sweeps);
    Ok((0..settings.count)
        .map(|_| {
            chain.sweeps(settings.stride_sweeps);
            Record {
                beta,
                sample: Sample::Spins(SpinConfig::from_bitmask(geometry, chain.flips(), Basis::Z)),
            }
        })
        .collect())
}

fn check_sigma_z_size(n: usize) -> Result<()> {
    if n > SIGMA_Z_MAX_N {
        return Err(Error::InvalidSize(format!(
            "σz sampling limited to n ≤ {SIGMA_Z_MAX_N}, got {n}"
        )));
    }
    Ok(())
}

pub fn sample_sigma_z(n: usize, field: &ToricField, settings: &SamplerSettings, seed: u64) -> Result<LabeledDataset> {
    check_sigma_z_size(n)?;
    settings.check()?;
    let geometry = LatticeGeometry::new(n)?;
    check_toric_inputs(&geometry, &field.lambdas, &[field.beta])?;
    let records = sigma_z_records(&geometry, &field.lambdas, field.beta, settings, rng_from_seed(seed))?;
    Ok(LabeledDataset {
        meta: toric_meta(ModelKind::ToricZ, n, &[field.beta], settings, seed),
        records,
    })
}

pub fn sample_sigma_z_grid(
    n: usize,
    lambdas: &FieldConfig,
    grid: &[f64],
    settings: &SamplerSettings,
    master_seed: u64,
    chain_index: u64,
) -> Result<LabeledDataset> {
    check_sigma_z_size(n)?;
    settings.check()?;
    let geometry = LatticeGeometry::new(n)?;
    check_toric_inputs(&geometry, lambdas, grid)?;
    let parts = map_indexed(grid.len(), |i| {
        sigma_z_records(
            &geometry,
            lambdas,
            grid[i],
            settings,
            chain_rng(master_seed, i as u64, chain_index),
        )
    });
    let mut records = Vec::new();
    for part in parts {
        records.extend(part?);
    }
    Ok(LabeledDataset {
        meta: toric_meta(ModelKind::ToricZ, n, grid, settings, master_seed),
        records,
    })
}

/// Accumulates e^{(β/2)(E(B_p h) − E(h))} for every plaquette over σx samples.
fn stabilizer_terms(chain: &SigmaXChain, beta: f64, out: &mut [f64]) {
    for (p, o) in out.iter_mut().enumerate() {
        *o = (0.5 * beta * chain.flip_delta(p)).exp();
    }
}

/// Monte Carlo ⟨B_p⟩ with its naive standard error over `mc_samples`
/// samples spaced one sweep apart after 100 thermalization sweeps.
pub fn stabilizer_expectation(
    n: usize,
    field: &ToricField,
    p: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if mc_samples == 0 {
        return Err(Error::InvalidParameter("mc_samples must be >= 1".into()));
    }
    let geometry = LatticeGeometry::new(n)?;
    field.check(&geometry)?;
    if p >= geometry.plaquette_count() {
        return Err(Error::IndexOutOfRange {
            what: "plaquette",
            index: p,
            len: geometry.plaquette_count(),
        });
    }
    let mut chain = SigmaXChain::new(&geometry, &field.lambdas, field.beta, rng_from_seed(seed));
    chain.sweeps(SamplerSettings::new(1).therm_sweeps);
    let values: Vec<f64> = (0..mc_samples)
        .map(|_| {
            chain.sweeps(1);
            (0.5 * field.beta * chain.flip_delta(p)).exp()
        })
        .collect();
    Ok(Estimate::from_samples(&values))
}

/// Settings for building ⟨B_p⟩ datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilizerSettings {
    /// Independent estimate vectors per grid point.
    pub estimates: usize,
    /// σx samples averaged into each estimate.
    pub mc_samples: usize,
    pub therm_sweeps: usize,
    pub stride_sweeps: usize,
}

fn stabilizer_records(
    geometry: &LatticeGeometry,
    lambdas: &FieldConfig,
    beta: f64,
    settings: &StabilizerSettings,
    rng: ChainRng,
) -> Vec<Record> {
    let np = geometry.plaquette_count();
    let mut chain = SigmaXChain::new(geometry, lambdas, beta, rng);
    chain.sweeps(settings.therm_sweeps);
    let mut terms = vec![0.0; np];
    (0..settings.estimates)
        .map(|_| {
            let mut acc = vec![0.0; np];
            for _ in 0..settings.mc_samples {
                chain.sweeps(settings.stride_sweeps);
                stabilizer_terms(&chain, beta, &mut terms);
                acc.iter_mut().zip(&terms).for_each(|(a, t)| *a += t);
            }
            let inv = 1.0 / settings.mc_samples as f64;
            Record {
                beta,
                sample: Sample::Expectations(acc.into_iter().map(|a| a * inv).collect()),
            }
        })
        .collect()
}

/// One record per estimate: the vector of all n² plaquette expectations.
pub fn stabilizer_dataset(
    n: usize,
    lambdas: &FieldConfig,
    grid: &[f64],
    settings: &StabilizerSettings,
    master_seed: u64,
    chain_index: u64,
) -> Result<LabeledDataset> {
    if settings.estimates == 0 || settings.mc_samples == 0 || settings.stride_sweeps == 0 {
        return Err(Error::InvalidParameter(
            "estimates, mc_samples and stride must be >= 1".into(),
        ));
    }
    let geometry = LatticeGeometry::new(n)?;
    check_toric_inputs(&geometry, lambdas, grid)?;
    let parts = map_indexed(grid.len(), |i| {
        stabilizer_records(
            &geometry,
            lambdas,
            grid[i],
            settings,
            chain_rng(master_seed, i as u64, chain_index),
        )
    });
    let mut meta = DatasetMeta::new(ModelKind::Stabilizer, n, grid.to_vec(), settings.estimates, master_seed);
    meta.therm_sweeps = settings.therm_sweeps;
    meta.stride_sweeps = settings.stride_sweeps;
    meta.mc_samples = Some(settings.mc_samples);
    Ok(LabeledDataset {
        meta,
        records: parts.into_iter().flatten().collect(),
    })
}

/// Noise-free counterpart of [`stabilizer_dataset`] from the exact oracle (n ≤ 3).
pub fn stabilizer_dataset_exact(
    n: usize,
    lambdas: &FieldConfig,
    grid: &[f64],
    estimates: usize,
) -> Result<LabeledDataset> {
    let mut records = Vec::with_capacity(grid.len() * estimates);
    for &beta in grid {
        let oracle = ExactToricOracle::new(n, ToricField::new(lambdas.clone(), beta)?)?;
        let v = oracle.stabilizer_vector();
        records.extend((0..estimates).map(|_| Record {
            beta,
            sample: Sample::Expectations(v.clone()),
        }));
    }
    let meta = DatasetMeta::new(ModelKind::Stabilizer, n, grid.to_vec(), estimates, 0);
    Ok(LabeledDataset { meta, records })
}
