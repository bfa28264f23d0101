//! Thermal sampling of the classical Ising gauge theory, H = −Σ_p Π_{i∈p} σ_i^z
//! with unit coupling, and its exact-enumeration reference.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, LabeledDataset, ModelKind, Record, Sample};
use crate::error::{Error, Result};
use crate::lattice::{Basis, LatticeGeometry, SpinConfig};
use crate::parallel::map_indexed;
use crate::rng::{chain_rng, rng_from_seed, ChainRng};

/// Largest n handled by [`exact_igt_oracle`] (2^(2n²) states).
pub const EXACT_IGT_MAX_N: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgtParams {
    pub n: usize,
    pub beta: f64,
}

impl IgtParams {
    /// The coupling J is fixed to one; β is the only thermal parameter.
    pub const COUPLING: f64 = 1.0;

    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self { n, beta })
    }
}

/// Markov-chain schedule. A sweep is one attempted update per site of the
/// chain's move set (bonds for the gauge theory, plaquettes for σx).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub count: usize,
    pub therm_sweeps: usize,
    pub stride_sweeps: usize,
    /// Gauge theory only: apply a uniformly random vertex (gauge) transformation
    /// before recording each configuration. Energies are unaffected.
    #[serde(default)]
    pub gauge_moves: bool,
}

impl SamplerSettings {
    pub fn new(count: usize) -> Self {
        Self {
            count,
            therm_sweeps: 100,
            stride_sweeps: 1,
            gauge_moves: false,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        if self.stride_sweeps == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1 sweep".into()));
        }
        Ok(())
    }
}

/// E = −Σ_p Π_{i∈p} σ_i^z.
pub fn igt_energy(geometry: &LatticeGeometry, c: &SpinConfig) -> i64 {
    -(0..geometry.plaquette_count())
        .map(|p| geometry.plaquette_product_unchecked(c.values(), p) as i64)
        .sum::<i64>()
}

/// Metropolis acceptance min(1, e^{−β ΔE}).
pub fn acceptance_probability(beta: f64, delta_e: f64) -> f64 {
    if delta_e <= 0.0 {
        1.0
    } else {
        (-beta * delta_e).exp()
    }
}

/// Single-spin-flip Metropolis chain at fixed β.
pub struct IgtChain<'g> {
    geometry: &'g LatticeGeometry,
    spins: Vec<i8>,
    products: Vec<i8>,
    energy: i64,
    // acceptance for ΔE = 4 and ΔE = 8
    accept: [f64; 2],
    rng: ChainRng,
}

impl<'g> IgtChain<'g> {
    /// Starts from a uniformly random configuration.
    pub fn hot(geometry: &'g LatticeGeometry, beta: f64, mut rng: ChainRng) -> Self {
        let spins: Vec<i8> = (0..geometry.bond_count())
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        Self::from_spins(geometry, beta, spins, rng)
    }

    pub fn from_spins(geometry: &'g LatticeGeometry, beta: f64, spins: Vec<i8>, rng: ChainRng) -> Self {
        let products: Vec<i8> = (0..geometry.plaquette_count())
            .map(|p| geometry.plaquette_product_unchecked(&spins, p))
            .collect();
        let energy = -products.iter().map(|&p| p as i64).sum::<i64>();
        Self {
            geometry,
            spins,
            products,
            energy,
            accept: [acceptance_probability(beta, 4.0), acceptance_probability(beta, 8.0)],
            rng,
        }
    }

    pub fn energy(&self) -> i64 {
        self.energy
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig::from_raw(self.spins.clone(), Basis::Z)
    }

    /// One attempted flip of a uniformly chosen bond.
    #[inline]
    pub fn step(&mut self) -> bool {
        let b = self.rng.gen_range(0..self.spins.len());
        let [pa, pb] = *self.geometry.bond_plaquettes(b);
        let delta = 2 * (self.products[pa] as i64 + self.products[pb] as i64);
        let ok = match delta {
            d if d <= 0 => true,
            4 => self.rng.gen::<f64>() < self.accept[0],
            _ => self.rng.gen::<f64>() < self.accept[1],
        };
        if ok {
            self.spins[b] = -self.spins[b];
            self.products[pa] = -self.products[pa];
            self.products[pb] = -self.products[pb];
            self.energy += delta;
        }
        ok
    }

    pub fn sweeps(&mut self, sweeps: usize) {
        // A random extra step keeps the chain aperiodic when every flip is accepted.
        let extra = usize::from(sweeps > 0 && self.rng.gen::<bool>());
        for _ in 0..sweeps * self.spins.len() + extra {
            self.step();
        }
    }

    /// Flips the star of each vertex with probability 1/2. Plaquette
    /// products, and with them the energy, are left unchanged.
    pub fn randomize_gauge(&mut self) {
        for s in 0..self.geometry.vertex_count() {
            if self.rng.gen::<bool>() {
                for &b in self.geometry.vertex_bonds(s) {
                    self.spins[b] = -self.spins[b];
                }
            }
        }
    }
}

fn run_igt_chain(geometry: &LatticeGeometry, beta: f64, settings: &SamplerSettings, rng: ChainRng) -> Vec<Record> {
    let mut chain = IgtChain::hot(geometry, beta, rng);
    chain.sweeps(settings.therm_sweeps);
    let mut out = Vec::with_capacity(settings.count);
    for _ in 0..settings.count {
        chain.sweeps(settings.stride_sweeps);
        if settings.gauge_moves {
            chain.randomize_gauge();
        }
        out.push(Record {
            beta,
            sample: Sample::Spins(chain.config()),
        });
    }
    out
}

fn igt_meta(n: usize, grid: Vec<f64>, settings: &SamplerSettings, seed: u64) -> DatasetMeta {
    let mut meta = DatasetMeta::new(ModelKind::Igt, n, grid, settings.count, seed);
    meta.therm_sweeps = settings.therm_sweeps;
    meta.stride_sweeps = settings.stride_sweeps;
    meta
}

/// `settings.count` configurations from one chain at `params.beta`, seeded directly by `seed`.
pub fn sample_igt(params: IgtParams, settings: &SamplerSettings, seed: u64) -> Result<LabeledDataset> {
    settings.check()?;
    let geometry = LatticeGeometry::new(params.n)?;
    let records = run_igt_chain(&geometry, params.beta, settings, rng_from_seed(seed));
    Ok(LabeledDataset {
        meta: igt_meta(params.n, vec![params.beta], settings, seed),
        records,
    })
}

/// One independent chain per grid value; chain `i` uses the stream
/// `(master_seed, i, chain_index)`. Records are ordered by grid index.
pub fn sample_igt_grid(
    n: usize,
    grid: &[f64],
    settings: &SamplerSettings,
    master_seed: u64,
    chain_index: u64,
) -> Result<LabeledDataset> {
    settings.check()?;
    for &b in grid {
        IgtParams::new(n, b)?;
    }
    let geometry = LatticeGeometry::new(n)?;
    let parts = map_indexed(grid.len(), |i| {
        run_igt_chain(
            &geometry,
            grid[i],
            settings,
            chain_rng(master_seed, i as u64, chain_index),
        )
    });
    Ok(LabeledDataset {
        meta: igt_meta(n, grid.to_vec(), settings, master_seed),
        records: parts.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactIgtStats {
    pub beta: f64,
    pub mean_energy: f64,
    /// Exact Boltzmann probability of each energy level.
    pub energy_histogram: BTreeMap<i64, f64>,
}

/// Number of configurations at each energy, by enumerating all 2^(2n²) states.
pub fn igt_energy_degeneracies(n: usize) -> Result<BTreeMap<i64, u64>> {
    if n > EXACT_IGT_MAX_N {
        return Err(Error::TooLargeForEnumeration {
            n,
            limit: EXACT_IGT_MAX_N,
        });
    }
    let g = LatticeGeometry::new(n)?;
    let masks: Vec<u64> = (0..g.plaquette_count()).map(|p| g.plaquette_bitmask(p)).collect();
    let plaquettes = g.plaquette_count() as i64;
    let mut deg = BTreeMap::new();
    for state in 0u64..(1u64 << g.bond_count()) {
        let violated = masks.iter().filter(|&&m| (state & m).count_ones() & 1 == 1).count() as i64;
        *deg.entry(2 * violated - plaquettes).or_insert(0) += 1;
    }
    Ok(deg)
}

/// Exact Boltzmann statistics at `beta` by full enumeration (n ≤ 3).
pub fn exact_igt_oracle(n: usize, beta: f64) -> Result<ExactIgtStats> {
    IgtParams::new(n, beta)?;
    let deg = igt_energy_degeneracies(n)?;
    Ok(exact_from_degeneracies(&deg, beta))
}

pub fn exact_from_degeneracies(deg: &BTreeMap<i64, u64>, beta: f64) -> ExactIgtStats {
    let e_min = *deg.keys().next().expect("nonempty spectrum") as f64;
    let weights: Vec<(i64, f64)> = deg
        .iter()
        .map(|(&e, &d)| (e, d as f64 * (-beta * (e as f64 - e_min)).exp()))
        .collect();
    let z: f64 = weights.iter().map(|(_, w)| w).sum();
    let energy_histogram: BTreeMap<i64, f64> = weights.iter().map(|&(e, w)| (e, w / z)).collect();
    let mean_energy = energy_histogram.iter().map(|(&e, &p)| e as f64 * p).sum();
    ExactIgtStats {
        beta,
        mean_energy,
        energy_histogram,
    }
}
