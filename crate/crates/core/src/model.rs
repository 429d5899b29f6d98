//! Ising problems, 2-SAT style clause instances, and exact small-N oracles.
//!
//! Spin convention used throughout the crate: a Z eigenvalue of `+1` is spin
//! up and corresponds to bit `0`; `-1` is spin down and bit `1`. Statevector
//! basis indices follow the same rule (bit `i` of the index is qubit `i`).

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest N accepted by [`brute_force_ground_state`].
pub const MAX_BRUTE_FORCE_SPINS: usize = 24;

/// The three penalized bit pairs of the benchmark ensemble; `(0, 0)` is never drawn.
pub const PENALIZED_PAIRS: [(u8, u8); 3] = [(0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// `H = sum_{i<j} J_ij z_i z_j + sum_i h_i z_i + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    n: usize,
    fields: Vec<f64>,
    couplings: Vec<Coupling>,
    offset: f64,
    // CSR adjacency: neighbours of vertex v are adj[adj_start[v]..adj_start[v + 1]].
    adj_start: Vec<usize>,
    adj: Vec<(usize, f64)>,
}

impl IsingModel {
    /// Builds a model, merging repeated edges by summation. Edge endpoints may
    /// be given in either order.
    pub fn new(
        n: usize,
        fields: Vec<f64>,
        couplings: impl IntoIterator<Item = (usize, usize, f64)>,
        offset: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("model must have at least one vertex"));
        }
        if fields.len() != n {
            return Err(Error::length_mismatch("fields", n, fields.len()));
        }
        if let Some(h) = fields.iter().find(|h| !h.is_finite()) {
            return Err(Error::invalid(format!("non-finite field {h}")));
        }
        if !offset.is_finite() {
            return Err(Error::invalid(format!("non-finite offset {offset}")));
        }

        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, value) in couplings {
            if a >= n || b >= n {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) out of range for {n} vertices"
                )));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop on vertex {a}")));
            }
            if !value.is_finite() {
                return Err(Error::invalid(format!("non-finite coupling on ({a}, {b})")));
            }
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += value;
        }
        let couplings: Vec<Coupling> = merged
            .into_iter()
            .map(|((i, j), value)| Coupling { i, j, value })
            .collect();

        let mut degree = vec![0usize; n];
        for c in &couplings {
            degree[c.i] += 1;
            degree[c.j] += 1;
        }
        let mut adj_start = Vec::with_capacity(n + 1);
        adj_start.push(0);
        for d in &degree {
            adj_start.push(adj_start.last().unwrap() + d);
        }
        let mut fill = adj_start.clone();
        let mut adj = vec![(0usize, 0.0f64); adj_start[n]];
        for c in &couplings {
            adj[fill[c.i]] = (c.j, c.value);
            fill[c.i] += 1;
            adj[fill[c.j]] = (c.i, c.value);
            fill[c.j] += 1;
        }

        Ok(Self {
            n,
            fields,
            couplings,
            offset,
            adj_start,
            adj,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// Canonical couplings, sorted by `(i, j)` with `i < j`.
    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[self.adj_start[v]..self.adj_start[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj_start[v + 1] - self.adj_start[v]
    }

    /// `h_v + sum_j J_vj s_j` for any per-spin values `s` (spins or magnetizations).
    #[inline]
    pub fn local_field(&self, v: usize, s: &[f64]) -> f64 {
        self.neighbors(v)
            .iter()
            .fold(self.fields[v], |acc, &(j, jv)| acc + jv * s[j])
    }

    pub fn energy(&self, config: &SpinConfig) -> Result<f64> {
        if config.len() != self.n {
            return Err(Error::length_mismatch(
                "spin configuration",
                self.n,
                config.len(),
            ));
        }
        let z = config.values();
        let pair: f64 = self
            .couplings
            .iter()
            .map(|c| c.value * f64::from(z[c.i]) * f64::from(z[c.j]))
            .sum();
        let single: f64 = self
            .fields
            .iter()
            .zip(z)
            .map(|(h, &s)| h * f64::from(s))
            .sum();
        Ok(pair + single + self.offset)
    }

    /// Energy of a product state with Z magnetizations `mz`.
    pub fn mean_field_energy(&self, mz: &[f64]) -> Result<f64> {
        if mz.len() != self.n {
            return Err(Error::length_mismatch("magnetizations", self.n, mz.len()));
        }
        Ok(self.mean_field_energy_unchecked(mz))
    }

    pub(crate) fn mean_field_energy_unchecked(&self, mz: &[f64]) -> f64 {
        let pair: f64 = self
            .couplings
            .iter()
            .map(|c| c.value * mz[c.i] * mz[c.j])
            .sum();
        let single: f64 = self.fields.iter().zip(mz).map(|(h, m)| h * m).sum();
        pair + single + self.offset
    }

    /// Stable content hash, used to check that several solvers saw the same problem.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        self.n.hash(&mut hasher);
        self.offset.to_bits().hash(&mut hasher);
        for h in &self.fields {
            h.to_bits().hash(&mut hasher);
        }
        for c in &self.couplings {
            (c.i, c.j, c.value.to_bits()).hash(&mut hasher);
        }
        hasher.finish()
    }
}

/// One penalty term: the clause is violated when bit `i` equals `wi` and bit `j` equals `wj`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Clause {
    pub i: usize,
    pub j: usize,
    pub wi: u8,
    pub wj: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseInstance {
    n_vertices: usize,
    clauses: Vec<Clause>,
    /// Lattice length for generated instances.
    pub lattice: Option<usize>,
    pub seed: Option<u64>,
}

impl ClauseInstance {
    pub fn new(n_vertices: usize, clauses: Vec<Clause>) -> Result<Self> {
        if n_vertices == 0 {
            return Err(Error::invalid("instance must have at least one vertex"));
        }
        for c in &clauses {
            if c.i >= n_vertices || c.j >= n_vertices {
                return Err(Error::invalid(format!(
                    "clause ({}, {}) out of range for {n_vertices} vertices",
                    c.i, c.j
                )));
            }
            if c.i == c.j {
                return Err(Error::invalid(format!("clause on a single vertex {}", c.i)));
            }
            if c.wi > 1 || c.wj > 1 {
                return Err(Error::invalid(format!(
                    "clause ({}, {}) has non-binary bits ({}, {})",
                    c.i, c.j, c.wi, c.wj
                )));
            }
        }
        Ok(Self {
            n_vertices,
            clauses,
            lattice: None,
            seed: None,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// Number of clauses whose penalized bit pair matches `config`.
    pub fn violations(&self, config: &SpinConfig) -> Result<usize> {
        if config.len() != self.n_vertices {
            return Err(Error::length_mismatch(
                "spin configuration",
                self.n_vertices,
                config.len(),
            ));
        }
        Ok(self
            .clauses
            .iter()
            .filter(|c| config.bit(c.i) == c.wi && config.bit(c.j) == c.wj)
            .count())
    }
}

#[inline]
fn parity_sign(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Expands each clause projector `(1 + s_i Z_i)(1 + s_j Z_j) / 4`, `s = (-1)^w`,
/// into fields, a coupling and a constant.
pub fn expand_clauses(instance: &ClauseInstance) -> Result<IsingModel> {
    let n = instance.n_vertices();
    let mut fields = vec![0.0; n];
    let mut offset = 0.0;
    let mut couplings = Vec::with_capacity(instance.clauses().len());
    for c in instance.clauses() {
        let si = parity_sign(c.wi);
        let sj = parity_sign(c.wj);
        offset += 0.25;
        fields[c.i] += 0.25 * si;
        fields[c.j] += 0.25 * sj;
        couplings.push((c.i, c.j, 0.25 * si * sj));
    }
    IsingModel::new(n, fields, couplings, offset)
}

/// Periodic `L x L` lattice with one random clause per bond (right and down
/// neighbour of every site). Site `(r, c)` has index `r * L + c`.
pub fn generate_square_lattice_instance(l: usize, seed: u64) -> Result<ClauseInstance> {
    if l < 2 {
        return Err(Error::invalid(format!(
            "lattice length must be at least 2, got {l}"
        )));
    }
    let n = l
        .checked_mul(l)
        .ok_or_else(|| Error::invalid("lattice too large"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clauses = Vec::with_capacity(2 * n);
    for r in 0..l {
        for c in 0..l {
            let site = r * l + c;
            let right = r * l + (c + 1) % l;
            let down = ((r + 1) % l) * l + c;
            for neighbor in [right, down] {
                let (wi, wj) = PENALIZED_PAIRS[rng.gen_range(0..PENALIZED_PAIRS.len())];
                clauses.push(Clause {
                    i: site,
                    j: neighbor,
                    wi,
                    wj,
                });
            }
        }
    }
    let mut instance = ClauseInstance::new(n, clauses)?;
    instance.lattice = Some(l);
    instance.seed = Some(seed);
    Ok(instance)
}

/// Z eigenvalues `+1` (up, bit 0) or `-1` (down, bit 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::invalid(format!("spin value {v} is not +1 or -1")));
        }
        Ok(Self(values))
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(1),
                1 => Ok(-1),
                other => Err(Error::invalid(format!("bit value {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Bit `i` of `index` is the bit of spin `i`.
    pub fn from_index(n: usize, index: u64) -> Self {
        Self(
            (0..n)
                .map(|i| if (index >> i) & 1 == 0 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0)
            .fold(0u64, |acc, (i, _)| acc | (1 << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn bit(&self, i: usize) -> u8 {
        u8::from(self.0[i] < 0)
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.bit(i)).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub config: SpinConfig,
    pub energy: f64,
    /// Distance to the next distinct energy level; `0` when every configuration is degenerate.
    pub gap: f64,
    /// Number of configurations sharing the ground energy.
    pub degeneracy: u64,
}

#[derive(Debug, Clone, Copy)]
struct Scan {
    best: f64,
    best_index: u64,
    best_key: u64,
    count: u64,
    second: Option<f64>,
    tol: f64,
}

impl Scan {
    fn empty(tol: f64) -> Self {
        Self {
            best: f64::INFINITY,
            best_index: 0,
            best_key: u64::MAX,
            count: 0,
            second: None,
            tol,
        }
    }

    fn push(&mut self, energy: f64, index: u64, key: u64, count: u64) {
        if self.count == 0 {
            *self = Self {
                best: energy,
                best_index: index,
                best_key: key,
                count,
                ..*self
            };
        } else if energy < self.best - self.tol {
            self.second = Some(self.best);
            self.best = energy;
            self.best_index = index;
            self.best_key = key;
            self.count = count;
        } else if energy <= self.best + self.tol {
            self.count += count;
            self.best = self.best.min(energy);
            if key < self.best_key {
                self.best_key = key;
                self.best_index = index;
            }
        } else {
            self.second = Some(self.second.map_or(energy, |s| s.min(energy)));
        }
    }

    fn merge(mut self, other: Scan) -> Scan {
        if other.count == 0 {
            return self;
        }
        self.push(other.best, other.best_index, other.best_key, other.count);
        if let Some(second) = other.second {
            // other.second > other.best >= self.best, so this only updates `second`.
            self.push(second, 0, u64::MAX, 0);
        }
        self
    }
}

/// Exhaustive search over all `2^N` configurations. Ties go to the
/// lexicographically smallest configuration read from spin 0 with up before down.
pub fn brute_force_ground_state(model: &IsingModel) -> Result<GroundState> {
    let n = model.n_vertices();
    if n > MAX_BRUTE_FORCE_SPINS {
        return Err(Error::Capacity(format!(
            "brute-force enumeration is limited to {MAX_BRUTE_FORCE_SPINS} spins, model has {n}"
        )));
    }

    let scale = model
        .couplings()
        .iter()
        .map(|c| c.value.abs())
        .chain(model.fields().iter().map(|h| h.abs()))
        .fold(model.offset().abs(), f64::max)
        .max(1.0);
    let tol = 1e-9 * scale;

    let high_bits = n.saturating_sub(10).min(8);
    let low_bits = n - high_bits;
    let lex_key = |index: u64| index.reverse_bits() >> (64 - n);

    let scan = (0u64..1 << high_bits)
        .into_par_iter()
        .map(|chunk| {
            let mut index = chunk << low_bits;
            let mut z = SpinConfig::from_index(n, index).as_f64();
            let mut energy = model.mean_field_energy_unchecked(&z);
            let mut scan = Scan::empty(tol);
            scan.push(energy, index, lex_key(index), 1);
            // Gray-code walk over the low bits: one spin flip per step.
            for step in 1u64..1 << low_bits {
                let b = step.trailing_zeros() as usize;
                energy -= 2.0 * z[b] * model.local_field(b, &z);
                z[b] = -z[b];
                index ^= 1 << b;
                scan.push(energy, index, lex_key(index), 1);
            }
            scan
        })
        .reduce(|| Scan::empty(tol), Scan::merge);

    let config = SpinConfig::from_index(n, scan.best_index);
    let energy = model.energy(&config)?;
    Ok(GroundState {
        config,
        energy,
        gap: scan.second.map_or(0.0, |s| s - energy),
        degeneracy: scan.count,
    })
}
