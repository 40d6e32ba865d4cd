//! Exciton network Hamiltonians: the built-in topologies, arbitrary graphs
//! read from a config file, and Gaussian static-disorder realizations.
//!
//! Energies and rates are in meV with ħ = 1, so times come out in ħ/meV.
//! Multiply by [`HBAR_MEV_PS`] to convert to picoseconds.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EetError, Result};

/// ħ in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.658_211_956_9;

/// Trapping rate used for the reference dendrimer, meV.
pub const DEFAULT_TRAP_RATE: f64 = 5.0;
/// Homogeneous decay rate used for the reference dendrimer, meV (5 µeV).
pub const DEFAULT_DECAY_RATE: f64 = 0.005;

const SYMMETRY_TOL: f64 = 1e-12;

/// Tight-binding exciton network with a single trap site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteNetwork {
    energies: Vec<f64>,
    couplings: DMatrix<f64>,
    trap_site: usize,
    trap_rate: f64,
    decay_rate: f64,
    labels: Option<Vec<String>>,
    /// Dendrimer generation of every site (0 = center), when the network was
    /// built as a dendrimer.
    generations: Option<Vec<usize>>,
}

impl SiteNetwork {
    pub fn new(
        energies: Vec<f64>,
        couplings: DMatrix<f64>,
        trap_site: usize,
        trap_rate: f64,
        decay_rate: f64,
    ) -> Result<Self> {
        let n = energies.len();
        if n == 0 {
            return Err(EetError::Parameter("network needs at least one site".into()));
        }
        if couplings.nrows() != n || couplings.ncols() != n {
            return Err(EetError::Parameter(format!(
                "coupling matrix is {}x{}, expected {n}x{n}",
                couplings.nrows(),
                couplings.ncols()
            )));
        }
        if energies.iter().chain(couplings.iter()).any(|x| !x.is_finite()) {
            return Err(EetError::Parameter("energies and couplings must be finite".into()));
        }
        let scale = couplings.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            if couplings[(i, i)] != 0.0 {
                return Err(EetError::Parameter(format!("coupling diagonal ({i},{i}) must be zero")));
            }
            for j in (i + 1)..n {
                if (couplings[(i, j)] - couplings[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(EetError::Parameter(format!("couplings not symmetric at ({i},{j})")));
                }
            }
        }
        if trap_site >= n {
            return Err(EetError::Parameter(format!("trap site {trap_site} outside [0, {n})")));
        }
        if !(trap_rate >= 0.0 && trap_rate.is_finite()) || !(decay_rate >= 0.0 && decay_rate.is_finite()) {
            return Err(EetError::Parameter("trap and decay rates must be finite and non-negative".into()));
        }
        Ok(Self {
            energies,
            couplings,
            trap_site,
            trap_rate,
            decay_rate,
            labels: None,
            generations: None,
        })
    }

    /// Builds a network from an edge list of `(i, j, J)` triples.
    pub fn from_edges(
        energies: Vec<f64>,
        edges: &[(usize, usize, f64)],
        trap_site: usize,
        trap_rate: f64,
        decay_rate: f64,
    ) -> Result<Self> {
        let n = energies.len();
        let mut couplings = DMatrix::zeros(n, n);
        for &(i, j, value) in edges {
            if i >= n || j >= n {
                return Err(EetError::Parameter(format!("coupling ({i},{j}) outside {n}-site network")));
            }
            if i == j {
                return Err(EetError::Parameter(format!("self-coupling on site {i}")));
            }
            couplings[(i, j)] = value;
            couplings[(j, i)] = value;
        }
        Self::new(energies, couplings, trap_site, trap_rate, decay_rate)
    }

    pub fn with_rates(mut self, trap_rate: f64, decay_rate: f64) -> Result<Self> {
        if !(trap_rate >= 0.0 && trap_rate.is_finite()) || !(decay_rate >= 0.0 && decay_rate.is_finite()) {
            return Err(EetError::Parameter("trap and decay rates must be finite and non-negative".into()));
        }
        self.trap_rate = trap_rate;
        self.decay_rate = decay_rate;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_sites() {
            return Err(EetError::Parameter(format!(
                "{} labels for {} sites",
                labels.len(),
                self.n_sites()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn trap_site(&self) -> usize {
        self.trap_site
    }

    pub fn trap_rate(&self) -> f64 {
        self.trap_rate
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn generations(&self) -> Option<&[usize]> {
        self.generations.as_deref()
    }

    /// Sites belonging to dendrimer generation `g`, if this is a dendrimer.
    pub fn generation_sites(&self, g: usize) -> Option<Vec<usize>> {
        self.generations
            .as_ref()
            .map(|gens| gens.iter().enumerate().filter(|(_, &x)| x == g).map(|(i, _)| i).collect())
    }

    /// System Hamiltonian H_S = Σ ε_i |i⟩⟨i| + Σ_{i≠j} J_ij |i⟩⟨j|.
    pub fn hamiltonian(&self) -> DMatrix<f64> {
        let mut h = self.couplings.clone();
        for (i, &e) in self.energies.iter().enumerate() {
            h[(i, i)] = e;
        }
        h
    }

    /// Largest |J_ij| over all bonds.
    pub fn max_coupling(&self) -> f64 {
        self.couplings.amax()
    }

    /// Number of nonzero couplings with i < j.
    pub fn n_bonds(&self) -> usize {
        let n = self.n_sites();
        (0..n).map(|i| ((i + 1)..n).filter(|&j| self.couplings[(i, j)] != 0.0).count()).sum()
    }

    /// Copy with every site energy replaced.
    pub fn with_energies(&self, energies: Vec<f64>) -> Result<Self> {
        if energies.len() != self.n_sites() {
            return Err(EetError::Parameter(format!(
                "{} energies for {} sites",
                energies.len(),
                self.n_sites()
            )));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(EetError::Parameter("site energies must be finite".into()));
        }
        Ok(Self { energies, ..self.clone() })
    }

    /// Copy with all site energies shifted by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            energies: self.energies.iter().map(|e| e + shift).collect(),
            ..self.clone()
        }
    }

    /// Relabels sites so that old site `i` becomes new site `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_sites();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(EetError::Parameter("relabeling is not a permutation of the sites".into()));
        }
        let mut energies = vec![0.0; n];
        let mut couplings = DMatrix::zeros(n, n);
        for i in 0..n {
            energies[perm[i]] = self.energies[i];
            for j in 0..n {
                couplings[(perm[i], perm[j])] = self.couplings[(i, j)];
            }
        }
        let permute = |v: &Vec<usize>| {
            let mut out = vec![0; n];
            for i in 0..n {
                out[perm[i]] = v[i];
            }
            out
        };
        Ok(Self {
            energies,
            couplings,
            trap_site: perm[self.trap_site],
            trap_rate: self.trap_rate,
            decay_rate: self.decay_rate,
            labels: self.labels.as_ref().map(|l| {
                let mut out = l.clone();
                for i in 0..n {
                    out[perm[i]] = l[i].clone();
                }
                out
            }),
            generations: self.generations.as_ref().map(permute),
        })
    }
}

/// Dendrimer with a trap at the center site 0.
///
/// The center has `branching` neighbours; every later site has
/// `branching - 1` children, so generation `g` holds
/// `branching * (branching - 1)^(g - 1)` sites. Sites are numbered
/// generation by generation, children of one parent consecutively.
pub fn build_dendrimer(generations: usize, branching: usize, coupling: f64) -> Result<SiteNetwork> {
    if generations < 1 {
        return Err(EetError::Parameter("dendrimer needs at least one generation".into()));
    }
    if branching < 2 {
        return Err(EetError::Parameter("dendrimer branching must be at least 2".into()));
    }
    check_coupling(coupling)?;

    let mut generation = vec![0usize];
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for g in 1..=generations {
        let children_per_parent = if g == 1 { branching } else { branching - 1 };
        let mut next = Vec::with_capacity(frontier.len() * children_per_parent);
        for &parent in &frontier {
            for _ in 0..children_per_parent {
                let child = generation.len();
                generation.push(g);
                edges.push((parent, child, coupling));
                next.push(child);
            }
        }
        frontier = next;
    }
    let n = generation.len();
    let mut net = SiteNetwork::from_edges(vec![0.0; n], &edges, 0, DEFAULT_TRAP_RATE, DEFAULT_DECAY_RATE)?;
    net.generations = Some(generation);
    Ok(net)
}

/// Homogeneous chain with J_ij = J·exp(−β(|i−j|−1)), trap at the last site.
pub fn build_chain(n: usize, coupling: f64, beta: f64) -> Result<SiteNetwork> {
    if n < 2 {
        return Err(EetError::Parameter("chain needs at least two sites".into()));
    }
    check_coupling(coupling)?;
    if !(beta >= 0.0) {
        return Err(EetError::Parameter("chain decay constant beta must be non-negative".into()));
    }
    let couplings = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let distance = i.abs_diff(j) as f64;
            coupling * (-beta * (distance - 1.0)).exp()
        }
    });
    SiteNetwork::new(vec![0.0; n], couplings, n - 1, DEFAULT_TRAP_RATE, DEFAULT_DECAY_RATE)
}

/// Donor–acceptor dimer with ε = (Δ, 0), trap on the acceptor (site 1).
pub fn build_dimer(delta: f64, coupling: f64) -> Result<SiteNetwork> {
    check_coupling(coupling)?;
    if !delta.is_finite() {
        return Err(EetError::Parameter("dimer detuning must be finite".into()));
    }
    SiteNetwork::from_edges(vec![delta, 0.0], &[(0, 1, coupling)], 1, DEFAULT_TRAP_RATE, DEFAULT_DECAY_RATE)
}

fn check_coupling(coupling: f64) -> Result<()> {
    if coupling > 0.0 && coupling.is_finite() {
        Ok(())
    } else {
        Err(EetError::Parameter(format!("coupling must be positive, got {coupling}")))
    }
}

/// On-disk description of an arbitrary network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub n_sites: usize,
    pub energies: Vec<f64>,
    /// `[i, j, J]` triples in meV; indices are written as numbers.
    pub couplings: Vec<[f64; 3]>,
    pub trap_site: usize,
    #[serde(rename = "trap_rate_meV")]
    pub trap_rate_mev: f64,
    #[serde(rename = "decay_rate_meV")]
    pub decay_rate_mev: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl NetworkFile {
    pub fn to_network(&self) -> Result<SiteNetwork> {
        if self.energies.len() != self.n_sites {
            return Err(EetError::Configuration(format!(
                "energies has {} entries but n_sites = {}",
                self.energies.len(),
                self.n_sites
            )));
        }
        let mut edges = Vec::with_capacity(self.couplings.len());
        for (k, &[i, j, value]) in self.couplings.iter().enumerate() {
            let index = |x: f64| -> Result<usize> {
                if x >= 0.0 && x.fract() == 0.0 && x < self.n_sites as f64 {
                    Ok(x as usize)
                } else {
                    Err(EetError::Configuration(format!("couplings[{k}]: site index {x} is invalid")))
                }
            };
            edges.push((index(i)?, index(j)?, value));
        }
        let net = SiteNetwork::from_edges(
            self.energies.clone(),
            &edges,
            self.trap_site,
            self.trap_rate_mev,
            self.decay_rate_mev,
        )?;
        match &self.labels {
            Some(labels) => net.with_labels(labels.clone()),
            None => Ok(net),
        }
    }

    pub fn from_network(net: &SiteNetwork) -> Self {
        let n = net.n_sites();
        let mut couplings = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let value = net.couplings[(i, j)];
                if value != 0.0 {
                    couplings.push([i as f64, j as f64, value]);
                }
            }
        }
        Self {
            n_sites: n,
            energies: net.energies.clone(),
            couplings,
            trap_site: net.trap_site,
            trap_rate_mev: net.trap_rate,
            decay_rate_mev: net.decay_rate,
            labels: net.labels.clone(),
        }
    }
}

/// Gaussian static disorder of the site energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    /// Per-site standard deviations; a single entry is broadcast to every site.
    pub sigma: Vec<f64>,
    pub seed: u64,
    pub n_samples: usize,
}

impl DisorderSpec {
    pub fn uniform(sigma: f64, seed: u64, n_samples: usize) -> Result<Self> {
        let spec = Self { sigma: vec![sigma], seed, n_samples };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_empty() {
            return Err(EetError::Parameter("disorder sigma list is empty".into()));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(EetError::Parameter("disorder sigma must be finite and non-negative".into()));
        }
        if self.n_samples == 0 {
            return Err(EetError::Parameter("disorder needs at least one sample".into()));
        }
        Ok(())
    }

    /// Standard deviation applied to `site` in an `n`-site network.
    pub fn sigma_for(&self, site: usize, n: usize) -> Result<f64> {
        match self.sigma.len() {
            1 => Ok(self.sigma[0]),
            len if len == n => Ok(self.sigma[site]),
            len => Err(EetError::Parameter(format!("{len} disorder widths for {n} sites"))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }
}

/// Random stream for one disorder realization.
///
/// The master seed keys a ChaCha8 generator and the sample index selects its
/// stream, so every sample is reproducible on its own and independent of the
/// order in which samples are evaluated.
pub fn sample_rng(seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index);
    rng
}

/// Draws realization `sample_index` of the disordered network.
pub fn sample_disorder(net: &SiteNetwork, spec: &DisorderSpec, sample_index: usize) -> Result<SiteNetwork> {
    spec.validate()?;
    if sample_index >= spec.n_samples {
        return Err(EetError::Parameter(format!(
            "sample index {sample_index} outside [0, {})",
            spec.n_samples
        )));
    }
    let n = net.n_sites();
    let mut rng = sample_rng(spec.seed, sample_index as u64);
    let mut energies = net.energies.clone();
    for (site, energy) in energies.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *energy += spec.sigma_for(site, n)? * z;
    }
    net.with_energies(energies)
}
