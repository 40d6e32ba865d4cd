//! The four Liouvillian parts of ρ̇ = −(L_sys + L_dissip + L_trap + L_decay)ρ
//! for Haken–Strobl–Reineker pure dephasing, acting on column-stacked vec(ρ).
//!
//! Trapping is the anti-commutator sink (k_t/2){P_t, ρ}: it is the standard
//! irreversible form, it makes L₀ invertible once dephasing or trap coupling
//! reaches every state, and its trace is k_t·ρ_tt, which is the flux the
//! transfer efficiency integrates. Decay is homogeneous, k_d·ρ.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EetError, Result};
use crate::network::SiteNetwork;
use crate::sparse::CsrMatrix;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Hilbert dimension from which [`Storage::Auto`] assembles sparse parts.
pub const SPARSE_THRESHOLD: usize = 32;

/// Index of ρ_ij in column-stacked vec(ρ).
#[inline]
pub fn vec_index(n: usize, i: usize, j: usize) -> usize {
    i + j * n
}

pub fn vectorize(rho: &DMatrix<Complex64>) -> Vec<Complex64> {
    rho.as_slice().to_vec()
}

pub fn unvectorize(n: usize, v: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(n, n, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    Dense,
    Sparse,
    #[default]
    Auto,
}

/// A superoperator on vec(ρ).
#[derive(Debug, Clone, PartialEq)]
pub enum SuperOp {
    Dense(DMatrix<Complex64>),
    Sparse(CsrMatrix<Complex64>),
}

impl SuperOp {
    fn from_triplets(dim: usize, triplets: Vec<(usize, usize, Complex64)>, sparse: bool) -> Self {
        if sparse {
            SuperOp::Sparse(CsrMatrix::from_triplets(dim, dim, triplets))
        } else {
            let mut m = DMatrix::zeros(dim, dim);
            for (r, c, v) in triplets {
                m[(r, c)] += v;
            }
            SuperOp::Dense(m)
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SuperOp::Dense(m) => m.nrows(),
            SuperOp::Sparse(m) => m.nrows(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, SuperOp::Sparse(_))
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn nonzeros(&self) -> Box<dyn Iterator<Item = (usize, usize, Complex64)> + '_> {
        match self {
            SuperOp::Dense(m) => {
                let n = m.nrows();
                Box::new(
                    (0..m.ncols())
                        .flat_map(move |c| (0..n).map(move |r| (r, c)))
                        .map(move |(r, c)| (r, c, m[(r, c)]))
                        .filter(|(_, _, v)| *v != Complex64::new(0.0, 0.0)),
                )
            }
            SuperOp::Sparse(m) => Box::new(m.iter()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        match self {
            SuperOp::Dense(m) => m.clone(),
            SuperOp::Sparse(m) => m.to_dense(),
        }
    }

    pub fn to_csr(&self) -> CsrMatrix<Complex64> {
        match self {
            SuperOp::Dense(_) => CsrMatrix::from_triplets(self.dim(), self.dim(), self.nonzeros().collect()),
            SuperOp::Sparse(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        match self {
            SuperOp::Dense(m) => (m * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(),
            SuperOp::Sparse(m) => {
                let mut y = vec![Complex64::new(0.0, 0.0); m.nrows()];
                m.matvec(x, &mut y);
                y
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nonzeros().next().is_none()
    }
}

/// The four vectorized Liouvillian parts for one network and dephasing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvillianParts {
    pub n: usize,
    pub gamma: f64,
    pub trap_site: usize,
    pub trap_rate: f64,
    pub decay_rate: f64,
    pub l_sys: SuperOp,
    pub l_dissip: SuperOp,
    pub l_trap: SuperOp,
    pub l_decay: SuperOp,
}

impl LiouvillianParts {
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Nonzeros of L₀ (`include_decay = false`) or the full L.
    pub fn generator_nonzeros(&self, include_decay: bool) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let decay = include_decay.then_some(&self.l_decay);
        self.l_sys
            .nonzeros()
            .chain(self.l_dissip.nonzeros())
            .chain(self.l_trap.nonzeros())
            .chain(decay.into_iter().flat_map(|d| d.nonzeros()))
    }

    /// Summed generator as a sparse matrix.
    pub fn generator(&self, include_decay: bool) -> CsrMatrix<Complex64> {
        CsrMatrix::from_triplets(self.dim(), self.dim(), self.generator_nonzeros(include_decay).collect())
    }

    /// L·ρ for a density matrix (without the minus sign of the equation of motion).
    pub fn apply(&self, rho: &DMatrix<Complex64>, include_decay: bool) -> DMatrix<Complex64> {
        let x = vectorize(rho);
        let mut y = self.l_sys.apply(&x);
        let parts: &[&SuperOp] = if include_decay {
            &[&self.l_dissip, &self.l_trap, &self.l_decay]
        } else {
            &[&self.l_dissip, &self.l_trap]
        };
        for part in parts {
            for (acc, v) in y.iter_mut().zip(part.apply(&x)) {
                *acc += v;
            }
        }
        unvectorize(self.n, &y)
    }
}

pub fn assemble(net: &SiteNetwork, gamma: f64) -> Result<LiouvillianParts> {
    assemble_with(net, gamma, Storage::Auto)
}

pub fn assemble_with(net: &SiteNetwork, gamma: f64, storage: Storage) -> Result<LiouvillianParts> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(EetError::Parameter(format!("dephasing rate must be finite and non-negative, got {gamma}")));
    }
    let n = net.n_sites();
    let dim = n * n;
    let sparse = match storage {
        Storage::Dense => false,
        Storage::Sparse => true,
        Storage::Auto => n >= SPARSE_THRESHOLD,
    };
    let h = net.hamiltonian();
    let idx = |i, j| vec_index(n, i, j);

    // i(Hρ − ρH)
    let mut sys = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let row = idx(i, j);
            for k in 0..n {
                if h[(i, k)] != 0.0 {
                    sys.push((row, idx(k, j), I * h[(i, k)]));
                }
                if h[(k, j)] != 0.0 {
                    sys.push((row, idx(i, k), -I * h[(k, j)]));
                }
            }
        }
    }

    let mut dissip = Vec::new();
    if gamma > 0.0 {
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    dissip.push((idx(i, j), idx(i, j), Complex64::new(gamma, 0.0)));
                }
            }
        }
    }

    // (k_t/2)(P_t ρ + ρ P_t)
    let t = net.trap_site();
    let half = Complex64::new(0.5 * net.trap_rate(), 0.0);
    let mut trap = Vec::new();
    if net.trap_rate() > 0.0 {
        for j in 0..n {
            trap.push((idx(t, j), idx(t, j), half));
        }
        for i in 0..n {
            trap.push((idx(i, t), idx(i, t), half));
        }
    }

    let decay = if net.decay_rate() > 0.0 {
        (0..dim).map(|k| (k, k, Complex64::new(net.decay_rate(), 0.0))).collect()
    } else {
        Vec::new()
    };

    Ok(LiouvillianParts {
        n,
        gamma,
        trap_site: t,
        trap_rate: net.trap_rate(),
        decay_rate: net.decay_rate(),
        l_sys: SuperOp::from_triplets(dim, sys, sparse),
        l_dissip: SuperOp::from_triplets(dim, dissip, sparse),
        l_trap: SuperOp::from_triplets(dim, trap, sparse),
        l_decay: SuperOp::from_triplets(dim, decay, sparse),
    })
}

/// Named initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Equal incoherent population on the outermost dendrimer generation.
    OuterIncoherent,
    /// Equal-amplitude coherent superposition of the first dendrimer generation.
    Gen1Coherent,
    /// All population on one site.
    Site(usize),
    Custom,
}

/// Initial density matrix ρ(0).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub rho0: DMatrix<Complex64>,
    pub preset: Preset,
}

impl StateSpec {
    /// Validates a user-supplied density matrix.
    pub fn custom(rho0: DMatrix<Complex64>) -> Result<Self> {
        let n = rho0.nrows();
        if n == 0 || rho0.ncols() != n {
            return Err(EetError::Configuration("density matrix must be square and non-empty".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (rho0[(i, j)] - rho0[(j, i)].conj()).norm() > 1e-12 {
                    return Err(EetError::Configuration(format!("density matrix not Hermitian at ({i},{j})")));
                }
            }
        }
        let trace: Complex64 = rho0.trace();
        if (trace - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
            return Err(EetError::Configuration(format!("density matrix trace is {trace}, expected 1")));
        }
        let min_eig = rho0.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(EetError::Configuration(format!(
                "density matrix is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { rho0, preset: Preset::Custom })
    }

    pub fn n(&self) -> usize {
        self.rho0.nrows()
    }

    /// Convex mixture w·self + (1 − w)·other.
    pub fn mix(&self, other: &StateSpec, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) || self.n() != other.n() {
            return Err(EetError::Parameter("mixture needs weight in [0, 1] and equal dimensions".into()));
        }
        let rho0 = self.rho0.scale(weight) + other.rho0.scale(1.0 - weight);
        Ok(Self { rho0, preset: Preset::Custom })
    }
}

pub fn make_state(net: &SiteNetwork, preset: Preset) -> Result<StateSpec> {
    let n = net.n_sites();
    let mut rho0 = DMatrix::zeros(n, n);
    match preset {
        Preset::OuterIncoherent => {
            let gens = net.generations().ok_or_else(|| {
                EetError::Configuration("outer_incoherent requires a dendrimer network".into())
            })?;
            let outer = gens.iter().copied().max().unwrap_or(0);
            if outer == 0 {
                return Err(EetError::Configuration("dendrimer has no outer generation".into()));
            }
            let sites = net.generation_sites(outer).unwrap_or_default();
            let w = Complex64::new(1.0 / sites.len() as f64, 0.0);
            for s in sites {
                rho0[(s, s)] = w;
            }
        }
        Preset::Gen1Coherent => {
            let sites = net
                .generation_sites(1)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| EetError::Configuration("gen1_coherent requires a dendrimer network".into()))?;
            let w = Complex64::new(1.0 / sites.len() as f64, 0.0);
            for &a in &sites {
                for &b in &sites {
                    rho0[(a, b)] = w;
                }
            }
        }
        Preset::Site(k) => {
            if k >= n {
                return Err(EetError::Configuration(format!("site {k} outside {n}-site network")));
            }
            rho0[(k, k)] = Complex64::new(1.0, 0.0);
        }
        Preset::Custom => {
            return Err(EetError::Configuration("custom states are built with StateSpec::custom".into()));
        }
    }
    Ok(StateSpec { rho0, preset })
}

#[derive(Debug, Clone)]
pub struct PropagateOptions {
    /// Local relative truncation tolerance per step.
    pub rtol: f64,
    /// Number of uniformly spaced output samples on [0, t_final].
    pub samples: usize,
    /// Stop as soon as Tr ρ falls below this value.
    pub stop_below: Option<f64>,
    pub max_steps: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, samples: 101, stop_below: None, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<Complex64>>,
    pub traces: Vec<f64>,
    /// ∫₀^T Tr ρ(t) dt over the propagated interval.
    pub survival_integral: f64,
    pub final_time: f64,
    pub final_state: DMatrix<Complex64>,
    /// −d Tr ρ/dt at the final time.
    pub final_flux: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_trace(&self) -> f64 {
        self.final_state.trace().re
    }

    /// Tail ∫_T^∞ Tr ρ dt assuming a single exponential beyond T with the
    /// instantaneous loss rate at T.
    pub fn tail_estimate(&self) -> f64 {
        let tr = self.final_trace();
        if tr == 0.0 {
            0.0
        } else if self.final_flux > 0.0 {
            tr * tr / self.final_flux
        } else {
            f64::INFINITY
        }
    }

    /// Survival integral closed with the exponential tail.
    pub fn total_survival(&self) -> f64 {
        self.survival_integral + self.tail_estimate()
    }
}

const MAX_TERMS: usize = 60;

/// Integrates ρ̇ = −Lρ with an adaptive Taylor-series stepper.
///
/// Each step sums (−hL)^k ρ/k! until the terms fall below `rtol` relative to
/// ρ; the step is halved when the series needs too many terms and grown when
/// it converges quickly. Output samples and the survival integral use the
/// same series, so they are as accurate as the steps themselves.
pub fn propagate(
    parts: &LiouvillianParts,
    state: &StateSpec,
    t_final: f64,
    include_decay: bool,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(EetError::Parameter(format!("t_final must be positive, got {t_final}")));
    }
    let n = parts.n;
    if state.n() != n {
        return Err(EetError::Parameter(format!("state is {}x{0}, network has {n} sites", state.n())));
    }
    let l = parts.generator(include_decay);
    let dim = n * n;
    let trace_of = |v: &[Complex64]| -> f64 { (0..n).map(|i| v[vec_index(n, i, i)].re).sum() };
    let max_abs = |v: &[Complex64]| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let l_norm = {
        let mut rows = vec![0.0f64; dim];
        for (r, _, v) in l.iter() {
            rows[r] += v.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    };

    let samples = opts.samples.max(2);
    let sample_times: Vec<f64> = (0..samples).map(|k| t_final * k as f64 / (samples - 1) as f64).collect();
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    let mut traces = Vec::with_capacity(samples);

    let mut y = vectorize(&state.rho0);
    let mut t = 0.0;
    let mut h = if l_norm > 0.0 { 1.0 / l_norm } else { t_final };
    let mut integral = 0.0;
    let mut next_sample = 0;
    let mut steps = 0;
    let mut terms: Vec<Vec<Complex64>> = Vec::with_capacity(MAX_TERMS + 1);
    let mut scratch = vec![Complex64::new(0.0, 0.0); dim];

    let record = |v: &[Complex64], time: f64, times: &mut Vec<f64>, states: &mut Vec<DMatrix<Complex64>>, traces: &mut Vec<f64>| {
        times.push(time);
        traces.push(trace_of(v));
        states.push(unvectorize(n, v));
    };

    record(&y, 0.0, &mut times, &mut states, &mut traces);
    next_sample += 1;

    let mut stopped_early = false;
    while t < t_final {
        if steps >= opts.max_steps {
            return Err(EetError::Integration { t_reached: t, reason: "step limit reached".into() });
        }
        h = h.min(t_final - t);
        if h <= 1e-15 * t.max(1.0) {
            return Err(EetError::Integration { t_reached: t, reason: "step size underflow".into() });
        }
        let y_norm = max_abs(&y);
        if y_norm == 0.0 {
            break;
        }
        terms.clear();
        terms.push(y.clone());
        let mut converged = None;
        let mut largest = y_norm;
        for k in 1..=MAX_TERMS {
            l.matvec(&terms[k - 1], &mut scratch);
            let factor = -h / k as f64;
            let next: Vec<Complex64> = scratch.iter().map(|z| z * factor).collect();
            let size = max_abs(&next);
            largest = largest.max(size);
            terms.push(next);
            let prev = max_abs(&terms[k - 1]);
            if k >= 3 && size <= opts.rtol * y_norm * 1e-3 && prev <= opts.rtol * y_norm {
                converged = Some(k);
                break;
            }
        }
        let accept = matches!(converged, Some(k) if k <= 40) && largest <= 1e3 * y_norm;
        if !accept {
            h *= 0.5;
            continue;
        }
        let k_used = converged.unwrap_or(MAX_TERMS);
        let t_end = t + h;

        // output samples inside (t, t_end]
        while next_sample < samples && sample_times[next_sample] <= t_end * (1.0 + 1e-14) {
            let s = ((sample_times[next_sample] - t) / h).clamp(0.0, 1.0);
            let mut v = vec![Complex64::new(0.0, 0.0); dim];
            let mut power = 1.0;
            for term in &terms {
                for (a, b) in v.iter_mut().zip(term) {
                    *a += b * power;
                }
                power *= s;
            }
            record(&v, sample_times[next_sample], &mut times, &mut states, &mut traces);
            next_sample += 1;
        }

        integral += h * terms.iter().enumerate().map(|(k, term)| trace_of(term) / (k + 1) as f64).sum::<f64>();
        let mut new_y = vec![Complex64::new(0.0, 0.0); dim];
        for term in &terms {
            for (a, b) in new_y.iter_mut().zip(term) {
                *a += b;
            }
        }
        y = new_y;
        t = if t_final - t_end <= 1e-14 * t_final { t_final } else { t_end };
        steps += 1;

        if k_used < 14 {
            h *= 1.5;
        } else if k_used > 24 {
            h *= 0.7;
        }

        if let Some(threshold) = opts.stop_below {
            if trace_of(&y) < threshold {
                stopped_early = t < t_final;
                break;
            }
        }
    }

    if stopped_early || times.last().copied() != Some(t) {
        record(&y, t, &mut times, &mut states, &mut traces);
    }
    l.matvec(&y, &mut scratch);
    let final_flux = trace_of(&scratch);
    Ok(Trajectory {
        times,
        states,
        traces,
        survival_integral: integral,
        final_time: t,
        final_state: unvectorize(n, &y),
        final_flux,
        steps,
    })
}
