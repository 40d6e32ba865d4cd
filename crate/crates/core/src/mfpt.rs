//! Average trapping time ⟨t⟩ = Tr[L₀⁻¹ρ(0)] and transfer efficiency from
//! direct resolvent solves.
//!
//! The transfer efficiency q = Tr∫₀^∞ L_trap ρ(t) dt equals k_t·X_tt with
//! X = L⁻¹ρ(0) for the full (decaying) Liouvillian, so no time integration
//! is needed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{EetError, Result};
use crate::linalg::{Gmres, HermitianCoords, LuFactor};
use crate::liouville::{assemble, LiouvillianParts, StateSpec};
use crate::network::SiteNetwork;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Largest real system size (n²) solved by dense LU; larger systems use
    /// restarted GMRES.
    pub dense_limit: usize,
    /// Relative residual tolerance of the iterative solver.
    pub rtol: f64,
    pub restart: usize,
    pub max_iterations: usize,
    /// Condition estimate above which L₀ is treated as numerically singular.
    pub divergence_condition: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dense_limit: 4096,
            rtol: 1e-10,
            restart: 100,
            max_iterations: 100_000,
            divergence_condition: 1.0 / f64::EPSILON,
        }
    }
}

/// Solution of L·X = ρ(0) in Hermitian coordinates.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    coords: HermitianCoords,
    x: Vec<f64>,
    /// 1-norm condition estimate (dense solves only).
    pub condition: Option<f64>,
    /// Normwise relative residual ‖b − Lx‖/(‖L‖‖x‖ + ‖b‖) for dense solves,
    /// ‖b − Lx‖/‖b‖ for iterative ones.
    pub residual: f64,
}

impl ResolventSolution {
    pub fn trace(&self) -> f64 {
        self.coords.trace(&self.x)
    }

    pub fn population(&self, site: usize) -> f64 {
        self.x[self.coords.diag(site)]
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        self.coords.to_matrix(&self.x)
    }
}

/// Solves L₀·X = ρ(0) (`include_decay = false`) or L·X = ρ(0).
///
/// A zero pivot or a condition estimate above `divergence_condition` yields
/// [`EetError::Divergent`] for L₀ and [`EetError::Singular`] for L.
pub fn solve_resolvent(
    parts: &LiouvillianParts,
    state: &StateSpec,
    include_decay: bool,
    opts: &SolverOptions,
) -> Result<ResolventSolution> {
    let n = parts.n;
    if state.n() != n {
        return Err(EetError::Parameter(format!("state is {}x{0}, network has {n} sites", state.n())));
    }
    let coords = HermitianCoords::new(n);
    let triplets = coords.real_triplets(parts.generator_nonzeros(include_decay));
    let b = coords.from_matrix(&state.rho0);
    let dim = coords.dim();
    let singular = |condition: f64, why: String| {
        if include_decay {
            EetError::Singular(why)
        } else {
            EetError::Divergent { condition }
        }
    };

    if dim <= opts.dense_limit {
        let mut m = DMatrix::zeros(dim, dim);
        for (r, c, v) in triplets {
            m[(r, c)] += v;
        }
        let lu = LuFactor::new(&m).map_err(|e| singular(f64::INFINITY, e.to_string()))?;
        let condition = lu.condition_estimate();
        if !(condition <= opts.divergence_condition) {
            return Err(singular(condition, format!("condition estimate {condition:.3e}")));
        }
        let mut x = lu.solve(&b);
        // one step of iterative refinement
        let r = residual(&m, &x, &b);
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        let r = residual(&m, &x, &b);
        let inf = |v: &[f64]| v.iter().map(|a| a.abs()).fold(0.0, f64::max);
        let m_inf = (0..dim).map(|i| m.row(i).iter().map(|a| a.abs()).sum::<f64>()).fold(0.0, f64::max);
        let backward = inf(&r) / (m_inf * inf(&x) + inf(&b));
        if !(backward <= 1e-10) || x.iter().any(|v| !v.is_finite()) {
            return Err(singular(condition, format!("residual check failed ({backward:.3e})")));
        }
        Ok(ResolventSolution { coords, x, condition: Some(condition), residual: backward })
    } else {
        let a = CsrMatrix::from_triplets(dim, dim, triplets);
        let gmres = Gmres { restart: opts.restart, max_iterations: opts.max_iterations, rtol: opts.rtol };
        let sol = gmres.solve(&a, &b)?;
        Ok(ResolventSolution { coords, x: sol.x, condition: None, residual: sol.residual })
    }
}

fn residual(m: &DMatrix<f64>, x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    (0..n)
        .map(|i| {
            let row = m.row(i);
            b[i] - row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect()
}

/// ⟨t⟩ = Tr[L₀⁻¹ρ(0)] in ħ/meV.
pub fn trapping_time(parts: &LiouvillianParts, state: &StateSpec) -> Result<f64> {
    trapping_time_with(parts, state, &SolverOptions::default()).map(|s| s.trace())
}

pub fn trapping_time_with(
    parts: &LiouvillianParts,
    state: &StateSpec,
    opts: &SolverOptions,
) -> Result<ResolventSolution> {
    solve_resolvent(parts, state, false, opts)
}

/// Exact efficiency from the full resolvent: `(q_exact, q_decay)`.
pub fn efficiency_exact(parts: &LiouvillianParts, state: &StateSpec) -> Result<(f64, f64)> {
    efficiency_exact_with(parts, state, &SolverOptions::default())
}

pub fn efficiency_exact_with(
    parts: &LiouvillianParts,
    state: &StateSpec,
    opts: &SolverOptions,
) -> Result<(f64, f64)> {
    if parts.trap_rate == 0.0 && parts.decay_rate == 0.0 {
        return Err(EetError::Singular("no trapping and no decay: excitation is never lost".into()));
    }
    let sol = solve_resolvent(parts, state, true, opts)?;
    Ok((parts.trap_rate * sol.population(parts.trap_site), parts.decay_rate * sol.trace()))
}

/// q ≈ 1/(1 + k_d⟨t⟩). Returns `(q, divergent)`; a divergent ⟨t⟩ gives
/// q = 0, the limit of the formula.
pub fn efficiency_approx(mfpt: f64, decay_rate: f64) -> (f64, bool) {
    if mfpt.is_finite() {
        (1.0 / (1.0 + decay_rate * mfpt), false)
    } else {
        (0.0, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferResult {
    pub gamma: f64,
    /// ⟨t⟩ in ħ/meV; infinite when divergent.
    pub mfpt: f64,
    pub divergent: bool,
    pub q_exact: f64,
    pub q_decay: f64,
    pub q_approx: f64,
    pub condition_estimate: Option<f64>,
}

/// All transfer quantities for one network, state and dephasing rate.
pub fn transfer(net: &SiteNetwork, state: &StateSpec, gamma: f64, opts: &SolverOptions) -> Result<TransferResult> {
    let parts = assemble(net, gamma)?;
    transfer_from_parts(&parts, state, opts)
}

pub fn transfer_from_parts(parts: &LiouvillianParts, state: &StateSpec, opts: &SolverOptions) -> Result<TransferResult> {
    let (mfpt, divergent, condition_estimate) = match trapping_time_with(parts, state, opts) {
        Ok(sol) => (sol.trace(), false, sol.condition),
        Err(EetError::Divergent { condition }) => (f64::INFINITY, true, Some(condition)),
        Err(e) => return Err(e),
    };
    let (q_exact, q_decay) = efficiency_exact_with(parts, state, opts)?;
    let (q_approx, _) = efficiency_approx(mfpt, parts.decay_rate);
    Ok(TransferResult {
        gamma: parts.gamma,
        mfpt,
        divergent,
        q_exact,
        q_decay,
        q_approx,
        condition_estimate,
    })
}
