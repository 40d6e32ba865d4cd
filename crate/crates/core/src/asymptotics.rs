//! Limiting behaviour of ⟨t⟩(Γ): the 1/Γ divergence at weak dephasing, the
//! linear hopping regime at strong dephasing, and the optimum in between.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{EetError, Result};
use crate::fit::loglog_fit;
use crate::liouville::{assemble, StateSpec};
use crate::mfpt::{trapping_time_with, SolverOptions};
use crate::network::SiteNetwork;
use crate::subspace::{project_state, SubspaceReport};

/// Below this trapping-free population the weak-damping constant is zero.
const POPULATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakConstant {
    /// lim Γ→0 of Γ·⟨t⟩ (dimensionless).
    pub value: f64,
    /// Size of the restricted dephasing block that was inverted.
    pub block_dim: usize,
    /// The block was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Γ·⟨t⟩ in the weak-dephasing limit.
///
/// The normalised dephasing superoperator X ↦ X − diag X is written in the
/// exciton basis and restricted to the operators |a⟩⟨b| with a, b trapping
/// free and E_a = E_b. Coherences between non-degenerate excitons rotate at
/// |E_a − E_b| ≫ Γ and average out, so only this secular block survives the
/// limit.
pub fn weak_damping_constant(net: &SiteNetwork, report: &SubspaceReport, state: &StateSpec) -> Result<WeakConstant> {
    if report.n_sites != net.n_sites() || report.trap_site != net.trap_site() {
        return Err(EetError::Parameter("subspace report does not belong to this network".into()));
    }
    let (rho, pop) = project_state(report, state)?;
    if report.perp_dim == 0 || pop.abs() < POPULATION_FLOOR {
        return Ok(WeakConstant { value: 0.0, block_dim: 0, pseudo_inverse: false });
    }
    let u = &report.exciton_states;
    let e = &report.exciton_energies;
    let tol = report.degeneracy_tol();
    let perp = &report.perp_indices;
    let pairs: Vec<(usize, usize)> = perp
        .iter()
        .flat_map(|&a| perp.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| (e[a] - e[b]).abs() <= tol)
        .collect();
    let m = pairs.len();
    let n = report.n_sites;

    let block = DMatrix::from_fn(m, m, |r, c| {
        let (a2, b2) = pairs[r];
        let (a, b) = pairs[c];
        let delta = if (a, b) == (a2, b2) { 1.0 } else { 0.0 };
        delta - (0..n).map(|i| u[(i, a2)] * u[(i, a)] * u[(i, b)] * u[(i, b2)]).sum::<f64>()
    });
    // ⟨a|ρ_⊥|b⟩; the block is real so real and imaginary parts decouple
    let rhs: Vec<_> = pairs
        .iter()
        .map(|&(a, b)| {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| rho[(i, j)] * u[(i, a)] * u[(j, b)])
                .sum::<num_complex::Complex64>()
        })
        .collect();
    let re = DVector::from_iterator(m, rhs.iter().map(|z| z.re));

    let svd = block.svd(true, true);
    let smax = svd.singular_values.max();
    let pseudo_inverse = svd.singular_values.min() <= 1e-10 * smax;
    if pseudo_inverse {
        warn!("restricted dephasing block is singular; using pseudo-inverse");
    }
    let x = svd
        .solve(&re, 1e-10 * smax)
        .map_err(|e| EetError::Singular(e.to_string()))?;
    let value = pairs.iter().zip(x.iter()).filter(|((a, b), _)| a == b).map(|(_, v)| v).sum();
    Ok(WeakConstant { value, block_dim: m, pseudo_inverse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongFit {
    /// d log⟨t⟩ / d log Γ.
    pub slope: f64,
    pub slope_ci: [f64; 2],
    /// c in ⟨t⟩ ≈ c·Γ, least squares through the origin.
    pub hop_prefactor: f64,
    pub points: usize,
}

/// Log-log slope and linear prefactor of a large-Γ curve of (Γ, ⟨t⟩).
pub fn strong_damping_fit(curve: &[(f64, f64)]) -> Result<StrongFit> {
    if curve.len() < 4 {
        return Err(EetError::Parameter(format!("strong-damping fit needs at least 4 points, got {}", curve.len())));
    }
    let (g, t): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    let fit = loglog_fit(&g, &t)?;
    let hop_prefactor = curve.iter().map(|(g, t)| g * t).sum::<f64>() / curve.iter().map(|(g, _)| g * g).sum::<f64>();
    Ok(StrongFit { slope: fit.slope, slope_ci: fit.slope_ci, hop_prefactor, points: curve.len() })
}

/// Log-log slope of a small-Γ curve; −1 when ⟨t⟩ diverges as 1/Γ.
pub fn weak_slope(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(EetError::Parameter("weak-damping slope needs at least 2 points".into()));
    }
    let (g, t): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    Ok(loglog_fit(&g, &t)?.slope)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Points of the initial log-spaced scan.
    pub scan_points: usize,
    /// Final bracket width in log₁₀ of the argument.
    pub log_tol: f64,
    /// An optimum counts only if both range ends exceed the minimum by this
    /// relative margin.
    pub min_prominence: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { scan_points: 41, log_tol: 1e-3, min_prominence: 0.25 }
    }
}

/// Minimises `f` over [lo, hi] on a log scale: a parallel scan locates the
/// bracket, golden-section search refines it. Returns (argmin, min).
pub fn minimize_log<F>(f: F, lo: f64, hi: f64, opts: &MinimizeOptions) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(EetError::Parameter(format!("search range [{lo}, {hi}] must be positive and increasing")));
    }
    if opts.scan_points < 3 {
        return Err(EetError::Parameter("scan needs at least 3 points".into()));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let xs: Vec<f64> = (0..opts.scan_points)
        .map(|k| a + (b - a) * k as f64 / (opts.scan_points - 1) as f64)
        .collect();
    let ys = xs.par_iter().map(|&x| f(10f64.powf(x))).collect::<Result<Vec<f64>>>()?;
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(EetError::Parameter("objective is not finite across the search range".into()));
    }
    let imin = (0..ys.len()).fold(0, |m, k| if ys[k] < ys[m] { k } else { m });
    let edge = ys[0].min(ys[ys.len() - 1]);
    if imin == 0 || imin == ys.len() - 1 || edge < (1.0 + opts.min_prominence) * ys[imin] {
        return Err(EetError::NoOptimum { lo, hi });
    }

    let g = |x: f64| f(10f64.powf(x));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut l, mut r) = (xs[imin - 1], xs[imin + 1]);
    let mut c = r - ratio * (r - l);
    let mut d = l + ratio * (r - l);
    let (mut fc, mut fd) = (g(c)?, g(d)?);
    let mut best = (xs[imin], ys[imin]);
    while r - l > opts.log_tol {
        if fc < fd {
            r = d;
            d = c;
            fd = fc;
            c = r - ratio * (r - l);
            fc = g(c)?;
        } else {
            l = c;
            c = d;
            fc = fd;
            d = l + ratio * (r - l);
            fd = g(d)?;
        }
    }
    for (x, y) in [(c, fc), (d, fd)] {
        if y < best.1 {
            best = (x, y);
        }
    }
    Ok((10f64.powf(best.0), best.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optimum {
    /// Numerical argmin of ⟨t⟩(Γ), meV.
    pub gamma_opt_numeric: f64,
    pub t_min: f64,
    /// sqrt(weak constant)·max|J|, meV.
    pub gamma_opt_estimate: f64,
}

fn mfpt_at(net: &SiteNetwork, state: &StateSpec, gamma: f64, solver: &SolverOptions) -> Result<f64> {
    let parts = assemble(net, gamma)?;
    Ok(trapping_time_with(&parts, state, solver)?.trace())
}

/// Dephasing rate minimising ⟨t⟩ within `range` (meV), plus the estimate
/// from the weak-damping constant. A curve with no pronounced interior
/// minimum gives [`EetError::NoOptimum`].
pub fn gamma_opt(net: &SiteNetwork, state: &StateSpec, range: (f64, f64), report: &SubspaceReport) -> Result<Optimum> {
    gamma_opt_with(net, state, range, report, &MinimizeOptions::default(), &SolverOptions::default())
}

pub fn gamma_opt_with(
    net: &SiteNetwork,
    state: &StateSpec,
    range: (f64, f64),
    report: &SubspaceReport,
    opts: &MinimizeOptions,
    solver: &SolverOptions,
) -> Result<Optimum> {
    let (gamma_opt_numeric, t_min) = minimize_log(|g| mfpt_at(net, state, g, solver), range.0, range.1, opts)?;
    let weak = weak_damping_constant(net, report, state)?;
    Ok(Optimum { gamma_opt_numeric, t_min, gamma_opt_estimate: weak.value.sqrt() * net.max_coupling() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub points: usize,
    /// Strong-damping fits use Γ ≥ this multiple of max|J|.
    pub strong_ratio: f64,
    /// Weak-damping fits use Γ ≤ this multiple of max|J|.
    pub weak_ratio: f64,
    pub solver: SolverOptions,
    pub minimize: MinimizeOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            gamma_min: 1e-3,
            gamma_max: 1e5,
            points: 81,
            strong_ratio: 100.0,
            weak_ratio: 1e-3,
            solver: SolverOptions::default(),
            minimize: MinimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoteReport {
    pub weak_constant: f64,
    pub weak_pseudo_inverse: bool,
    /// weak_constant/Γ on the sampled grid.
    pub weak_prediction: Vec<(f64, f64)>,
    pub strong_slope: Option<f64>,
    pub hop_prefactor: Option<f64>,
    pub weak_slope: Option<f64>,
    pub gamma_opt_estimate: f64,
    pub gamma_opt_numeric: Option<f64>,
    pub t_min: Option<f64>,
    /// Sampled (Γ, ⟨t⟩); divergent points are omitted.
    pub curve: Vec<(f64, f64)>,
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 2 {
        return Err(EetError::Parameter(format!("log grid [{lo}, {hi}] with {points} points is invalid")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..points).map(|k| 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64)).collect())
}

/// Samples ⟨t⟩(Γ) and evaluates all asymptotic quantities on it.
pub fn analyze(net: &SiteNetwork, state: &StateSpec, report: &SubspaceReport, opts: &AnalysisOptions) -> Result<AsymptoteReport> {
    let grid = log_grid(opts.gamma_min, opts.gamma_max, opts.points)?;
    let curve: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&g| match mfpt_at(net, state, g, &opts.solver) {
            Ok(t) => Ok(Some((g, t))),
            Err(EetError::Divergent { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let weak = weak_damping_constant(net, report, state)?;
    let jmax = net.max_coupling();
    let strong_pts: Vec<_> = curve.iter().copied().filter(|(g, _)| *g >= opts.strong_ratio * jmax).collect();
    let weak_pts: Vec<_> = curve.iter().copied().filter(|(g, _)| *g <= opts.weak_ratio * jmax).collect();
    let strong = strong_damping_fit(&strong_pts).ok();
    let optimum = match minimize_log(|g| mfpt_at(net, state, g, &opts.solver), opts.gamma_min, opts.gamma_max, &opts.minimize) {
        Ok(o) => Some(o),
        Err(EetError::NoOptimum { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(AsymptoteReport {
        weak_constant: weak.value,
        weak_pseudo_inverse: weak.pseudo_inverse,
        weak_prediction: grid.iter().map(|&g| (g, weak.value / g)).collect(),
        strong_slope: strong.map(|s| s.slope),
        hop_prefactor: strong.map(|s| s.hop_prefactor),
        weak_slope: weak_slope(&weak_pts).ok(),
        gamma_opt_estimate: weak.value.sqrt() * jmax,
        gamma_opt_numeric: optimum.map(|o| o.0),
        t_min: optimum.map(|o| o.1),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{make_state, Preset};
    use crate::network::{build_dendrimer, build_dimer};
    use crate::subspace::find_orthogonal_subspace;

    fn dendrimer() -> (SiteNetwork, SubspaceReport) {
        let net = build_dendrimer(2, 3, 20.0).unwrap();
        let r = find_orthogonal_subspace(&net);
        (net, r)
    }

    #[test]
    fn synthetic_linear_curve() {
        let curve: Vec<_> = [1e3, 1e4, 1e5, 1e6].iter().map(|&g| (g, 3.0 * g)).collect();
        let fit = strong_damping_fit(&curve).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.hop_prefactor - 3.0).abs() < 1e-12);
        assert!(strong_damping_fit(&curve[..3]).is_err());
    }

    #[test]
    fn synthetic_optimum() {
        let (a, b) = (50.0, 0.02);
        let (x, y) = minimize_log(|g| Ok(a / g + b * g), 1e-3, 1e5, &MinimizeOptions::default()).unwrap();
        assert!((x.log10() - (a / b).sqrt().log10()).abs() < 1e-3);
        assert!((y - 2.0 * (a * b).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn monotone_curve_has_no_optimum() {
        let r = minimize_log(|g| Ok(1.0 + g), 1e-3, 1e3, &MinimizeOptions::default());
        assert!(matches!(r, Err(EetError::NoOptimum { .. })));
    }

    #[test]
    fn weak_constant_matches_numerical_limit() {
        let (net, r) = dendrimer();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let w = weak_damping_constant(&net, &r, &state).unwrap();
        assert!(!w.pseudo_inverse);
        let gamma = 1e-6;
        let t = mfpt_at(&net, &state, gamma, &SolverOptions::default()).unwrap();
        assert!((gamma * t / w.value - 1.0).abs() < 1e-3, "A = {}, Γt = {}", w.value, gamma * t);
    }

    #[test]
    fn weak_constant_vanishes_without_trap_free_population() {
        let (net, r) = dendrimer();
        let state = make_state(&net, Preset::Gen1Coherent).unwrap();
        assert_eq!(weak_damping_constant(&net, &r, &state).unwrap().value, 0.0);
        let dimer = build_dimer(0.0, 20.0).unwrap();
        let rd = find_orthogonal_subspace(&dimer);
        let s = make_state(&dimer, Preset::Site(0)).unwrap();
        assert_eq!(weak_damping_constant(&dimer, &rd, &s).unwrap().value, 0.0);
    }

    #[test]
    fn weak_constant_is_linear_in_trap_free_weight() {
        let (net, r) = dendrimer();
        let outer = make_state(&net, Preset::OuterIncoherent).unwrap();
        let trap = make_state(&net, Preset::Site(net.trap_site())).unwrap();
        let full = weak_damping_constant(&net, &r, &outer).unwrap().value;
        for w in [0.25, 0.5, 0.75] {
            let mixed = outer.mix(&trap, w).unwrap();
            let a = weak_damping_constant(&net, &r, &mixed).unwrap().value;
            assert!((a - w * full).abs() < 1e-10 * full, "w = {w}: {a} vs {}", w * full);
        }
    }

    #[test]
    fn optimum_and_shift_invariance() {
        let (net, r) = dendrimer();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let o = gamma_opt(&net, &state, (1e-3, 1e5), &r).unwrap();
        assert!(o.gamma_opt_numeric > 0.0);
        let ratio = o.gamma_opt_estimate / o.gamma_opt_numeric;
        assert!((0.1..=10.0).contains(&ratio), "ratio {ratio}");
        let shifted = net.shifted(37.0);
        let rs = find_orthogonal_subspace(&shifted);
        let os = gamma_opt(&shifted, &state, (1e-3, 1e5), &rs).unwrap();
        assert!((os.gamma_opt_numeric.log10() - o.gamma_opt_numeric.log10()).abs() < 2e-3);
    }

    #[test]
    fn coherent_start_has_no_optimum() {
        let (net, r) = dendrimer();
        let state = make_state(&net, Preset::Gen1Coherent).unwrap();
        assert!(matches!(gamma_opt(&net, &state, (1e-3, 1e5), &r), Err(EetError::NoOptimum { .. })));
    }

    #[test]
    fn curve_lies_above_both_asymptotes() {
        let (net, r) = dendrimer();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let opts = AnalysisOptions { points: 33, ..Default::default() };
        let rep = analyze(&net, &state, &r, &opts).unwrap();
        let hop = rep.hop_prefactor.unwrap();
        assert!((rep.strong_slope.unwrap() - 1.0).abs() < 0.1);
        assert!((rep.weak_slope.unwrap() + 1.0).abs() < 0.05);
        for &(g, t) in &rep.curve {
            let bound = (rep.weak_constant / g).max(hop * g);
            assert!(t >= 0.5 * bound, "Γ = {g}: t = {t}, bound = {bound}");
        }
        assert!(rep.gamma_opt_numeric.is_some());
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json["weak_constant"].as_f64().unwrap() > 0.0);
    }
}
