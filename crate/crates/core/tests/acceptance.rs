//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use eet_core::asymptotics::{gamma_opt, strong_damping_fit, weak_damping_constant};
use eet_core::ensemble::{fit_scaling, run_ensemble, write_csv, EnsembleOptions, EnsembleResult};
use eet_core::liouville::{assemble, make_state, propagate, Preset, PropagateOptions, StateSpec};
use eet_core::mfpt::{efficiency_exact, trapping_time, transfer, SolverOptions};
use eet_core::network::{build_dendrimer, build_dimer, DisorderSpec, SiteNetwork};
use eet_core::subspace::find_orthogonal_subspace;
use eet_core::EetError;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn dendrimer() -> SiteNetwork {
    build_dendrimer(2, 3, 20.0).unwrap()
}

fn state(net: &SiteNetwork, preset: Preset) -> StateSpec {
    make_state(net, preset).unwrap()
}

fn mfpt(net: &SiteNetwork, s: &StateSpec, gamma: f64) -> Result<f64, String> {
    trapping_time(&assemble(net, gamma).map_err(|e| e.to_string())?, s).map_err(|e| e.to_string())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for gamma in [0.2, 2.0, 20.0, 200.0] {
        let parts = assemble(&net, gamma).map_err(|e| e.to_string())?;
        let t = trapping_time(&parts, &s).map_err(|e| e.to_string())?;
        let opts = PropagateOptions { stop_below: Some(1e-13), samples: 2, ..Default::default() };
        let traj = propagate(&parts, &s, 1e9, false, &opts).map_err(|e| e.to_string())?;
        let rel = (t / traj.total_survival() - 1.0).abs();
        worst = worst.max(rel);
        detail.push(format!("Γ={gamma}: {rel:.1e}"));
    }
    check(worst < 1e-6, format!("max relative deviation {worst:.2e} ({})", detail.join(", ")))
}

fn random_network(rng: &mut ChaCha8Rng) -> (SiteNetwork, StateSpec, f64) {
    let n = rng.random_range(1..=8);
    let energies: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || rng.random_bool(0.3) {
                edges.push((i, j, rng.random_range(-25.0..25.0)));
            }
        }
    }
    let trap = rng.random_range(0..n);
    let net = SiteNetwork::from_edges(energies, &edges, trap, rng.random_range(0.1..10.0), rng.random_range(1e-4..1.0)).unwrap();
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &a * a.adjoint();
    let rho = rho.unscale(rho.trace().re);
    let rho = (&rho + rho.adjoint()).scale(0.5);
    (net, StateSpec::custom(rho).unwrap(), rng.random_range(0.0..100.0))
}

fn analytic_cases() -> Outcome {
    let (kt, kd) = (5.0, 0.005);
    let single = SiteNetwork::new(vec![0.0], DMatrix::zeros(1, 1), 0, kt, kd).unwrap();
    let s = state(&single, Preset::Site(0));
    let parts = assemble(&single, 1.0).map_err(|e| e.to_string())?;
    let t = trapping_time(&parts, &s).map_err(|e| e.to_string())?;
    let (q, _) = efficiency_exact(&parts, &s).map_err(|e| e.to_string())?;
    let t_err = (t - 1.0 / kt).abs() / (1.0 / kt);
    let q_err = (q - kt / (kt + kd)).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (net, rho, gamma) = random_network(&mut rng);
        let parts = assemble(&net, gamma).map_err(|e| e.to_string())?;
        let (q, qd) = efficiency_exact(&parts, &rho).map_err(|e| e.to_string())?;
        worst = worst.max((q + qd - 1.0).abs());
    }
    let eps = 4.0 * f64::EPSILON;
    check(
        t_err <= eps && q_err <= eps && worst < 1e-8,
        format!("n=1: ⟨t⟩ rel err {t_err:.1e}, q err {q_err:.1e}; flux partition max |q+q_d−1| = {worst:.1e} over 100 networks"),
    )
}

fn subspace_dimension() -> Outcome {
    let net = dendrimer();
    let report = find_orthogonal_subspace(&net);
    let dimer = find_orthogonal_subspace(&build_dimer(0.0, 20.0).unwrap());
    // a state confined to the trapping-free subspace, without dephasing or decay
    let (rho, pop) = eet_core::subspace::project_state(&report, &state(&net, Preset::OuterIncoherent)).map_err(|e| e.to_string())?;
    let confined = StateSpec::custom(rho.unscale(pop)).map_err(|e| e.to_string())?;
    let parts = assemble(&net, 0.0).map_err(|e| e.to_string())?;
    let horizon = 100.0 / net.trap_rate();
    let opts = PropagateOptions { samples: 201, ..Default::default() };
    let traj = propagate(&parts, &confined, horizon, false, &opts).map_err(|e| e.to_string())?;
    let drift = traj.traces.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
    check(
        report.perp_dim == 7 && dimer.perp_dim == 0 && drift < 1e-8,
        format!("dendrimer perp_dim {}, dimer perp_dim {}, max |Tr ρ − 1| over t ≤ {horizon} is {drift:.1e}", report.perp_dim, dimer.perp_dim),
    )
}

fn strong_damping() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let curve = (0..=8)
        .map(|k| {
            let g = 2e3 * 10f64.powf(k as f64 / 4.0);
            mfpt(&net, &s, g).map(|t| (g, t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fit = strong_damping_fit(&curve).map_err(|e| e.to_string())?;
    check((fit.slope - 1.0).abs() <= 0.05, format!("slope {:.4} over Γ ∈ [2e3, 2e5]", fit.slope))
}

fn weak_damping() -> Outcome {
    let net = dendrimer();
    let report = find_orthogonal_subspace(&net);
    let outer = state(&net, Preset::OuterIncoherent);
    let a = weak_damping_constant(&net, &report, &outer).map_err(|e| e.to_string())?.value;
    let g1 = 2e-4 * mfpt(&net, &outer, 2e-4)?;
    let g2 = 2e-5 * mfpt(&net, &outer, 2e-5)?;
    let coherent = state(&net, Preset::Gen1Coherent);
    let a_coh = weak_damping_constant(&net, &report, &coherent).map_err(|e| e.to_string())?.value;
    let t1 = mfpt(&net, &coherent, 2e-4)?;
    let t2 = mfpt(&net, &coherent, 2e-5)?;
    let plateau = (t1 / t2 - 1.0).abs();
    let ok = (g1 / a - 1.0).abs() <= 0.05
        && (g2 / a - 1.0).abs() <= 0.05
        && (g1 / g2 - 1.0).abs() <= 0.01
        && a_coh == 0.0
        && t1.is_finite()
        && t2.is_finite()
        && plateau <= 0.01;
    check(
        ok,
        format!(
            "A = {a:.5}, Γ⟨t⟩ = {g1:.5} (2e-4), {g2:.5} (2e-5); coherent: A = {a_coh}, ⟨t⟩ = {t1:.4}, {t2:.4}"
        ),
    )
}

fn optimum() -> Outcome {
    let net = dendrimer();
    let report = find_orthogonal_subspace(&net);
    let outer = state(&net, Preset::OuterIncoherent);
    let o = gamma_opt(&net, &outer, (1e-3, 1e5), &report).map_err(|e| e.to_string())?;
    let ratio = o.gamma_opt_estimate / o.gamma_opt_numeric;
    let coherent = gamma_opt(&net, &state(&net, Preset::Gen1Coherent), (1e-3, 1e5), &report);
    let no_opt = matches!(coherent, Err(EetError::NoOptimum { .. }));
    check(
        (0.1..=10.0).contains(&ratio) && no_opt,
        format!(
            "Γ_opt numeric {:.3} meV (⟨t⟩ = {:.3}), estimate {:.3} meV, ratio {ratio:.2}; coherent start no-optimum: {no_opt}",
            o.gamma_opt_numeric, o.t_min, o.gamma_opt_estimate
        ),
    )
}

fn ensemble(net: &SiteNetwork, s: &StateSpec, gamma: f64, sigma: f64, n: usize, seed: u64, threads: Option<usize>) -> Result<EnsembleResult, String> {
    let spec = DisorderSpec::uniform(sigma, seed, n).map_err(|e| e.to_string())?;
    run_ensemble(net, s, gamma, &spec, &EnsembleOptions { threads, solver: SolverOptions::default() }).map_err(|e| e.to_string())
}

fn disorder_scaling() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let mut rows = Vec::new();
    for (gi, gamma) in [1e-12, 1e-10, 1e-8].into_iter().enumerate() {
        for (si, sigma) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
            rows.push(ensemble(&net, &s, gamma, sigma, 10_000, 7000 + (gi * 4 + si) as u64, None)?);
        }
    }
    let fit = fit_scaling(&rows).map_err(|e| e.to_string())?;
    let (sg, ss) = (fit.slope_vs_gamma.slope, fit.slope_vs_sigma.slope);
    let grid: Vec<String> = rows.iter().map(|r| format!("({:.0e},{}):{:.3e}±{:.1e}", r.gamma, r.sigma, r.mean_t, r.stderr_t)).collect();
    check(
        (ss + 1.0).abs() <= 0.1 && (sg + 0.5).abs() <= 0.1,
        format!(
            "slope_vs_sigma {ss:.3} [{:.3}, {:.3}], slope_vs_gamma {sg:.3} [{:.3}, {:.3}], c = {:.3e}; grid {}",
            fit.slope_vs_sigma.slope_ci[0],
            fit.slope_vs_sigma.slope_ci[1],
            fit.slope_vs_gamma.slope_ci[0],
            fit.slope_vs_gamma.slope_ci[1],
            fit.c,
            grid.join(" ")
        ),
    )
}

fn disorder_efficiency() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let clean = transfer(&net, &s, 0.0, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let r = ensemble(&net, &s, 0.0, 4.0, 10_000, 8, None)?;
    check(
        (r.mean_q - 0.8).abs() <= 0.1 && (clean.q_exact - 0.2).abs() <= 0.05,
        format!("⟨q⟩ = {:.4} ± {:.4} at σ = 4 meV, clean q = {:.4}", r.mean_q, r.stderr_q, clean.q_exact),
    )
}

fn strong_dephasing_irrelevance() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let clean = mfpt(&net, &s, 2e3)?;
    let r = ensemble(&net, &s, 2e3, 4.0, 10_000, 9, None)?;
    let rel = (r.mean_t / clean - 1.0).abs();
    check(rel <= 0.02, format!("mean_t {:.4} vs clean {clean:.4} (deviation {:.3} %)", r.mean_t, 100.0 * rel))
}

fn determinism() -> Outcome {
    let net = dendrimer();
    let s = state(&net, Preset::OuterIncoherent);
    let csv = |threads: usize| -> Result<Vec<u8>, String> {
        let rows = [(1e-10, 4.0), (1.0, 2.0)]
            .iter()
            .map(|&(g, sigma)| ensemble(&net, &s, g, sigma, 2_000, 10, Some(threads)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (a, b, c) = (csv(1)?, csv(2)?, csv(4)?);
    check(a == b && b == c, format!("{} CSV bytes compared across 1, 2 and 4 threads", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("exact analytic cases", analytic_cases),
        ("trapping-free subspace", subspace_dimension),
        ("strong-damping scaling", strong_damping),
        ("weak-damping asymptote", weak_damping),
        ("optimal dephasing", optimum),
        ("disorder scaling", disorder_scaling),
        ("disorder-enhanced efficiency", disorder_efficiency),
        ("strong-dephasing disorder irrelevance", strong_dephasing_irrelevance),
        ("determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
