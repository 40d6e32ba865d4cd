//! Monte Carlo averages over Gaussian static disorder of the site energies.
//!
//! Samples are evaluated in parallel but reduced serially in index order, so
//! results do not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{EetError, Result};
use crate::fit::{pooled_fit, LinearFit};
use crate::liouville::StateSpec;
use crate::mfpt::{transfer, SolverOptions};
use crate::network::{sample_disorder, DisorderSpec, SiteNetwork};

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub gamma: f64,
    /// Largest per-site disorder width, meV.
    pub sigma: f64,
    pub n_samples: usize,
    /// Mean trapping time over non-divergent samples.
    pub mean_t: f64,
    pub stderr_t: f64,
    pub mean_q: f64,
    pub stderr_q: f64,
    pub divergent_count: usize,
}

pub const CSV_HEADER: &str = "gamma,sigma,n_samples,mean_t,stderr_t,mean_q,stderr_q,divergent_count";

impl EnsembleResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.gamma, self.sigma, self.n_samples, self.mean_t, self.stderr_t, self.mean_q, self.stderr_q, self.divergent_count
        )
    }
}

pub fn write_csv<W: Write>(mut out: W, results: &[EnsembleResult]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()
}

/// Neumaier-compensated sum in slice order.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Mean and standard error of the mean.
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_samples(net: &SiteNetwork, state: &StateSpec, gamma: f64, spec: &DisorderSpec, solver: &SolverOptions) -> Result<Vec<(f64, f64)>> {
    (0..spec.n_samples)
        .into_par_iter()
        .map(|k| {
            let sample = sample_disorder(net, spec, k)?;
            let r = transfer(&sample, state, gamma, solver)?;
            Ok((r.mfpt, r.q_exact))
        })
        .collect()
}

/// Disorder average of ⟨t⟩ and q at one dephasing rate.
///
/// Divergent samples are excluded from `mean_t` and counted.
pub fn run_ensemble(
    net: &SiteNetwork,
    state: &StateSpec,
    gamma: f64,
    spec: &DisorderSpec,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    spec.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(EetError::Parameter(format!("dephasing rate {gamma} must be finite and non-negative")));
    }
    let n = net.n_sites();
    for site in 0..n {
        spec.sigma_for(site, n)?;
    }
    let sigma = spec.sigma.iter().copied().fold(0.0, f64::max);

    let samples = if spec.is_zero() {
        let r = transfer(net, state, gamma, &opts.solver)?;
        vec![(r.mfpt, r.q_exact); spec.n_samples]
    } else {
        match opts.threads {
            Some(threads) => rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EetError::Configuration(e.to_string()))?
                .install(|| run_samples(net, state, gamma, spec, &opts.solver))?,
            None => run_samples(net, state, gamma, spec, &opts.solver)?,
        }
    };

    let finite_t: Vec<f64> = samples.iter().map(|s| s.0).filter(|t| t.is_finite()).collect();
    let divergent_count = spec.n_samples - finite_t.len();
    if finite_t.is_empty() {
        return Err(EetError::EnsembleDegenerate { n_samples: spec.n_samples });
    }
    let (mean_t, stderr_t) = mean_stderr(&finite_t);
    let q: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (mean_q, stderr_q) = mean_stderr(&q);
    Ok(EnsembleResult { gamma, sigma, n_samples: spec.n_samples, mean_t, stderr_t, mean_q, stderr_q, divergent_count })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Exponent of mean_t vs Γ, common to all σ.
    pub slope_vs_gamma: LinearFit,
    /// Exponent of mean_t vs σ, common to all Γ.
    pub slope_vs_sigma: LinearFit,
    /// (Γ, c′) from mean_t = c′/σ.
    pub c_prime_per_gamma: Vec<(f64, f64)>,
    /// c from c′ = c/√Γ.
    pub c: f64,
    /// RMS of log residuals of mean_t against c/(σ√Γ).
    pub fit_residuals: f64,
    pub regime_warning: Option<String>,
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn geometric_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let logs: Vec<f64> = xs.map(f64::ln).collect();
    (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Power-law fits of a Γ×σ grid to mean_t ~ c/(σ√Γ).
pub fn fit_scaling(results: &[EnsembleResult]) -> Result<ScalingFit> {
    if results.iter().any(|r| !(r.gamma > 0.0 && r.sigma > 0.0 && r.mean_t > 0.0 && r.mean_t.is_finite())) {
        return Err(EetError::Parameter("scaling fit needs Γ > 0, σ > 0 and finite positive mean_t".into()));
    }
    let gammas = distinct(results.iter().map(|r| r.gamma));
    let sigmas = distinct(results.iter().map(|r| r.sigma));
    if gammas.len() < 3 || sigmas.len() < 3 {
        return Err(EetError::Parameter(format!(
            "scaling fit needs at least 3 Γ and 3 σ values, got {} and {}",
            gammas.len(),
            sigmas.len()
        )));
    }
    let group = |key: fn(&EnsembleResult) -> f64, x: fn(&EnsembleResult) -> f64, keys: &[f64]| -> Vec<(Vec<f64>, Vec<f64>)> {
        keys.iter()
            .map(|&k| {
                let rows: Vec<_> = results.iter().filter(|r| key(r) == k).collect();
                (rows.iter().map(|r| x(r).ln()).collect(), rows.iter().map(|r| r.mean_t.ln()).collect())
            })
            .filter(|(x, _): &(Vec<f64>, Vec<f64>)| x.len() >= 2)
            .collect()
    };
    let slope_vs_gamma = pooled_fit(&group(|r| r.sigma, |r| r.gamma, &sigmas))?.fit;
    let slope_vs_sigma = pooled_fit(&group(|r| r.gamma, |r| r.sigma, &gammas))?.fit;

    let c_prime_per_gamma: Vec<(f64, f64)> = gammas
        .iter()
        .map(|&g| (g, geometric_mean(results.iter().filter(|r| r.gamma == g).map(|r| r.mean_t * r.sigma))))
        .collect();
    let c = geometric_mean(c_prime_per_gamma.iter().map(|(g, cp)| cp * g.sqrt()));
    let fit_residuals = (results
        .iter()
        .map(|r| (r.mean_t * r.sigma * r.gamma.sqrt() / c).ln().powi(2))
        .sum::<f64>()
        / results.len() as f64)
        .sqrt();

    let regime_warning = (gammas[gammas.len() - 1] >= 0.01 * sigmas[0]).then(|| {
        format!(
            "grid is not in the weak-dephasing regime: Γ up to {:.3e} meV against σ down to {:.3e} meV",
            gammas[gammas.len() - 1],
            sigmas[0]
        )
    });
    Ok(ScalingFit { slope_vs_gamma, slope_vs_sigma, c_prime_per_gamma, c, fit_residuals, regime_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{make_state, Preset};
    use crate::mfpt::transfer;
    use crate::network::{build_dendrimer, build_dimer};

    fn row(gamma: f64, sigma: f64, mean_t: f64) -> EnsembleResult {
        EnsembleResult { gamma, sigma, n_samples: 1, mean_t, stderr_t: 0.0, mean_q: 0.0, stderr_q: 0.0, divergent_count: 0 }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_disorder_reproduces_clean_network() {
        let net = build_dendrimer(2, 3, 20.0).unwrap();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let spec = DisorderSpec::uniform(0.0, 1, 50).unwrap();
        let r = run_ensemble(&net, &state, 2.0, &spec, &EnsembleOptions::default()).unwrap();
        let clean = transfer(&net, &state, 2.0, &SolverOptions::default()).unwrap();
        assert_eq!(r.mean_t, clean.mfpt);
        assert_eq!(r.stderr_t, 0.0);
        assert_eq!(r.mean_q, clean.q_exact);
    }

    #[test]
    fn clean_divergent_ensemble_is_degenerate() {
        let net = build_dendrimer(2, 3, 20.0).unwrap();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let spec = DisorderSpec::uniform(0.0, 1, 10).unwrap();
        assert!(matches!(
            run_ensemble(&net, &state, 0.0, &spec, &EnsembleOptions::default()),
            Err(EetError::EnsembleDegenerate { n_samples: 10 })
        ));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let net = build_dendrimer(2, 3, 20.0).unwrap();
        let state = make_state(&net, Preset::OuterIncoherent).unwrap();
        let spec = DisorderSpec::uniform(4.0, 99, 64).unwrap();
        let run = |threads| {
            run_ensemble(&net, &state, 1.0, &spec, &EnsembleOptions { threads: Some(threads), ..Default::default() })
                .unwrap()
                .csv_row()
        };
        assert_eq!(run(1), run(3));
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn standard_error_shrinks_as_inverse_sqrt() {
        let net = build_dimer(0.0, 20.0).unwrap();
        let state = make_state(&net, Preset::Site(0)).unwrap();
        let (mut ns, mut errs) = (Vec::new(), Vec::new());
        for n in [100, 1000, 10000] {
            let spec = DisorderSpec::uniform(4.0, 5, n).unwrap();
            let r = run_ensemble(&net, &state, 1.0, &spec, &EnsembleOptions::default()).unwrap();
            ns.push(n as f64);
            errs.push(r.stderr_t);
        }
        let slope = crate::fit::loglog_fit(&ns, &errs).unwrap().slope;
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn synthetic_scaling_law() {
        let mut rows = Vec::new();
        for g in [1e-12, 1e-11, 1e-10, 1e-9] {
            for s in [1.0, 2.0, 4.0, 8.0] {
                rows.push(row(g, s, 7.0 / (s * g.sqrt())));
            }
        }
        let fit = fit_scaling(&rows).unwrap();
        assert!((fit.slope_vs_gamma.slope + 0.5).abs() < 1e-10);
        assert!((fit.slope_vs_sigma.slope + 1.0).abs() < 1e-10);
        assert!((fit.c - 7.0).abs() < 1e-8);
        assert!(fit.fit_residuals < 1e-10);
        assert!(fit.regime_warning.is_none());
        for (g, cp) in &fit.c_prime_per_gamma {
            assert!((cp - 7.0 / g.sqrt()).abs() < 1e-8 * cp);
        }
    }

    #[test]
    fn scaling_fit_flags_strong_dephasing_and_small_grids() {
        let mut rows = Vec::new();
        for g in [1.0, 10.0, 100.0] {
            for s in [1.0, 2.0, 4.0] {
                rows.push(row(g, s, 1.0 / s));
            }
        }
        assert!(fit_scaling(&rows).unwrap().regime_warning.is_some());
        assert!(fit_scaling(&rows[..6]).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let r = row(2.0, 4.0, 0.5);
        let cells: Vec<_> = r.csv_row().split(',').map(str::to_owned).collect();
        assert_eq!(cells.len(), CSV_HEADER.split(',').count());
        assert_eq!(cells[0], "2.00000000000000000e0");
        assert_eq!(cells[2], "1");
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(CSV_HEADER));
    }
}
