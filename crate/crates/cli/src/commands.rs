use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use eet_core::asymptotics::{analyze, gamma_opt, AnalysisOptions};
use eet_core::ensemble::{fit_scaling, run_ensemble, EnsembleOptions, EnsembleResult, CSV_HEADER};
use eet_core::mfpt::{transfer, SolverOptions};
use eet_core::network::{DisorderSpec, HBAR_MEV_PS};
use eet_core::subspace::find_orthogonal_subspace;
use eet_core::EetError;
use log::warn;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

pub const SWEEP_HEADER: &str = "gamma,mfpt,q_exact,q_approx,divergent_flag";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn units() -> Value {
    json!({ "energy": "meV", "time": "hbar/meV", "hbar_meV_ps": HBAR_MEV_PS })
}

pub fn sweep(config: &RunConfig) -> Result<(), CliError> {
    let sweep = config.sweep.as_ref().ok_or_else(|| CliError::Config("the sweep command needs a [sweep] block".into()))?;
    let net = config.build_network()?;
    let state = config.build_state(&net)?;
    let grid = sweep.grid()?;
    let solver = SolverOptions::default();

    let csv_path = config.output.dir.join("sweep.csv");
    let mut csv = create(&csv_path)?;
    writeln!(csv, "{SWEEP_HEADER}")?;
    csv.flush()?;
    let mut failures = Vec::new();
    let mut divergent = 0;
    // chunks of one point per worker keep rows flushed as they complete
    for chunk in grid.chunks(rayon::current_num_threads().max(1)) {
        let results: Vec<_> = chunk.par_iter().map(|&g| (g, transfer(&net, &state, g, &solver))).collect();
        for (g, r) in results {
            match r {
                Ok(r) => {
                    divergent += r.divergent as usize;
                    writeln!(csv, "{g:.17e},{:.17e},{:.17e},{:.17e},{}", r.mfpt, r.q_exact, r.q_approx, r.divergent as u8)?;
                }
                Err(e) => {
                    warn!("Γ = {g:e} meV: {e}");
                    writeln!(csv, "{g:.17e},NaN,NaN,NaN,0")?;
                    failures.push(json!({ "gamma": g, "error": e.to_string() }));
                }
            }
        }
        csv.flush()?;
    }

    let mut summary = json!({
        "command": "sweep",
        "units": units(),
        "n_sites": net.n_sites(),
        "points": grid.len(),
        "divergent_points": divergent,
        "failures": failures,
        "csv": csv_path,
    });
    let report = find_orthogonal_subspace(&net);
    if config.analysis.subspace {
        summary["subspace"] = serde_json::to_value(report.with_state(&state)?).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if config.analysis.asymptotes {
        let opts = AnalysisOptions {
            gamma_min: sweep.gamma_min,
            gamma_max: sweep.gamma_max,
            points: grid.len().max(2),
            ..Default::default()
        };
        summary["asymptotes"] = serde_json::to_value(analyze(&net, &state, &report, &opts)?).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if config.analysis.gamma_opt {
        summary["optimum"] = optimum_value(config, &net, &state, &report)?;
    }
    write_json(&config.output.dir.join("sweep.json"), &summary)?;
    println!("sweep: {} points written to {}", grid.len(), csv_path.display());
    Ok(())
}

pub fn disorder(config: &RunConfig) -> Result<(), CliError> {
    let gammas = config.disorder_gammas()?;
    let d = config.disorder.as_ref().expect("checked by disorder_gammas");
    let net = config.build_network()?;
    let state = config.build_state(&net)?;
    let opts = EnsembleOptions { threads: None, solver: SolverOptions::default() };

    let csv_path = config.output.dir.join("disorder.csv");
    let mut csv = create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;
    csv.flush()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &gamma in &gammas {
        for &sigma in &d.sigma {
            let spec = DisorderSpec::uniform(sigma, d.seed, d.n_samples)?;
            match run_ensemble(&net, &state, gamma, &spec, &opts) {
                Ok(r) => {
                    writeln!(csv, "{}", r.csv_row())?;
                    rows.push(r);
                }
                Err(e @ EetError::EnsembleDegenerate { .. }) => {
                    warn!("Γ = {gamma:e} meV, σ = {sigma} meV: {e}");
                    let r = EnsembleResult {
                        gamma,
                        sigma,
                        n_samples: d.n_samples,
                        mean_t: f64::NAN,
                        stderr_t: f64::NAN,
                        mean_q: f64::NAN,
                        stderr_q: f64::NAN,
                        divergent_count: d.n_samples,
                    };
                    writeln!(csv, "{}", r.csv_row())?;
                    failures.push(json!({ "gamma": gamma, "sigma": sigma, "error": e.to_string() }));
                }
                Err(e) => return Err(e.into()),
            }
            csv.flush()?;
        }
    }

    let fit_rows: Vec<_> = rows.iter().filter(|r| r.gamma > 0.0 && r.sigma > 0.0).cloned().collect();
    let (fit, fit_error) = match fit_scaling(&fit_rows) {
        Ok(f) => {
            if let Some(w) = &f.regime_warning {
                warn!("{w}");
            }
            (Some(f), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = json!({
        "command": "disorder",
        "units": units(),
        "seed": d.seed,
        "n_samples": d.n_samples,
        "gamma_meV": gammas,
        "sigma_meV": d.sigma,
        "failures": failures,
        "fit": fit,
        "fit_error": fit_error,
        "csv": csv_path,
    });
    write_json(&config.output.dir.join("disorder_fit.json"), &summary)?;
    println!("disorder: {} grid points written to {}", gammas.len() * d.sigma.len(), csv_path.display());
    Ok(())
}

pub fn subspace(config: &RunConfig) -> Result<(), CliError> {
    let net = config.build_network()?;
    let state = config.build_state(&net)?;
    let report = find_orthogonal_subspace(&net).with_state(&state)?;
    let path = config.output.dir.join("subspace.json");
    write_json(&path, &serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?)?;
    println!("perp_dim = {}", report.perp_dim);
    Ok(())
}

fn optimum_value(
    config: &RunConfig,
    net: &eet_core::network::SiteNetwork,
    state: &eet_core::liouville::StateSpec,
    report: &eet_core::subspace::SubspaceReport,
) -> Result<Value, CliError> {
    let range = config.optimum_range()?;
    match gamma_opt(net, state, range, report) {
        Ok(o) => Ok(json!({
            "no_optimum": false,
            "range_meV": [range.0, range.1],
            "gamma_opt_numeric": o.gamma_opt_numeric,
            "t_min": o.t_min,
            "gamma_opt_estimate": o.gamma_opt_estimate,
        })),
        Err(EetError::NoOptimum { .. }) => Ok(json!({ "no_optimum": true, "range_meV": [range.0, range.1] })),
        Err(e) => Err(e.into()),
    }
}

pub fn optimum(config: &RunConfig) -> Result<(), CliError> {
    let net = config.build_network()?;
    let state = config.build_state(&net)?;
    let report = find_orthogonal_subspace(&net);
    let mut value = optimum_value(config, &net, &state, &report)?;
    value["units"] = units();
    write_json(&config.output.dir.join("optimum.json"), &value)?;
    if value["no_optimum"] == json!(true) {
        println!("no interior optimum");
    } else {
        println!("gamma_opt = {} meV", value["gamma_opt_numeric"]);
    }
    Ok(())
}
