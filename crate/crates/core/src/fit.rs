//! Ordinary least squares in log-log coordinates.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{EetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95 % confidence interval of the slope.
    pub slope_ci: [f64; 2],
    /// Root-mean-square residual.
    pub residual_rms: f64,
    pub points: usize,
}

/// Fits y = intercept + slope·x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    pooled_fit(&[(x.to_vec(), y.to_vec())]).map(|p| LinearFit { intercept: p.intercepts[0], ..p.fit })
}

/// Fits log y = intercept + slope·log x; every value must be positive.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let (lx, ly) = logs(x, y)?;
    linear_fit(&lx, &ly)
}

fn logs(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(EetError::Parameter("log-log fit needs positive finite data".into()));
    }
    Ok((x.iter().map(|v| v.ln()).collect(), y.iter().map(|v| v.ln()).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    /// Common slope; `intercept` is unused (see `intercepts`).
    pub fit: LinearFit,
    pub intercepts: Vec<f64>,
}

/// Common slope over several groups, each with its own intercept
/// (within-group regression).
pub fn pooled_fit(groups: &[(Vec<f64>, Vec<f64>)]) -> Result<PooledFit> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut points = 0;
    let mut means = Vec::with_capacity(groups.len());
    for (x, y) in groups {
        if x.len() != y.len() || x.is_empty() {
            return Err(EetError::Parameter("fit groups need matching, non-empty x and y".into()));
        }
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let my = y.iter().sum::<f64>() / y.len() as f64;
        for (a, b) in x.iter().zip(y) {
            sxx += (a - mx) * (a - mx);
            sxy += (a - mx) * (b - my);
        }
        points += x.len();
        means.push((mx, my));
    }
    if !(sxx > 0.0) {
        return Err(EetError::Parameter("fit needs at least two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercepts: Vec<f64> = means.iter().map(|(mx, my)| my - slope * mx).collect();
    let mut ssr = 0.0;
    for ((x, y), c) in groups.iter().zip(&intercepts) {
        for (a, b) in x.iter().zip(y) {
            let r = b - (c + slope * a);
            ssr += r * r;
        }
    }
    let dof = points as isize - groups.len() as isize - 1;
    let (slope_stderr, slope_ci) = if dof >= 1 {
        let se = (ssr / dof as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::INFINITY);
        (se, [slope - t * se, slope + t * se])
    } else {
        (f64::INFINITY, [f64::NEG_INFINITY, f64::INFINITY])
    };
    Ok(PooledFit {
        fit: LinearFit {
            slope,
            intercept: f64::NAN,
            slope_stderr,
            slope_ci,
            residual_rms: (ssr / points as f64).sqrt(),
            points,
        },
        intercepts,
    })
}
