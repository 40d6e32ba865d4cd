//! Run configuration read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use eet_core::liouville::{make_state, Preset, StateSpec};
use eet_core::network::{
    build_chain, build_dendrimer, build_dimer, NetworkFile, SiteNetwork, DEFAULT_DECAY_RATE, DEFAULT_TRAP_RATE,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub network: NetworkConfig,
    pub state: StateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderConfig>,
    #[serde(default)]
    pub analysis: AnalysisFlags,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    Dendrimer {
        generations: usize,
        branching: usize,
        #[serde(rename = "coupling_meV")]
        coupling: f64,
        #[serde(rename = "trap_rate_meV", default, skip_serializing_if = "Option::is_none")]
        trap_rate: Option<f64>,
        #[serde(rename = "decay_rate_meV", default, skip_serializing_if = "Option::is_none")]
        decay_rate: Option<f64>,
    },
    Chain {
        n_sites: usize,
        #[serde(rename = "coupling_meV")]
        coupling: f64,
        /// Long-range decay constant; large values leave nearest neighbours only.
        beta: f64,
        #[serde(rename = "trap_rate_meV", default, skip_serializing_if = "Option::is_none")]
        trap_rate: Option<f64>,
        #[serde(rename = "decay_rate_meV", default, skip_serializing_if = "Option::is_none")]
        decay_rate: Option<f64>,
    },
    Dimer {
        #[serde(rename = "delta_meV")]
        delta: f64,
        #[serde(rename = "coupling_meV")]
        coupling: f64,
        #[serde(rename = "trap_rate_meV", default, skip_serializing_if = "Option::is_none")]
        trap_rate: Option<f64>,
        #[serde(rename = "decay_rate_meV", default, skip_serializing_if = "Option::is_none")]
        decay_rate: Option<f64>,
    },
    /// Inline network in the network file format.
    Custom(NetworkFile),
    /// Network file (JSON or TOML), relative to the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    OuterIncoherent,
    Gen1Coherent,
    Site { site: usize },
    /// Explicit density matrix as rows; `imag` defaults to zero.
    Matrix {
        real: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        imag: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "gamma_min_meV")]
    pub gamma_min: f64,
    #[serde(rename = "gamma_max_meV")]
    pub gamma_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    #[serde(rename = "sigma_meV")]
    pub sigma: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Dephasing rates of the grid; the sweep grid when absent.
    #[serde(rename = "gamma_meV", default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFlags {
    #[serde(default)]
    pub subspace: bool,
    #[serde(default)]
    pub asymptotes: bool,
    #[serde(default)]
    pub gamma_opt: bool,
    /// Search interval for the optimum; the sweep range when absent.
    #[serde(rename = "gamma_opt_range_meV", default, skip_serializing_if = "Option::is_none")]
    pub gamma_opt_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        // network files are resolved against the config file location
        if let NetworkConfig::File { path: p } = &mut config.network {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads == Some(0) {
            return Err(config_error("threads must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            s.grid()?;
        }
        if let Some(d) = &self.disorder {
            if d.sigma.is_empty() || d.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(config_error("disorder.sigma_meV must be a non-empty list of non-negative values"));
            }
            if d.n_samples == 0 {
                return Err(config_error("disorder.n_samples must be at least 1"));
            }
            if d.seed > i64::MAX as u64 {
                return Err(config_error("disorder.seed must fit in a signed 64-bit integer"));
            }
            if let Some(g) = &d.gamma {
                if g.is_empty() || g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(config_error("disorder.gamma_meV must be a non-empty list of non-negative values"));
                }
            }
        }
        if let Some([lo, hi]) = self.analysis.gamma_opt_range {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(config_error("analysis.gamma_opt_range_meV must be [lo, hi] with 0 < lo < hi"));
            }
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<SiteNetwork, CliError> {
        let with_rates = |net: SiteNetwork, kt: &Option<f64>, kd: &Option<f64>| {
            net.with_rates(kt.unwrap_or(DEFAULT_TRAP_RATE), kd.unwrap_or(DEFAULT_DECAY_RATE))
        };
        let net = match &self.network {
            NetworkConfig::Dendrimer { generations, branching, coupling, trap_rate, decay_rate } => {
                with_rates(build_dendrimer(*generations, *branching, *coupling)?, trap_rate, decay_rate)?
            }
            NetworkConfig::Chain { n_sites, coupling, beta, trap_rate, decay_rate } => {
                with_rates(build_chain(*n_sites, *coupling, *beta)?, trap_rate, decay_rate)?
            }
            NetworkConfig::Dimer { delta, coupling, trap_rate, decay_rate } => {
                with_rates(build_dimer(*delta, *coupling)?, trap_rate, decay_rate)?
            }
            NetworkConfig::Custom(file) => file.to_network()?,
            NetworkConfig::File { path } => load_network_file(path)?.to_network()?,
        };
        Ok(net)
    }

    pub fn build_state(&self, net: &SiteNetwork) -> Result<StateSpec, CliError> {
        let state = match &self.state {
            StateConfig::OuterIncoherent => make_state(net, Preset::OuterIncoherent)?,
            StateConfig::Gen1Coherent => make_state(net, Preset::Gen1Coherent)?,
            StateConfig::Site { site } => make_state(net, Preset::Site(*site))?,
            StateConfig::Matrix { real, imag } => {
                let n = net.n_sites();
                let shape_ok = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
                if !shape_ok(real) || imag.as_ref().is_some_and(|m| !shape_ok(m)) {
                    return Err(config_error(format!("state matrix must be {n}x{n}")));
                }
                let rho = DMatrix::from_fn(n, n, |i, j| {
                    Complex64::new(real[i][j], imag.as_ref().map_or(0.0, |m| m[i][j]))
                });
                StateSpec::custom(rho)?
            }
        };
        Ok(state)
    }

    /// Dephasing rates for the optimum search.
    pub fn optimum_range(&self) -> Result<(f64, f64), CliError> {
        match (self.analysis.gamma_opt_range, &self.sweep) {
            (Some([lo, hi]), _) => Ok((lo, hi)),
            (None, Some(s)) => Ok((s.gamma_min, s.gamma_max)),
            (None, None) => Err(config_error("optimum search needs analysis.gamma_opt_range_meV or a [sweep] block")),
        }
    }

    /// Dephasing rates of the disorder grid.
    pub fn disorder_gammas(&self) -> Result<Vec<f64>, CliError> {
        let d = self.disorder.as_ref().ok_or_else(|| config_error("the disorder command needs a [disorder] block"))?;
        match (&d.gamma, &self.sweep) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(s)) => s.grid(),
            (None, None) => Err(config_error("disorder grid needs disorder.gamma_meV or a [sweep] block")),
        }
    }
}

impl SweepConfig {
    /// Log-spaced grid, strictly positive and increasing.
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        if !(self.gamma_min > 0.0 && self.gamma_max >= self.gamma_min && self.gamma_max.is_finite()) {
            return Err(config_error(format!(
                "sweep range [{}, {}] must satisfy 0 < gamma_min_meV <= gamma_max_meV",
                self.gamma_min, self.gamma_max
            )));
        }
        if self.points == 0 || (self.points > 1 && self.gamma_max == self.gamma_min) {
            return Err(config_error("sweep.points must be at least 1, and 1 when gamma_min_meV = gamma_max_meV"));
        }
        if self.points == 1 {
            return Ok(vec![self.gamma_min]);
        }
        eet_core::asymptotics::log_grid(self.gamma_min, self.gamma_max, self.points).map_err(CliError::from)
    }
}

fn load_network_file(path: &Path) -> Result<NetworkFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| config_error(format!("{}: {e}", path.display())))
}
