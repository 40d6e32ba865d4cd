use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EetError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Configuration(String),

    /// The decay-free Liouvillian is singular (or numerically so) for the
    /// requested state: population is conserved and the trapping time is
    /// infinite.
    #[error("mean first passage time diverges (condition estimate {condition:.3e})")]
    Divergent { condition: f64 },

    #[error("singular Liouvillian: {0}")]
    Singular(String),

    #[error("iterative solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("time integration failed at t = {t_reached}: {reason}")]
    Integration { t_reached: f64, reason: String },

    #[error("no interior optimum in dephasing range [{lo:.3e}, {hi:.3e}] meV")]
    NoOptimum { lo: f64, hi: f64 },

    #[error("all {n_samples} disorder samples diverged")]
    EnsembleDegenerate { n_samples: usize },
}

pub type Result<T> = std::result::Result<T, EetError>;
