//! Mean first passage (trapping) times and transfer efficiencies of exciton
//! networks under Haken–Strobl–Reineker dephasing, trapping-free subspace
//! analysis, asymptotic scaling in the dephasing rate, and disorder-averaged
//! Monte Carlo ensembles.

// Negated comparisons are used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fit;
pub mod mfpt;
pub mod linalg;
pub mod liouville;
pub mod network;
pub mod sparse;
pub mod subspace;
pub mod asymptotics;
pub mod ensemble;

pub use error::{EetError, Result};
