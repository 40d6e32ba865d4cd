//! Trapping-free exciton subspace: eigenstates of H_S with no amplitude on
//! the trap site. Population there is only released by dephasing.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{EetError, Result};
use crate::liouville::StateSpec;
use crate::network::SiteNetwork;

/// |⟨trap|φ_k⟩| below this classifies φ_k as trapping-free.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Eigenvalues closer than this times max|E| are treated as degenerate.
pub const DEGENERACY_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceReport {
    pub n_sites: usize,
    pub trap_site: usize,
    /// Ascending eigenvalues of H_S, meV.
    pub exciton_energies: Vec<f64>,
    /// Orthonormal eigenvectors as columns, degenerate blocks rotated so that
    /// at most one state per block touches the trap.
    #[serde(serialize_with = "serialize_columns")]
    pub exciton_states: DMatrix<f64>,
    /// Index ranges of degenerate eigenvalue groups (only groups of size > 1).
    pub degenerate_groups: Vec<Vec<usize>>,
    /// |⟨trap|φ_k⟩| for every exciton.
    pub overlaps: Vec<f64>,
    pub perp_indices: Vec<usize>,
    pub perp_dim: usize,
    #[serde(skip)]
    pub rho_perp0: Option<DMatrix<Complex64>>,
    /// Tr ρ_⊥(0), once a state has been projected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perp_population: Option<f64>,
}

fn serialize_columns<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let cols: Vec<Vec<f64>> = m.column_iter().map(|c| c.iter().copied().collect()).collect();
    cols.serialize(s)
}

impl SubspaceReport {
    /// Absolute tolerance used to group degenerate exciton energies.
    pub fn degeneracy_tol(&self) -> f64 {
        degeneracy_tol(&self.exciton_energies)
    }

    /// Projector onto the trapping-free subspace in the site basis.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.n_sites;
        let mut p = DMatrix::zeros(n, n);
        for &k in &self.perp_indices {
            let v = self.exciton_states.column(k);
            p += v * v.transpose();
        }
        p
    }

    /// Copy with the projected initial state filled in.
    pub fn with_state(&self, state: &StateSpec) -> Result<Self> {
        let (rho, pop) = project_state(self, state)?;
        Ok(Self { rho_perp0: Some(rho), perp_population: Some(pop), ..self.clone() })
    }
}

fn degeneracy_tol(energies: &[f64]) -> f64 {
    DEGENERACY_RTOL * energies.iter().fold(0.0f64, |m, e| m.max(e.abs()))
}

pub fn find_orthogonal_subspace(net: &SiteNetwork) -> SubspaceReport {
    let n = net.n_sites();
    let trap = net.trap_site();
    let eig = net.hamiltonian().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut states = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    for mut col in states.column_iter_mut() {
        // deterministic sign: largest component positive
        let (imax, _) = col.iter().enumerate().fold((0, 0.0), |b, (i, v)| if v.abs() > b.1 + 1e-12 { (i, v.abs()) } else { b });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }

    let tol = degeneracy_tol(&energies);
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || energies[k] - energies[k - 1] > tol {
            if k - start > 1 {
                groups.push((start..k).collect::<Vec<_>>());
            }
            start = k;
        }
    }

    for group in &groups {
        align_trap_overlap(&mut states, group, trap);
    }

    let overlaps: Vec<f64> = (0..n).map(|k| states[(trap, k)].abs()).collect();
    let perp_indices: Vec<usize> = (0..n).filter(|&k| overlaps[k] < ORTHOGONALITY_TOL).collect();
    SubspaceReport {
        n_sites: n,
        trap_site: trap,
        exciton_energies: energies,
        exciton_states: states,
        degenerate_groups: groups,
        overlaps,
        perp_dim: perp_indices.len(),
        perp_indices,
        rho_perp0: None,
        perp_population: None,
    }
}

/// Householder rotation inside one degenerate block that maps the block's
/// trap-overlap vector onto its first state, leaving the others orthogonal to
/// the trap.
fn align_trap_overlap(states: &mut DMatrix<f64>, group: &[usize], trap: usize) {
    let m = group.len();
    let v: Vec<f64> = group.iter().map(|&k| states[(trap, k)]).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < ORTHOGONALITY_TOL {
        return;
    }
    // w = v/|v| − e₀; Q = I − 2wwᵀ/|w|² swaps v/|v| and e₀
    let mut w: Vec<f64> = v.iter().map(|x| x / norm).collect();
    w[0] -= 1.0;
    let wn2: f64 = w.iter().map(|x| x * x).sum();
    if wn2 < 1e-30 {
        return;
    }
    let block = DMatrix::from_fn(states.nrows(), m, |i, c| states[(i, group[c])]);
    let q = DMatrix::from_fn(m, m, |a, b| if a == b { 1.0 } else { 0.0 } - 2.0 * w[a] * w[b] / wn2);
    let rotated = block * q;
    for (c, &k) in group.iter().enumerate() {
        states.set_column(k, &rotated.column(c));
    }
    // the first state carries the overlap; make it positive for readability
    if states[(trap, group[0])] < 0.0 {
        states.column_mut(group[0]).neg_mut();
    }
}

/// ρ_⊥(0) = Pρ(0)P and its trace.
pub fn project_state(report: &SubspaceReport, state: &StateSpec) -> Result<(DMatrix<Complex64>, f64)> {
    if state.n() != report.n_sites {
        return Err(EetError::Parameter(format!(
            "state is {0}x{0}, subspace report is for {1} sites",
            state.n(),
            report.n_sites
        )));
    }
    if report.perp_dim == 0 {
        return Ok((DMatrix::zeros(report.n_sites, report.n_sites), 0.0));
    }
    let p = report.projector().map(|x| Complex64::new(x, 0.0));
    let rho = &p * &state.rho0 * &p;
    let pop = rho.trace().re;
    Ok((rho, pop))
}
