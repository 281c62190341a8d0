//! Aggregation-error stability check and the H2 pairwise oracle.

use ndarray::prelude::*;

use super::{ClusterError, ClusterSet, Result};
use crate::gridmodel::LinearModel;
use crate::matcore::Gramian;

/// Outcome of the aggregation-error stability check.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// `|| pi_bar * vmax ||`: how far the zero mode leaks into the error
    /// system. Near zero when coefficients were derived from the zero-mode
    /// eigenvector.
    pub pi_bar_vmax_norm: f64,
    /// Largest real part among the poles of the error system once the
    /// structural zero mode is deflated.
    pub max_real_pole: f64,
    pub pass: bool,
}

/// Orthonormal completion of the aggregation matrix: for each cluster the
/// orthogonal complement of its coefficient vector, embedded at the cluster's
/// measurement columns. The stacked `[pi; pi_bar]` is then orthonormal.
fn completion_rows(set: &ClusterSet) -> Result<Array2<f64>> {
    let l = set.l();
    let total: usize = set.clusters.iter().map(|c| c.len() - 1).sum();
    let mut rows = Array2::<f64>::zeros((total, l));
    let mut r = 0;
    for (k, members) in set.clusters.iter().enumerate() {
        let m = members.len();
        if m == 1 {
            continue;
        }
        let p = &set.coefficients[k];
        // Householder reflector sending p to +/- e1; its remaining columns
        // span the complement of p.
        let alpha = if p[0] >= 0.0 { -1.0 } else { 1.0 };
        let mut v = p.clone();
        v[0] -= alpha;
        let vtv = v.dot(&v);
        if vtv < 1e-28 {
            return Err(ClusterError::CompletionFailure(format!(
                "degenerate coefficient vector in cluster {k}"
            )));
        }
        for col in 1..m {
            // Column `col` of H = I - 2 v v^T / (v^T v).
            for row in 0..m {
                let h = if row == col { 1.0 } else { 0.0 };
                let val = h - 2.0 * v[row] * v[col] / vtv;
                rows[[r, members[row]]] = val;
            }
            r += 1;
        }
    }

    // The construction is exact up to rounding; verify orthonormality as a
    // guard against degenerate coefficients.
    let gram = rows.dot(&rows.t());
    let eye = Array2::<f64>::eye(total);
    let err = (&gram - &eye).iter().map(|x| x.abs()).fold(0.0, f64::max);
    if err > 1e-8 {
        return Err(ClusterError::CompletionFailure(format!(
            "completion rows deviate from orthonormality by {err:.3e}"
        )));
    }
    Ok(rows)
}

/// Check that aggregating measurements by clusters leaves a stable error
/// system.
///
/// Reports the zero-mode leakage `|| pi_bar * C v_max ||` and the largest
/// real part among the deflated poles; the check passes when the leakage is
/// within `pole_tol` and all deflated poles are strictly stable.
pub fn verify_error_stability(
    model: &LinearModel,
    set: &ClusterSet,
    pole_tol: f64,
) -> Result<StabilityReport> {
    if set.l() != model.n_outputs() {
        return Err(ClusterError::DimensionMismatch(format!(
            "cluster set covers {} measurements, model has {}",
            set.l(),
            model.n_outputs()
        )));
    }
    let pi_bar = completion_rows(set)?;
    let vmax_out = model.output_vmax();
    let leak = pi_bar.dot(&vmax_out);
    let pi_bar_vmax_norm = leak.dot(&leak).sqrt();
    let max_real_pole = model.semistability.max_stable_re();
    Ok(StabilityReport {
        pi_bar_vmax_norm,
        max_real_pole,
        pass: pi_bar_vmax_norm <= pole_tol && max_real_pole < 0.0,
    })
}

/// H2 norm of the weighted row-difference system
/// `p_j g_i(s) - p_i g_j(s)` computed through the Gramian trace formula.
///
/// This goes through `W_c` directly (not through the Cholesky factor), so it
/// provides an independent check of the `Phi`-row test used for clustering.
pub fn h2_pair_condition(
    model: &LinearModel,
    gramian: &Gramian,
    i: usize,
    j: usize,
    p_i: f64,
    p_j: f64,
) -> Result<f64> {
    let l = model.n_outputs();
    if i >= l || j >= l {
        return Err(ClusterError::DimensionMismatch(format!(
            "measurement pair ({i},{j}) out of range for l = {l}"
        )));
    }
    if gramian.w_c.nrows() != model.n {
        return Err(ClusterError::DimensionMismatch(format!(
            "Gramian is {}x{} for a model with n = {}",
            gramian.w_c.nrows(),
            gramian.w_c.ncols(),
            model.n
        )));
    }
    let c_diff = &model.c.row(i).mapv(|x| p_j * x) - &model.c.row(j).mapv(|x| p_i * x);
    let energy = c_diff.dot(&gramian.w_c.dot(&c_diff));
    Ok(energy.max(0.0).sqrt())
}
