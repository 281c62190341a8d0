//! Gramian-based measurement clustering and its aggregation matrix.
//!
//! Measurements whose transfer responses to the load disturbance are
//! (approximately) proportional are grouped together. Proportionality of
//! transfer functions is equivalent to proportionality of the rows of
//! `Phi = C * W_L`, where `W_L` is a factor of the reachability Gramian, so
//! the greedy partition only ever compares matrix rows. Per-cluster
//! coefficient vectors come from the zero-mode left eigenvector; where that
//! eigenvector vanishes on a cluster the row norms of `Phi` stand in for it.

mod theorem2;

pub use theorem2::{h2_pair_condition, verify_error_stability, StabilityReport};

use ndarray::prelude::*;
use thiserror::Error;

use crate::gridmodel::LinearModel;
use crate::matcore::Gramian;
use crate::textio::{fmt_f64, TextError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("zero-mode eigenvector restricted to cluster {cluster} is numerically zero")]
    ZeroRestriction { cluster: usize },

    #[error("failed to complete the aggregation matrix to an orthonormal basis: {0}")]
    CompletionFailure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<TextError> for ClusterError {
    fn from(e: TextError) -> Self {
        ClusterError::Parse { line: e.line, message: e.message }
    }
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Restriction threshold below which the zero-mode eigenvector is considered
/// absent from a cluster and coefficients fall back to Phi row norms.
const RESTRICTION_TOL: f64 = 1e-12;

/// A restriction is degenerate when some member's entry is negligible
/// against the largest one: that member would receive a zero coefficient,
/// which asserts its signal is identically zero and blinds the pairwise
/// residual to attacks on the other channel. Such restrictions fall back to
/// row norms exactly like the all-zero case.
const DEGENERATE_RATIO: f64 = 1e-6;

fn restriction_usable(p: &Array1<f64>) -> bool {
    let max = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if max < RESTRICTION_TOL {
        return false;
    }
    p.iter().all(|x| x.abs() >= DEGENERATE_RATIO * max)
}

/// `Phi = C * W_L` with per-row norms (each row norm equals the H2 norm of
/// the corresponding measurement channel).
#[derive(Debug, Clone)]
pub struct PhiMatrix {
    pub phi: Array2<f64>,
    pub row_norms: Array1<f64>,
}

impl PhiMatrix {
    pub fn from_raw(phi: Array2<f64>) -> Self {
        let row_norms = phi.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        PhiMatrix { phi, row_norms }
    }

    pub fn n_measurements(&self) -> usize {
        self.phi.nrows()
    }

    /// Squared Frobenius norm, equal to the total output energy
    /// `trace(C W_c C^T)`.
    pub fn energy(&self) -> f64 {
        self.row_norms.iter().map(|x| x * x).sum()
    }
}

/// Compute `Phi = C * W_L` for a model and its Gramian.
pub fn compute_phi(model: &LinearModel, gramian: &Gramian) -> Result<PhiMatrix> {
    if gramian.w_l.nrows() != model.n {
        return Err(ClusterError::DimensionMismatch(format!(
            "Gramian factor has {} rows for a model with n = {}",
            gramian.w_l.nrows(),
            model.n
        )));
    }
    Ok(PhiMatrix::from_raw(model.c.dot(&gramian.w_l)))
}

/// A measurement partition with coefficients and aggregation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    /// Disjoint index sets covering `0..l`, in formation order.
    pub clusters: Vec<Vec<usize>>,
    /// Unit-norm coefficient vector per cluster (first entry nonnegative).
    pub coefficients: Vec<Array1<f64>>,
    /// Coarseness used to form the partition.
    pub theta: f64,
    /// Aggregation matrix, `K x l`, orthonormal rows with disjoint support.
    pub pi: Array2<f64>,
    /// Operating-point label this partition belongs to.
    pub loading_label: String,
}

impl ClusterSet {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn l(&self) -> usize {
        self.pi.ncols()
    }

    /// Cluster index containing a measurement.
    pub fn cluster_of(&self, measurement: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&measurement))
    }

    /// Memberships only, ignoring coefficients; used to compare partitions
    /// across operating points.
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        self.clusters.clone()
    }

    /// All intra-cluster pairs `(k, i, j)` with `i < j`, in deterministic
    /// order together with their coefficient entries `(p_i, p_j)`.
    pub fn pairs(&self) -> Vec<(usize, usize, usize, f64, f64)> {
        let mut out = Vec::new();
        for (k, members) in self.clusters.iter().enumerate() {
            for a in 0..members.len() {
                for b in a + 1..members.len() {
                    out.push((
                        k,
                        members[a],
                        members[b],
                        self.coefficients[k][a],
                        self.coefficients[k][b],
                    ));
                }
            }
        }
        out
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("# measurement clusters (indices are 1-based)\n");
        out.push_str(&format!("theta {} loading {}\n", fmt_f64(self.theta), self.loading_label));
        for (k, members) in self.clusters.iter().enumerate() {
            let idx: Vec<String> = members.iter().map(|i| (i + 1).to_string()).collect();
            let coeff: Vec<String> =
                self.coefficients[k].iter().map(|p| fmt_f64(*p)).collect();
            out.push_str(&format!("{}: {} | {}\n", k + 1, idx.join(" "), coeff.join(" ")));
        }
        out
    }

    pub fn parse(text: &str) -> Result<ClusterSet> {
        let mut theta = None;
        let mut loading_label = String::new();
        let mut clusters = Vec::new();
        let mut coefficients = Vec::new();
        let mut l = 0usize;

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix("theta ") {
                let mut parts = rest.splitn(3, ' ');
                let theta_tok = parts.next().unwrap_or_default();
                theta = Some(theta_tok.parse::<f64>().map_err(|_| ClusterError::Parse {
                    line: line_no,
                    message: format!("cannot parse theta `{theta_tok}`"),
                })?);
                match (parts.next(), parts.next()) {
                    (Some("loading"), Some(label)) => loading_label = label.to_string(),
                    _ => {
                        return Err(ClusterError::Parse {
                            line: line_no,
                            message: "header must be `theta <value> loading <label>`".into(),
                        })
                    }
                }
                continue;
            }
            let (_, rest) = content.split_once(':').ok_or(ClusterError::Parse {
                line: line_no,
                message: "cluster line must be `k: i1 i2 ... | p1 p2 ...`".into(),
            })?;
            let (idx_part, coeff_part) = rest.split_once('|').ok_or(ClusterError::Parse {
                line: line_no,
                message: "cluster line is missing the `|` separator".into(),
            })?;
            let members: Vec<usize> = idx_part
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| ClusterError::Parse {
                            line: line_no,
                            message: format!("bad measurement index `{t}`"),
                        })
                        .and_then(|i| {
                            if i == 0 {
                                Err(ClusterError::Parse {
                                    line: line_no,
                                    message: "measurement indices are 1-based".into(),
                                })
                            } else {
                                Ok(i - 1)
                            }
                        })
                })
                .collect::<Result<_>>()?;
            let coeffs: Vec<f64> = coeff_part
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| ClusterError::Parse {
                        line: line_no,
                        message: format!("bad coefficient `{t}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if members.len() != coeffs.len() {
                return Err(ClusterError::Parse {
                    line: line_no,
                    message: format!(
                        "{} indices but {} coefficients",
                        members.len(),
                        coeffs.len()
                    ),
                });
            }
            l = l.max(members.iter().copied().max().map_or(0, |m| m + 1));
            clusters.push(members);
            coefficients.push(Array1::from_vec(coeffs));
        }

        let theta = theta.ok_or(ClusterError::Parse {
            line: 1,
            message: "missing `theta ... loading ...` header".into(),
        })?;
        let pi = build_pi(&clusters, &coefficients, l);
        Ok(ClusterSet { clusters, coefficients, theta, pi, loading_label })
    }
}

/// Coefficients from the zero-mode left eigenvector restricted to each
/// cluster (unit norm, first significant entry nonnegative).
///
/// `vmax_out` is the zero-mode left eigenvector expressed in measurement
/// coordinates (`C v_max`). A cluster on which it is numerically zero is
/// reported as [`ClusterError::ZeroRestriction`]; see
/// [`coefficients_with_fallback`] for the recovery used by the pipeline.
pub fn clustering_coefficients(
    vmax_out: &Array1<f64>,
    clusters: &[Vec<usize>],
) -> Result<Vec<Array1<f64>>> {
    clusters
        .iter()
        .enumerate()
        .map(|(k, members)| {
            if members.is_empty() {
                return Err(ClusterError::DimensionMismatch(format!("cluster {k} is empty")));
            }
            for &i in members {
                if i >= vmax_out.len() {
                    return Err(ClusterError::DimensionMismatch(format!(
                        "measurement index {i} out of range"
                    )));
                }
            }
            let mut p: Array1<f64> = members.iter().map(|&i| vmax_out[i]).collect();
            let norm = p.dot(&p).sqrt();
            if norm < RESTRICTION_TOL {
                return Err(ClusterError::ZeroRestriction { cluster: k });
            }
            p /= norm;
            fix_first_sign(&mut p);
            Ok(p)
        })
        .collect()
}

/// Like [`clustering_coefficients`] but falling back to Phi row norms (and
/// finally to uniform weights) on clusters where the zero-mode eigenvector
/// vanishes or would zero out individual members.
pub fn coefficients_with_fallback(
    vmax_out: &Array1<f64>,
    phi: &PhiMatrix,
    clusters: &[Vec<usize>],
) -> Vec<Array1<f64>> {
    clusters
        .iter()
        .map(|members| {
            let mut p: Array1<f64> = members.iter().map(|&i| vmax_out[i]).collect();
            if !restriction_usable(&p) {
                p = members.iter().map(|&i| phi.row_norms[i]).collect();
            }
            let mut norm = p.dot(&p).sqrt();
            if norm < RESTRICTION_TOL {
                p = Array1::from_elem(members.len(), 1.0);
                norm = p.dot(&p).sqrt();
            }
            p /= norm;
            fix_first_sign(&mut p);
            p
        })
        .collect()
}

fn fix_first_sign(p: &mut Array1<f64>) {
    if let Some(first) = p.iter().find(|x| x.abs() > 1e-14) {
        if *first < 0.0 {
            p.mapv_inplace(|x| -x);
        }
    }
}

/// Aggregation matrix: row k carries the coefficients of cluster k at its
/// measurement columns. Rows are orthonormal because coefficient vectors are
/// unit norm and supports are disjoint.
pub fn build_pi(clusters: &[Vec<usize>], coefficients: &[Array1<f64>], l: usize) -> Array2<f64> {
    let mut pi = Array2::<f64>::zeros((clusters.len(), l));
    for (k, members) in clusters.iter().enumerate() {
        for (pos, &i) in members.iter().enumerate() {
            pi[[k, i]] = coefficients[k][pos];
        }
    }
    pi
}

/// Pairwise linear-dependence residual between two Phi rows with weights
/// `(p_i, p_j)`: `|| p_j Phi_i - p_i Phi_j ||`.
pub fn row_pair_residual(phi: &Array2<f64>, i: usize, j: usize, p_i: f64, p_j: f64) -> f64 {
    let diff = &phi.row(i).mapv(|x| p_j * x) - &phi.row(j).mapv(|x| p_i * x);
    diff.dot(&diff).sqrt()
}

/// Coefficients for a candidate pair: the unit-normalized restriction of the
/// zero-mode eigenvector to `{i, j}`, falling back to the Phi row norms (and
/// then to uniform weights) when that restriction is numerically zero. This
/// is the same rule as the per-cluster coefficients, applied to a pair.
pub fn pair_weights(phi: &PhiMatrix, vmax_out: &Array1<f64>, i: usize, j: usize) -> (f64, f64) {
    let (mut a, mut b) = (vmax_out[i], vmax_out[j]);
    let max = a.abs().max(b.abs());
    let degenerate = max < RESTRICTION_TOL
        || a.abs() < DEGENERATE_RATIO * max
        || b.abs() < DEGENERATE_RATIO * max;
    if degenerate {
        a = phi.row_norms[i];
        b = phi.row_norms[j];
    }
    let norm = (a * a + b * b).sqrt();
    if norm < RESTRICTION_TOL {
        return (1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt());
    }
    (a / norm, b / norm)
}

/// The pairwise clustering test value for measurements `i` and `j`.
pub fn pair_residual(phi: &PhiMatrix, vmax_out: &Array1<f64>, i: usize, j: usize) -> f64 {
    let (p_i, p_j) = pair_weights(phi, vmax_out, i, j);
    row_pair_residual(&phi.phi, i, j, p_i, p_j)
}

/// Greedy partition of the measurements.
///
/// The lowest unassigned index opens a new cluster; every still-unassigned
/// `j` joins it when `|| p_j Phi_i - p_i Phi_j || <= theta`, where the `p`
/// values are the pair-restricted coefficients of [`pair_weights`].
/// Membership is decided against the seed only (no transitive closure), so
/// intra-cluster pairs are only guaranteed to satisfy the condition at
/// `2 * theta`. Final coefficients are recomputed per cluster with the
/// row-norm fallback.
pub fn form_clusters(phi: &PhiMatrix, vmax_out: &Array1<f64>, theta: f64) -> Result<ClusterSet> {
    let l = phi.n_measurements();
    if vmax_out.len() != l {
        return Err(ClusterError::DimensionMismatch(format!(
            "vmax has {} entries for {} measurements",
            vmax_out.len(),
            l
        )));
    }
    if theta < 0.0 {
        return Err(ClusterError::DimensionMismatch("theta must be nonnegative".into()));
    }

    let mut assigned = vec![false; l];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..l {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut members = vec![i];
        for j in i + 1..l {
            if assigned[j] {
                continue;
            }
            if pair_residual(phi, vmax_out, i, j) <= theta {
                assigned[j] = true;
                members.push(j);
            }
        }
        clusters.push(members);
    }

    let coefficients = coefficients_with_fallback(vmax_out, phi, &clusters);
    let pi = build_pi(&clusters, &coefficients, l);
    Ok(ClusterSet { clusters, coefficients, theta, pi, loading_label: String::new() })
}

/// Largest intra-cluster pairwise residual (pair-restricted weights), for
/// post-hoc verification against `2 * theta`.
pub fn max_intra_cluster_residual(
    phi: &PhiMatrix,
    vmax_out: &Array1<f64>,
    clusters: &[Vec<usize>],
) -> f64 {
    let mut worst = 0.0f64;
    for members in clusters {
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                worst = worst.max(pair_residual(phi, vmax_out, members[a], members[b]));
            }
        }
    }
    worst
}

/// Smallest theta on a logarithmic grid for which every cluster has at least
/// two members; falls back to the coarsest grid value when none qualifies.
pub fn default_theta(phi: &PhiMatrix, vmax_out: &Array1<f64>) -> f64 {
    let grid: Vec<f64> = (0..21).map(|k| 10f64.powf(-6.0 + 0.25 * k as f64)).collect();
    for &theta in &grid {
        if let Ok(set) = form_clusters(phi, vmax_out, theta) {
            if set.clusters.iter().all(|c| c.len() >= 2) {
                return theta;
            }
        }
    }
    *grid.last().unwrap()
}
