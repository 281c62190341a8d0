//! Intra-cluster residual detection of measurement attacks.
//!
//! Within a cluster, any two received measurements should stay proportional
//! with the cluster's coefficients; the pairwise residual
//! `r_ij = |p_j y_i - p_i y_j|` is near zero for the physical response no
//! matter what the load does, but an injection on one channel breaks the
//! proportionality. Thresholds are calibrated per cluster from an
//! attack-free reference run, with a safety factor and a small floor.

mod driver;
mod observer;
mod report;

pub use driver::{run_detector, DetectorOutcome, EpochSummary, ModelProvider};
pub use observer::{observer_steady_residual, LuenbergerObserver};
pub use report::{DetectionReport, FiredEvent, ReportRow};

use std::collections::VecDeque;
use std::ops::Range;

use ndarray::prelude::*;
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterSet};
use crate::gridmodel::ModelError;
use crate::matcore::MatError;
use crate::simkit::{SimError, SimulationTrace};
use crate::textio::{fmt_f64, TextError};

/// Smallest usable detection threshold; calibrated values are floored here
/// so that an exactly proportional (zero-residual) calibration run still
/// yields a usable threshold.
pub const EPSILON_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cluster {0} has no measurement pairs (singleton)")]
    EmptyCluster(usize),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Cluster(#[from] ClusterError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Mat(#[from] MatError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TextError> for DetectError {
    fn from(e: TextError) -> Self {
        DetectError::Parse { line: e.line, message: e.message }
    }
}

pub type Result<T> = std::result::Result<T, DetectError>;

/// Pairwise consistency residual `|p_j y_i - p_i y_j|`.
pub fn residual_pair(y_i: f64, y_j: f64, p_i: f64, p_j: f64) -> f64 {
    (p_j * y_i - p_i * y_j).abs()
}

/// A pair whose residual reached its cluster threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredPair {
    pub cluster: usize,
    pub i: usize,
    pub j: usize,
    pub residual: f64,
    pub epsilon: f64,
}

/// Per-cluster detection thresholds, tied to the memberships they were
/// calibrated for. Singleton clusters carry no threshold and are reported
/// as uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub clusters: Vec<Vec<usize>>,
    pub epsilon: Vec<Option<f64>>,
    pub safety: f64,
}

impl ThresholdTable {
    /// Cluster indices without a threshold (no pairs to compare).
    pub fn uncovered(&self) -> Vec<usize> {
        self.epsilon
            .iter()
            .enumerate()
            .filter_map(|(k, e)| e.is_none().then_some(k))
            .collect()
    }

    /// Measurement indices that no pairwise check can protect.
    pub fn uncovered_measurements(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .uncovered()
            .into_iter()
            .flat_map(|k| self.clusters[k].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// True when the table was calibrated for exactly this partition.
    pub fn matches(&self, set: &ClusterSet) -> bool {
        self.clusters == set.clusters
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("# detection thresholds (indices are 1-based)\n");
        out.push_str(&format!("safety {}\n", fmt_f64(self.safety)));
        for (k, members) in self.clusters.iter().enumerate() {
            let idx: Vec<String> = members.iter().map(|i| (i + 1).to_string()).collect();
            let eps = match self.epsilon[k] {
                Some(e) => fmt_f64(e),
                None => "uncovered".to_string(),
            };
            out.push_str(&format!("{}: {} | {}\n", k + 1, idx.join(" "), eps));
        }
        out
    }

    pub fn parse(text: &str) -> Result<ThresholdTable> {
        let mut safety = None;
        let mut clusters = Vec::new();
        let mut epsilon = Vec::new();
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
            if let Some(rest) = content.strip_prefix("safety ") {
                safety = Some(rest.trim().parse::<f64>().map_err(|_| DetectError::Parse {
                    line: line_no,
                    message: format!("cannot parse safety `{rest}`"),
                })?);
                continue;
            }
            let (_, rest) = content.split_once(':').ok_or(DetectError::Parse {
                line: line_no,
                message: "threshold line must be `k: i1 i2 ... | epsilon`".into(),
            })?;
            let (idx_part, eps_part) = rest.split_once('|').ok_or(DetectError::Parse {
                line: line_no,
                message: "threshold line is missing the `|` separator".into(),
            })?;
            let members: Vec<usize> = idx_part
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .ok()
                        .filter(|&i| i >= 1)
                        .map(|i| i - 1)
                        .ok_or(DetectError::Parse {
                            line: line_no,
                            message: format!("bad measurement index `{t}`"),
                        })
                })
                .collect::<Result<_>>()?;
            let eps_tok = eps_part.trim();
            let eps = if eps_tok == "uncovered" {
                None
            } else {
                Some(eps_tok.parse::<f64>().map_err(|_| DetectError::Parse {
                    line: line_no,
                    message: format!("cannot parse epsilon `{eps_tok}`"),
                })?)
            };
            clusters.push(members);
            epsilon.push(eps);
        }
        let safety = safety.ok_or(DetectError::Parse {
            line: 1,
            message: "missing `safety <value>` line".into(),
        })?;
        Ok(ThresholdTable { clusters, epsilon, safety })
    }
}

/// Calibrate per-cluster thresholds from an attack-free trace: the safety
/// factor times the largest intra-cluster residual observed, floored at
/// [`EPSILON_FLOOR`]. With a smoothing window the residual stream is
/// averaged the same way the detector will see it.
pub fn calibrate_threshold(
    trace: &SimulationTrace,
    set: &ClusterSet,
    safety: f64,
    smoothing_steps: Option<usize>,
) -> Result<ThresholdTable> {
    calibrate_in_range(trace, set, safety, smoothing_steps, 0..trace.n_samples())
}

/// Calibration restricted to a sample range (used per refresh epoch).
pub fn calibrate_in_range(
    trace: &SimulationTrace,
    set: &ClusterSet,
    safety: f64,
    smoothing_steps: Option<usize>,
    range: Range<usize>,
) -> Result<ThresholdTable> {
    if set.l() != trace.y_tilde.ncols() {
        return Err(DetectError::Mismatch(format!(
            "cluster set covers {} measurements, trace has {}",
            set.l(),
            trace.y_tilde.ncols()
        )));
    }
    if safety < 1.0 {
        return Err(DetectError::Mismatch("safety factor must be at least 1".into()));
    }
    let mut stream = ResidualStream::new(set, smoothing_steps);
    let mut max_per_cluster = vec![0.0f64; set.k()];
    for k in range {
        let values = stream.step(&trace.y_tilde.row(k));
        for (pair_idx, &(cluster, ..)) in stream.pairs.iter().enumerate() {
            max_per_cluster[cluster] = max_per_cluster[cluster].max(values[pair_idx]);
        }
    }
    let epsilon = set
        .clusters
        .iter()
        .enumerate()
        .map(|(k, members)| {
            (members.len() >= 2).then(|| (safety * max_per_cluster[k]).max(EPSILON_FLOOR))
        })
        .collect();
    Ok(ThresholdTable { clusters: set.clusters.clone(), epsilon, safety })
}

/// Stateful intra-cluster residual stream with optional moving-average
/// smoothing. Produces one value per pair per step, in `(cluster, i, j)`
/// order.
pub struct ResidualStream {
    /// `(cluster, i, j, p_i, p_j)` in deterministic order.
    pub pairs: Vec<(usize, usize, usize, f64, f64)>,
    window: Option<usize>,
    history: Vec<VecDeque<f64>>,
    sums: Vec<f64>,
}

impl ResidualStream {
    pub fn new(set: &ClusterSet, window: Option<usize>) -> Self {
        let pairs = set.pairs();
        let n = pairs.len();
        ResidualStream {
            pairs,
            window,
            history: vec![VecDeque::new(); n],
            sums: vec![0.0; n],
        }
    }

    /// Advance one control step; returns the (smoothed) residual per pair.
    pub fn step(&mut self, y_tilde: &ArrayView1<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pairs.len());
        for (idx, &(_, i, j, p_i, p_j)) in self.pairs.iter().enumerate() {
            let raw = residual_pair(y_tilde[i], y_tilde[j], p_i, p_j);
            let value = match self.window {
                None => raw,
                Some(w) => {
                    let hist = &mut self.history[idx];
                    hist.push_back(raw);
                    self.sums[idx] += raw;
                    if hist.len() > w {
                        self.sums[idx] -= hist.pop_front().unwrap();
                    }
                    self.sums[idx] / hist.len() as f64
                }
            };
            out.push(value);
        }
        out
    }
}

/// Evaluate all intra-cluster pairs of one received measurement vector
/// against a threshold table; returns the pairs at or above their cluster's
/// threshold in `(cluster, i, j)` order. Uncovered clusters are skipped.
pub fn detect_step(
    y_tilde: &ArrayView1<f64>,
    set: &ClusterSet,
    thresholds: &ThresholdTable,
) -> Result<Vec<FiredPair>> {
    if !thresholds.matches(set) {
        return Err(DetectError::Mismatch(
            "threshold table was calibrated for a different partition".into(),
        ));
    }
    let mut fired = Vec::new();
    for (cluster, i, j, p_i, p_j) in set.pairs() {
        let Some(eps) = thresholds.epsilon[cluster] else { continue };
        let r = residual_pair(y_tilde[i], y_tilde[j], p_i, p_j);
        if r >= eps {
            fired.push(FiredPair { cluster, i, j, residual: r, epsilon: eps });
        }
    }
    Ok(fired)
}

/// Majority-vote isolation of the attacked measurement within one cluster's
/// fired pairs. Returns `(isolated, ambiguous)`: a unique top participant,
/// or the tied set when the vote cannot single one out (always the case for
/// two-member clusters).
pub fn isolate_by_vote(fired: &[FiredPair], cluster: usize) -> (Option<usize>, Vec<usize>) {
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for f in fired.iter().filter(|f| f.cluster == cluster) {
        *counts.entry(f.i).or_default() += 1;
        *counts.entry(f.j).or_default() += 1;
    }
    let Some(&max) = counts.values().max() else {
        return (None, Vec::new());
    };
    let top: Vec<usize> = counts
        .iter()
        .filter_map(|(&idx, &c)| (c == max).then_some(idx))
        .collect();
    if top.len() == 1 {
        (Some(top[0]), Vec::new())
    } else {
        (None, top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{build_pi, ClusterSet};

    fn proportional_set(sizes: &[usize]) -> ClusterSet {
        // Clusters of consecutive indices with uniform coefficients.
        let mut clusters = Vec::new();
        let mut coefficients = Vec::new();
        let mut next = 0;
        for &m in sizes {
            clusters.push((next..next + m).collect::<Vec<_>>());
            coefficients.push(Array1::from_elem(m, 1.0 / (m as f64).sqrt()));
            next += m;
        }
        let l = next;
        let pi = build_pi(&clusters, &coefficients, l);
        ClusterSet { clusters, coefficients, theta: 0.0, pi, loading_label: "toy".into() }
    }

    #[test]
    fn residual_examples() {
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(residual_pair(3.0, 3.0, s, s), 0.0);
        let r = residual_pair(1.1, 1.0, s, s);
        assert!((r - 0.1 * s).abs() < 1e-12, "{r}");
        // Exactly proportional pair with matching coefficients.
        let (p_i, p_j) = (2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt());
        assert!(residual_pair(2.0, 1.0, p_i, p_j) < 1e-15);
    }

    #[test]
    fn residual_symmetry_and_scale_covariance() {
        let (y_i, y_j, p_i, p_j) = (1.3, -0.4, 0.6, 0.8);
        assert_eq!(
            residual_pair(y_i, y_j, p_i, p_j),
            residual_pair(y_j, y_i, p_j, p_i)
        );
        let c = -3.7;
        let scaled = residual_pair(c * y_i, c * y_j, p_i, p_j);
        assert!((scaled - c.abs() * residual_pair(y_i, y_j, p_i, p_j)).abs() < 1e-12);
    }

    fn flat_trace(set: &ClusterSet, rows: Vec<Array1<f64>>) -> SimulationTrace {
        let l = set.l();
        let t = rows.len();
        let mut y = Array2::zeros((t, l));
        for (k, row) in rows.iter().enumerate() {
            y.row_mut(k).assign(row);
        }
        SimulationTrace {
            times: Array1::linspace(0.0, (t - 1) as f64 * 0.01, t),
            x: Array2::zeros((t, l)),
            y: y.clone(),
            y_tilde: y,
            d: Array2::zeros((t, 1)),
            output_labels: (0..l).map(|i| format!("m{i}")).collect(),
            load_buses: vec![1],
        }
    }

    #[test]
    fn calibration_floors_proportional_clusters() {
        let set = proportional_set(&[2]);
        let trace = flat_trace(&set, vec![array![1.0, 1.0], array![2.0, 2.0]]);
        let table = calibrate_threshold(&trace, &set, 1.5, None).unwrap();
        assert_eq!(table.epsilon[0], Some(EPSILON_FLOOR));
    }

    #[test]
    fn calibration_boundary_at_unit_safety() {
        let set = proportional_set(&[2]);
        let trace = flat_trace(&set, vec![array![1.0, 1.0], array![1.2, 1.0]]);
        let table = calibrate_threshold(&trace, &set, 1.0, None).unwrap();
        let eps = table.epsilon[0].unwrap();
        // With safety 1 the max calibration residual equals epsilon, so the
        // same data fires at the boundary.
        let fired = detect_step(&trace.y_tilde.row(1), &set, &table).unwrap();
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].residual, eps);
    }

    #[test]
    fn singleton_clusters_uncovered() {
        let set = proportional_set(&[2, 1]);
        let trace = flat_trace(&set, vec![array![1.0, 1.0, 5.0]]);
        let table = calibrate_threshold(&trace, &set, 1.5, None).unwrap();
        assert_eq!(table.uncovered(), vec![1]);
        assert_eq!(table.uncovered_measurements(), vec![2]);
        // No pairs exist in the singleton, so nothing can fire there.
        let fired = detect_step(&trace.y_tilde.row(0), &set, &table).unwrap();
        assert!(fired.is_empty());
    }

    #[test]
    fn attacked_member_fires_all_its_pairs() {
        for m in 2..=5 {
            let set = proportional_set(&[m]);
            let clean = Array1::from_elem(m, 1.0);
            let trace = flat_trace(&set, vec![clean.clone()]);
            let table = calibrate_threshold(&trace, &set, 1.5, None).unwrap();

            let attacked_idx = m / 2;
            let mut attacked = clean;
            attacked[attacked_idx] *= 1.1;
            let fired = detect_step(&attacked.view(), &set, &table).unwrap();
            assert_eq!(fired.len(), m - 1, "cluster size {m}");
            assert!(fired.iter().all(|f| f.i == attacked_idx || f.j == attacked_idx));

            let (isolated, ambiguous) = isolate_by_vote(&fired, 0);
            if m == 2 {
                assert!(isolated.is_none());
                assert_eq!(ambiguous.len(), 2);
            } else {
                assert_eq!(isolated, Some(attacked_idx));
            }
        }
    }

    #[test]
    fn cluster_locality() {
        let set = proportional_set(&[2, 2]);
        let trace = flat_trace(&set, vec![array![1.0, 1.0, 2.0, 2.0]]);
        let table = calibrate_threshold(&trace, &set, 1.5, None).unwrap();
        let attacked = array![1.5, 1.0, 2.0, 2.0];
        let fired = detect_step(&attacked.view(), &set, &table).unwrap();
        assert!(fired.iter().all(|f| f.cluster == 0));
    }

    #[test]
    fn attack_free_brute_force_completeness() {
        // On an exactly proportional cluster the detector fires iff the
        // injected pair difference reaches epsilon.
        let set = proportional_set(&[3]);
        let trace = flat_trace(&set, vec![array![1.0, 1.0, 1.0]]);
        let table = calibrate_threshold(&trace, &set, 1.5, None).unwrap();
        let eps = table.epsilon[0].unwrap();
        let p = 1.0 / 3f64.sqrt();
        let grid = [-0.2, -1e-10, 0.0, 1e-10, 0.2];
        for &a0 in &grid {
            for &a1 in &grid {
                let y = array![1.0 + a0, 1.0 + a1, 1.0];
                let fired = detect_step(&y.view(), &set, &table).unwrap();
                let expect_any = [(a0, a1), (a0, 0.0), (a1, 0.0)]
                    .iter()
                    .any(|&(u, v)| (p * u - p * v).abs() >= eps);
                assert_eq!(!fired.is_empty(), expect_any, "a0={a0} a1={a1}");
            }
        }
    }

    #[test]
    fn smoothing_averages_residuals() {
        let set = proportional_set(&[2]);
        let mut stream = ResidualStream::new(&set, Some(4));
        let p = 1.0 / 2f64.sqrt();
        // Residual jumps to p at t=1 and stays.
        let rows = [array![1.0, 1.0], array![2.0, 1.0], array![2.0, 1.0]];
        let v0 = stream.step(&rows[0].view())[0];
        let v1 = stream.step(&rows[1].view())[0];
        let v2 = stream.step(&rows[2].view())[0];
        assert_eq!(v0, 0.0);
        assert!((v1 - p / 2.0).abs() < 1e-12);
        assert!((v2 - 2.0 * p / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_table_round_trips() {
        let table = ThresholdTable {
            clusters: vec![vec![0, 1], vec![2]],
            epsilon: vec![Some(3.5e-4), None],
            safety: 1.5,
        };
        let text = table.serialize();
        let back = ThresholdTable::parse(&text).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.serialize(), text);
    }

    #[test]
    fn mismatched_table_rejected() {
        let set = proportional_set(&[2]);
        let table = ThresholdTable {
            clusters: vec![vec![0], vec![1]],
            epsilon: vec![None, None],
            safety: 1.5,
        };
        let y = array![1.0, 1.0];
        assert!(matches!(
            detect_step(&y.view(), &set, &table),
            Err(DetectError::Mismatch(_))
        ));
    }
}
