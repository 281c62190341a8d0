//! Detection report and its CSV form.

use std::collections::BTreeSet;
use std::io::Write;

use super::{Result, DetectError};
use crate::textio::fmt_f64;

/// One row of the residual stream: per control step and per covered cluster,
/// the pair with the largest (smoothed) residual, the cluster threshold, and
/// whether any pair in the cluster reached it. Cluster ids restart at 1 in
/// every refresh epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    pub cluster: usize,
    pub i: usize,
    pub j: usize,
    pub residual: f64,
    pub epsilon: f64,
    pub fired: bool,
}

/// A pair-level threshold crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredEvent {
    pub t: f64,
    pub cluster: usize,
    pub i: usize,
    pub j: usize,
    pub residual: f64,
    pub epsilon: f64,
}

/// Aggregated outcome of a detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// Cluster-level residual stream (plot-ready).
    pub rows: Vec<ReportRow>,
    /// Pair-level threshold crossings.
    pub events: Vec<FiredEvent>,
    /// Measurements appearing in any fired pair.
    pub flagged: BTreeSet<usize>,
    /// Measurements singled out by majority vote within their cluster.
    pub isolated: BTreeSet<usize>,
    /// Vote ties that could not be resolved (always the case for fired
    /// two-member clusters).
    pub ambiguous: Vec<Vec<usize>>,
    /// Measurements in singleton clusters, which no pairwise check covers.
    pub uncovered: BTreeSet<usize>,
    pub first_detection_time: Option<f64>,
    /// Number of refresh epochs the run spanned.
    pub epochs: usize,
}

impl DetectionReport {
    pub fn any_fired(&self) -> bool {
        !self.events.is_empty()
    }

    /// True when some pair fired inside `[start, end)`.
    pub fn fired_in_window(&self, start: f64, end: f64) -> bool {
        self.events.iter().any(|e| e.t >= start && e.t < end)
    }

    /// Earliest firing time inside `[start, end)`.
    pub fn first_fired_in_window(&self, start: f64, end: f64) -> Option<f64> {
        self.events
            .iter()
            .filter(|e| e.t >= start && e.t < end)
            .map(|e| e.t)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.min(t))))
    }

    /// Fired events outside every window in the list.
    pub fn events_outside_windows(&self, windows: &[(f64, f64)]) -> Vec<&FiredEvent> {
        self.events
            .iter()
            .filter(|e| !windows.iter().any(|&(s, en)| e.t >= s && e.t < en))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,cluster,i,j,residual,epsilon,fired")?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            line.push_str(&fmt_f64(row.t));
            line.push(',');
            line.push_str(&(row.cluster + 1).to_string());
            line.push(',');
            line.push_str(&(row.i + 1).to_string());
            line.push(',');
            line.push_str(&(row.j + 1).to_string());
            line.push(',');
            line.push_str(&fmt_f64(row.residual));
            line.push(',');
            line.push_str(&fmt_f64(row.epsilon));
            line.push(',');
            line.push_str(if row.fired { "1" } else { "0" });
            writeln!(w, "{line}")?;
        }
        writeln!(w, "# summary")?;
        writeln!(w, "# epochs {}", self.epochs)?;
        writeln!(w, "# flagged{}", fmt_indices(&self.flagged))?;
        writeln!(w, "# isolated{}", fmt_indices(&self.isolated))?;
        for group in &self.ambiguous {
            let set: BTreeSet<usize> = group.iter().copied().collect();
            writeln!(w, "# ambiguous{}", fmt_indices(&set))?;
        }
        writeln!(w, "# uncovered{}", fmt_indices(&self.uncovered))?;
        match self.first_detection_time {
            Some(t) => writeln!(w, "# first_detection {}", fmt_f64(t))?,
            None => writeln!(w, "# first_detection none")?,
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Parse a report written by [`DetectionReport::write_csv`]. Pair-level
    /// events are reconstructed from the fired rows.
    pub fn parse_csv(text: &str) -> Result<DetectionReport> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DetectError::Parse {
            line: 1,
            message: "empty report".into(),
        })?;
        if header != "t,cluster,i,j,residual,epsilon,fired" {
            return Err(DetectError::Parse { line: 1, message: "unexpected report header".into() });
        }

        let mut rows = Vec::new();
        let mut epochs = 0;
        let mut flagged = BTreeSet::new();
        let mut isolated = BTreeSet::new();
        let mut ambiguous = Vec::new();
        let mut uncovered = BTreeSet::new();
        let mut first_detection_time = None;

        for (idx, raw) in lines {
            let line_no = idx + 1;
            if raw.is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix("# ") {
                let mut toks = rest.split_whitespace();
                match toks.next() {
                    Some("summary") => {}
                    Some("epochs") => {
                        epochs = toks
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or(DetectError::Parse {
                                line: line_no,
                                message: "bad epochs line".into(),
                            })?
                    }
                    Some("flagged") => flagged = parse_indices(toks, line_no)?,
                    Some("isolated") => isolated = parse_indices(toks, line_no)?,
                    Some("ambiguous") => {
                        ambiguous.push(parse_indices(toks, line_no)?.into_iter().collect())
                    }
                    Some("uncovered") => uncovered = parse_indices(toks, line_no)?,
                    Some("first_detection") => {
                        let tok = toks.next().ok_or(DetectError::Parse {
                            line: line_no,
                            message: "bad first_detection line".into(),
                        })?;
                        first_detection_time = if tok == "none" {
                            None
                        } else {
                            Some(tok.parse().map_err(|_| DetectError::Parse {
                                line: line_no,
                                message: format!("bad first_detection `{tok}`"),
                            })?)
                        };
                    }
                    other => {
                        return Err(DetectError::Parse {
                            line: line_no,
                            message: format!("unknown summary line {other:?}"),
                        })
                    }
                }
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 7 {
                return Err(DetectError::Parse {
                    line: line_no,
                    message: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| DetectError::Parse {
                    line: line_no,
                    message: format!("cannot parse `{s}`"),
                })
            };
            let parse_idx = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .map(|v| v - 1)
                    .ok_or(DetectError::Parse {
                        line: line_no,
                        message: format!("bad index `{s}`"),
                    })
            };
            rows.push(ReportRow {
                t: parse_f(fields[0])?,
                cluster: parse_idx(fields[1])?,
                i: parse_idx(fields[2])?,
                j: parse_idx(fields[3])?,
                residual: parse_f(fields[4])?,
                epsilon: parse_f(fields[5])?,
                fired: match fields[6] {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(DetectError::Parse {
                            line: line_no,
                            message: format!("bad fired flag `{other}`"),
                        })
                    }
                },
            });
        }

        let events = rows
            .iter()
            .filter(|r| r.fired)
            .map(|r| FiredEvent {
                t: r.t,
                cluster: r.cluster,
                i: r.i,
                j: r.j,
                residual: r.residual,
                epsilon: r.epsilon,
            })
            .collect();
        Ok(DetectionReport {
            rows,
            events,
            flagged,
            isolated,
            ambiguous,
            uncovered,
            first_detection_time,
            epochs,
        })
    }
}

fn fmt_indices(set: &BTreeSet<usize>) -> String {
    let mut out = String::new();
    for i in set {
        out.push(' ');
        out.push_str(&(i + 1).to_string());
    }
    out
}

fn parse_indices<'a>(
    toks: impl Iterator<Item = &'a str>,
    line_no: usize,
) -> Result<BTreeSet<usize>> {
    toks.map(|t| {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .map(|v| v - 1)
            .ok_or(DetectError::Parse {
                line: line_no,
                message: format!("bad index `{t}`"),
            })
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_summary() {
        let rows = vec![
            ReportRow { t: 0.0, cluster: 0, i: 0, j: 1, residual: 1e-6, epsilon: 1e-4, fired: false },
            ReportRow { t: 0.01, cluster: 0, i: 0, j: 1, residual: 2e-3, epsilon: 1e-4, fired: true },
        ];
        let events = vec![FiredEvent {
            t: 0.01,
            cluster: 0,
            i: 0,
            j: 1,
            residual: 2e-3,
            epsilon: 1e-4,
        }];
        let report = DetectionReport {
            rows,
            events,
            flagged: [0, 1].into_iter().collect(),
            isolated: BTreeSet::new(),
            ambiguous: vec![vec![0, 1]],
            uncovered: [5].into_iter().collect(),
            first_detection_time: Some(0.01),
            epochs: 1,
        };
        let text = report.to_csv_string();
        let back = DetectionReport::parse_csv(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn window_queries() {
        let mk = |t: f64| FiredEvent { t, cluster: 0, i: 0, j: 1, residual: 1.0, epsilon: 0.1 };
        let report = DetectionReport {
            rows: Vec::new(),
            events: vec![mk(1.0), mk(5.0)],
            flagged: BTreeSet::new(),
            isolated: BTreeSet::new(),
            ambiguous: Vec::new(),
            uncovered: BTreeSet::new(),
            first_detection_time: Some(1.0),
            epochs: 1,
        };
        assert!(report.fired_in_window(0.5, 2.0));
        assert!(!report.fired_in_window(2.0, 4.0));
        assert_eq!(report.first_fired_in_window(0.0, 10.0), Some(1.0));
        assert_eq!(report.events_outside_windows(&[(0.5, 2.0)]).len(), 1);
    }
}
