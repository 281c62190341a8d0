//! Recorded simulation trace and its CSV form.

use std::io::Write;

use ndarray::prelude::*;

use super::{Result, SimError};
use crate::textio::fmt_f64;

/// Full time-indexed record of one simulation run. Rows are sample times;
/// `y` are the true outputs and `y_tilde` the received (possibly attacked
/// and noisy) measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Array1<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub y_tilde: Array2<f64>,
    pub d: Array2<f64>,
    pub output_labels: Vec<String>,
    pub load_buses: Vec<u32>,
}

impl SimulationTrace {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    /// Index of the sample at (or just before) time `t`.
    pub fn sample_at(&self, t: f64) -> usize {
        let dt = self.dt();
        if dt == 0.0 {
            return 0;
        }
        ((t / dt).floor() as usize).min(self.n_samples() - 1)
    }

    /// Column headers: `t`, state, output, received and disturbance columns.
    fn headers(&self) -> Vec<String> {
        let mut h = Vec::with_capacity(1 + self.x.ncols() + 2 * self.y.ncols() + self.d.ncols());
        h.push("t".to_string());
        // State labels coincide with output labels when C is the identity;
        // states are always labeled by their position in the state vector.
        for i in 0..self.x.ncols() {
            h.push(format!("x.{}", i + 1));
        }
        for label in &self.output_labels {
            h.push(format!("y.{label}"));
        }
        for label in &self.output_labels {
            h.push(format!("yt.{label}"));
        }
        for bus in &self.load_buses {
            h.push(format!("d.{bus}"));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.headers().join(","))?;
        let mut line = String::new();
        for k in 0..self.n_samples() {
            line.clear();
            line.push_str(&fmt_f64(self.times[k]));
            for v in self.x.row(k) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            for v in self.y.row(k) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            for v in self.y_tilde.row(k) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            for v in self.d.row(k) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Parse a trace written by [`SimulationTrace::write_csv`].
    pub fn parse_csv(text: &str) -> Result<SimulationTrace> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(SimError::Parse {
            line: 1,
            message: "empty trace file".into(),
        })?;
        let headers: Vec<&str> = header.split(',').collect();
        if headers.first() != Some(&"t") {
            return Err(SimError::Parse {
                line: 1,
                message: "trace header must start with `t`".into(),
            });
        }
        let n_x = headers.iter().filter(|h| h.starts_with("x.")).count();
        let output_labels: Vec<String> = headers
            .iter()
            .filter_map(|h| h.strip_prefix("y."))
            .map(str::to_string)
            .collect();
        let load_buses: Vec<u32> = headers
            .iter()
            .filter_map(|h| h.strip_prefix("d."))
            .map(|b| {
                b.parse::<u32>().map_err(|_| SimError::Parse {
                    line: 1,
                    message: format!("bad disturbance column `d.{b}`"),
                })
            })
            .collect::<Result<_>>()?;
        let n_y = output_labels.len();
        let n_d = load_buses.len();
        let expected = 1 + n_x + 2 * n_y + n_d;
        if headers.len() != expected {
            return Err(SimError::Parse {
                line: 1,
                message: format!("expected {expected} columns, found {}", headers.len()),
            });
        }

        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut yts = Vec::new();
        let mut ds = Vec::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut fields = raw.split(',');
            let mut next = |what: &str| -> Result<f64> {
                let tok = fields.next().ok_or_else(|| SimError::Parse {
                    line: line_no,
                    message: format!("missing {what} field"),
                })?;
                tok.parse::<f64>().map_err(|_| SimError::Parse {
                    line: line_no,
                    message: format!("cannot parse `{tok}`"),
                })
            };
            times.push(next("time")?);
            for _ in 0..n_x {
                xs.push(next("state")?);
            }
            for _ in 0..n_y {
                ys.push(next("output")?);
            }
            for _ in 0..n_y {
                yts.push(next("received")?);
            }
            for _ in 0..n_d {
                ds.push(next("disturbance")?);
            }
            if fields.next().is_some() {
                return Err(SimError::Parse {
                    line: line_no,
                    message: "trailing fields".into(),
                });
            }
        }

        let rows = times.len();
        let build = |data: Vec<f64>, cols: usize| {
            Array2::from_shape_vec((rows, cols), data).map_err(|_| SimError::Parse {
                line: 1,
                message: "inconsistent row lengths".into(),
            })
        };
        Ok(SimulationTrace {
            times: Array1::from_vec(times),
            x: build(xs, n_x)?,
            y: build(ys, n_y)?,
            y_tilde: build(yts, n_y)?,
            d: build(ds, n_d)?,
            output_labels,
            load_buses,
        })
    }
}
