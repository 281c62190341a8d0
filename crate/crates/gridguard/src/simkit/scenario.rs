//! Scenario file grammar.
//!
//! ```text
//! [scenario]
//! case cases/rts24.case
//! label high
//! loading 1.2
//! duration 300
//! dt 0.01
//! ed_interval 100
//! safety 1.5
//! seed 42
//! theta 0.005       # optional: omit to pick automatically
//! smoothing 0.5     # optional: residual moving-average window (s)
//!
//! [load_event]
//! # time(s)  bus  level(pu)
//! 20 3 0.5
//! 200 3 0
//!
//! [attack]
//! # start(s)  duration(s)  target  kind(scale|bias)  magnitude
//! 125 5 PG8 scale 0.1
//!
//! [noise]
//! std 0.001
//! ```
//!
//! Load events set the deviation level of a bus from their time onward.

use std::path::{Path, PathBuf};

use super::{Result, SimError};
use crate::textio::{fmt_f64, parse_sections};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Scale,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEvent {
    pub time: f64,
    pub bus: u32,
    /// Deviation level (p.u.) the bus holds from `time` onward.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackWindow {
    pub start: f64,
    pub duration: f64,
    /// Measurement label, e.g. `PG8`.
    pub target: String,
    pub kind: AttackKind,
    /// Scale factor for `scale`, additive offset (p.u.) for `bias`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Case path as written in the file (resolve against the scenario's
    /// directory with [`ScenarioSpec::resolve_case_path`]).
    pub case_path: String,
    pub loading_label: String,
    /// Multiplier applied to the case's nominal demand.
    pub loading_scale: f64,
    pub load_events: Vec<LoadEvent>,
    pub attacks: Vec<AttackWindow>,
    pub noise_std: f64,
    pub duration: f64,
    pub dt: f64,
    /// Operating-point refresh period (re-dispatch, re-cluster).
    pub ed_interval: f64,
    /// Clustering coarseness; `None` selects it automatically.
    pub theta: Option<f64>,
    /// Threshold calibration safety factor.
    pub safety: f64,
    pub seed: u64,
    /// Residual moving-average window in seconds; `None` disables smoothing.
    pub smoothing: Option<f64>,
}

impl ScenarioSpec {
    pub fn default_for_case(case_path: &str) -> Self {
        ScenarioSpec {
            case_path: case_path.to_string(),
            loading_label: "nominal".into(),
            loading_scale: 1.0,
            load_events: Vec::new(),
            attacks: Vec::new(),
            noise_std: 0.0,
            duration: 300.0,
            dt: 0.01,
            ed_interval: 100.0,
            theta: None,
            safety: 1.5,
            seed: 0,
            smoothing: None,
        }
    }

    pub fn resolve_case_path(&self, scenario_path: &Path) -> PathBuf {
        let case = Path::new(&self.case_path);
        if case.is_absolute() {
            case.to_path_buf()
        } else {
            scenario_path.parent().unwrap_or(Path::new(".")).join(case)
        }
    }

    pub fn has_attacks(&self) -> bool {
        !self.attacks.is_empty()
    }

    /// Smoothing window expressed in control steps.
    pub fn smoothing_steps(&self) -> Option<usize> {
        self.smoothing.map(|w| ((w / self.dt).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.case_path.is_empty() {
            return Err(SimError::Validation("missing case path".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.02) {
            return Err(SimError::Validation(format!(
                "dt must lie in (0, 0.02], got {}",
                self.dt
            )));
        }
        if !(self.duration > 0.0) {
            return Err(SimError::Validation("duration must be positive".into()));
        }
        if !(self.ed_interval > 0.0) {
            return Err(SimError::Validation("ed_interval must be positive".into()));
        }
        if !(self.loading_scale > 0.0) {
            return Err(SimError::Validation("loading scale must be positive".into()));
        }
        if self.safety < 1.0 {
            return Err(SimError::Validation("safety factor must be at least 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(SimError::Validation("noise std must be nonnegative".into()));
        }
        if let Some(theta) = self.theta {
            if theta < 0.0 {
                return Err(SimError::Validation("theta must be nonnegative".into()));
            }
        }
        if let Some(w) = self.smoothing {
            if !(w > 0.0) {
                return Err(SimError::Validation("smoothing window must be positive".into()));
            }
        }
        let mut last = f64::NEG_INFINITY;
        let mut last_end = 0.0f64;
        for ev in &self.load_events {
            if ev.time < last {
                return Err(SimError::Validation("load events must be time-ordered".into()));
            }
            last = ev.time;
            last_end = last_end.max(ev.time);
        }
        let mut last = f64::NEG_INFINITY;
        for atk in &self.attacks {
            if atk.start < last {
                return Err(SimError::Validation("attack windows must be time-ordered".into()));
            }
            if !(atk.duration > 0.0) {
                return Err(SimError::Validation("attack duration must be positive".into()));
            }
            last = atk.start;
            last_end = last_end.max(atk.start + atk.duration);
        }
        if self.duration < last_end {
            return Err(SimError::Validation(format!(
                "duration {} ends before the last event at {}",
                self.duration, last_end
            )));
        }
        Ok(())
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioSpec> {
    let sections = parse_sections(text)?;
    let mut spec = ScenarioSpec::default_for_case("");
    let mut saw_scenario = false;

    for section in &sections {
        match section.name.as_str() {
            "scenario" => {
                saw_scenario = true;
                for rec in &section.records {
                    let key = rec.str(0, "key")?;
                    match key {
                        "case" => {
                            rec.expect_len(2, "case")?;
                            spec.case_path = rec.str(1, "case path")?.to_string();
                        }
                        "label" => {
                            rec.expect_len(2, "label")?;
                            spec.loading_label = rec.str(1, "label")?.to_string();
                        }
                        "loading" => {
                            rec.expect_len(2, "loading")?;
                            spec.loading_scale = rec.f64(1, "loading scale")?;
                        }
                        "duration" => {
                            rec.expect_len(2, "duration")?;
                            spec.duration = rec.f64(1, "duration")?;
                        }
                        "dt" => {
                            rec.expect_len(2, "dt")?;
                            spec.dt = rec.f64(1, "dt")?;
                        }
                        "ed_interval" => {
                            rec.expect_len(2, "ed_interval")?;
                            spec.ed_interval = rec.f64(1, "ed_interval")?;
                        }
                        "theta" => {
                            rec.expect_len(2, "theta")?;
                            spec.theta = Some(rec.f64(1, "theta")?);
                        }
                        "safety" => {
                            rec.expect_len(2, "safety")?;
                            spec.safety = rec.f64(1, "safety")?;
                        }
                        "seed" => {
                            rec.expect_len(2, "seed")?;
                            spec.seed = rec.u64(1, "seed")?;
                        }
                        "smoothing" => {
                            rec.expect_len(2, "smoothing")?;
                            spec.smoothing = Some(rec.f64(1, "smoothing")?);
                        }
                        other => {
                            return Err(SimError::Parse {
                                line: rec.line,
                                message: format!("unknown [scenario] key `{other}`"),
                            })
                        }
                    }
                }
            }
            "load_event" => {
                for rec in &section.records {
                    rec.expect_len(3, "load_event")?;
                    spec.load_events.push(LoadEvent {
                        time: rec.f64(0, "time")?,
                        bus: rec.u32(1, "bus")?,
                        delta: rec.f64(2, "level")?,
                    });
                }
            }
            "attack" => {
                for rec in &section.records {
                    rec.expect_len(5, "attack")?;
                    let kind = match rec.str(3, "kind")? {
                        "scale" => AttackKind::Scale,
                        "bias" => AttackKind::Bias,
                        other => {
                            return Err(SimError::Parse {
                                line: rec.line,
                                message: format!("unknown attack kind `{other}`"),
                            })
                        }
                    };
                    spec.attacks.push(AttackWindow {
                        start: rec.f64(0, "start")?,
                        duration: rec.f64(1, "duration")?,
                        target: rec.str(2, "target")?.to_string(),
                        kind,
                        magnitude: rec.f64(4, "magnitude")?,
                    });
                }
            }
            "noise" => {
                for rec in &section.records {
                    match rec.str(0, "key")? {
                        "std" => {
                            rec.expect_len(2, "std")?;
                            spec.noise_std = rec.f64(1, "std")?;
                        }
                        other => {
                            return Err(SimError::Parse {
                                line: rec.line,
                                message: format!("unknown [noise] key `{other}`"),
                            })
                        }
                    }
                }
            }
            other => {
                return Err(SimError::Parse {
                    line: section.line,
                    message: format!("unknown section [{other}] in scenario file"),
                })
            }
        }
    }

    if !saw_scenario {
        return Err(SimError::Parse { line: 1, message: "missing [scenario] section".into() });
    }
    spec.validate()?;
    Ok(spec)
}

pub fn serialize_scenario(spec: &ScenarioSpec) -> String {
    let mut out = String::new();
    out.push_str("[scenario]\n");
    out.push_str(&format!("case {}\n", spec.case_path));
    out.push_str(&format!("label {}\n", spec.loading_label));
    out.push_str(&format!("loading {}\n", fmt_f64(spec.loading_scale)));
    out.push_str(&format!("duration {}\n", fmt_f64(spec.duration)));
    out.push_str(&format!("dt {}\n", fmt_f64(spec.dt)));
    out.push_str(&format!("ed_interval {}\n", fmt_f64(spec.ed_interval)));
    if let Some(theta) = spec.theta {
        out.push_str(&format!("theta {}\n", fmt_f64(theta)));
    }
    out.push_str(&format!("safety {}\n", fmt_f64(spec.safety)));
    out.push_str(&format!("seed {}\n", spec.seed));
    if let Some(w) = spec.smoothing {
        out.push_str(&format!("smoothing {}\n", fmt_f64(w)));
    }

    if !spec.load_events.is_empty() {
        out.push_str("\n[load_event]\n# time(s)  bus  level(pu)\n");
        for ev in &spec.load_events {
            out.push_str(&format!("{} {} {}\n", fmt_f64(ev.time), ev.bus, fmt_f64(ev.delta)));
        }
    }
    if !spec.attacks.is_empty() {
        out.push_str("\n[attack]\n# start(s)  duration(s)  target  kind  magnitude\n");
        for atk in &spec.attacks {
            let kind = match atk.kind {
                AttackKind::Scale => "scale",
                AttackKind::Bias => "bias",
            };
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                fmt_f64(atk.start),
                fmt_f64(atk.duration),
                atk.target,
                kind,
                fmt_f64(atk.magnitude)
            ));
        }
    }
    out.push_str("\n[noise]\n");
    out.push_str(&format!("std {}\n", fmt_f64(spec.noise_std)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScenarioSpec {
        let mut spec = ScenarioSpec::default_for_case("cases/rts24.case");
        spec.loading_label = "high".into();
        spec.loading_scale = 1.2;
        spec.seed = 42;
        spec.theta = Some(5e-3);
        spec.load_events = vec![
            LoadEvent { time: 20.0, bus: 3, delta: 0.5 },
            LoadEvent { time: 200.0, bus: 3, delta: 0.0 },
        ];
        spec.attacks = (0..6)
            .map(|j| AttackWindow {
                start: 125.0 + 10.0 * j as f64,
                duration: 5.0,
                target: "PG8".into(),
                kind: AttackKind::Scale,
                magnitude: 0.1,
            })
            .collect();
        spec
    }

    #[test]
    fn round_trip_is_identity() {
        let spec = sample();
        let text = serialize_scenario(&spec);
        let back = parse_scenario_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(serialize_scenario(&back), text);
    }

    #[test]
    fn attack_windows_cover_expected_span() {
        // Six 5 s windows with 5 s gaps: active 30 s inside a 55 s span.
        let spec = sample();
        let first = spec.attacks.first().unwrap().start;
        let last = spec.attacks.last().unwrap();
        assert_eq!(first, 125.0);
        assert_eq!(last.start + last.duration, 180.0);
        let active: f64 = spec.attacks.iter().map(|a| a.duration).sum();
        assert_eq!(active, 30.0);
        assert_eq!(last.start + last.duration - first, 55.0);
    }

    #[test]
    fn validation_catches_bad_dt() {
        let mut spec = sample();
        spec.dt = 0.1;
        assert!(matches!(spec.validate(), Err(SimError::Validation(_))));
    }

    #[test]
    fn validation_catches_short_duration() {
        let mut spec = sample();
        spec.duration = 100.0;
        assert!(matches!(spec.validate(), Err(SimError::Validation(_))));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_scenario_str("[scenario]\ncase x\nwibble 3\n").unwrap_err();
        match err {
            SimError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected: {other}"),
        }
    }
}
