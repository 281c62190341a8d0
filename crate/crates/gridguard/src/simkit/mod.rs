//! Time-domain simulation of the closed-loop grid under load disturbances,
//! measurement-side attack injection, and optional Gaussian measurement
//! noise.
//!
//! Attacks corrupt only the measurement stream; the physical trajectory is
//! the same with or without them, which is what lets an attack-free shadow
//! run serve as the calibration reference for detection thresholds.

mod scenario;
mod trace;

pub use scenario::{
    parse_scenario, parse_scenario_str, serialize_scenario, AttackKind, AttackWindow, LoadEvent,
    ScenarioSpec,
};
pub use trace::SimulationTrace;

use ndarray::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::gridmodel::{dc_power_flow, linearize, GridCase, LinearModel, ModelError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown attack target `{0}`")]
    UnknownTarget(String),

    #[error("load event references bus {0}, which is not a load bus")]
    UnknownBus(u32),

    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::textio::TextError> for SimError {
    fn from(e: crate::textio::TextError) -> Self {
        SimError::Parse { line: e.line, message: e.message }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

/// One explicit fourth-order Runge-Kutta step of `x' = A x + G d` with the
/// disturbance held constant over the step.
pub fn step_dynamics(
    x: &Array1<f64>,
    d: &Array1<f64>,
    model: &LinearModel,
    dt: f64,
) -> Result<Array1<f64>> {
    let gd = model.g.dot(d);
    let k1 = model.a_cl.dot(x) + &gd;
    let k2 = model.a_cl.dot(&(x + &(&k1 * (dt / 2.0)))) + &gd;
    let k3 = model.a_cl.dot(&(x + &(&k2 * (dt / 2.0)))) + &gd;
    let k4 = model.a_cl.dot(&(x + &(&k3 * dt))) + &gd;
    let next = x + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: f64::NAN });
    }
    Ok(next)
}

/// Piecewise-constant load deviation profile compiled against a case.
#[derive(Debug, Clone)]
pub struct LoadProfile {
    /// (time, channel, level) in event order.
    events: Vec<(f64, usize, f64)>,
    n_l: usize,
}

impl LoadProfile {
    pub fn new(spec: &ScenarioSpec, case: &GridCase) -> Result<Self> {
        let mut events = Vec::with_capacity(spec.load_events.len());
        for ev in &spec.load_events {
            let channel = case.load_channel(ev.bus).ok_or(SimError::UnknownBus(ev.bus))?;
            events.push((ev.time, channel, ev.delta));
        }
        Ok(LoadProfile { events, n_l: case.n_loads() })
    }

    /// Deviation vector at time `t`: each event sets its bus's level from its
    /// time onward.
    pub fn eval(&self, t: f64) -> Array1<f64> {
        let mut d = Array1::<f64>::zeros(self.n_l);
        for &(time, channel, level) in &self.events {
            if time <= t {
                d[channel] = level;
            }
        }
        d
    }
}

/// Attack script with targets resolved to measurement indices.
#[derive(Debug, Clone)]
pub struct CompiledAttacks {
    windows: Vec<(f64, f64, usize, AttackKind, f64)>,
}

impl CompiledAttacks {
    pub fn new(spec: &ScenarioSpec, model: &LinearModel) -> Result<Self> {
        let mut windows = Vec::with_capacity(spec.attacks.len());
        for atk in &spec.attacks {
            let idx = model
                .output_index(&atk.target)
                .ok_or_else(|| SimError::UnknownTarget(atk.target.clone()))?;
            windows.push((atk.start, atk.start + atk.duration, idx, atk.kind, atk.magnitude));
        }
        Ok(CompiledAttacks { windows })
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Injected signal at time `t` given the true outputs: scale attacks add
    /// `magnitude * y[target]`, bias attacks add `magnitude`.
    pub fn inject(&self, y: &Array1<f64>, t: f64) -> Array1<f64> {
        let mut y_a = Array1::<f64>::zeros(y.len());
        for &(start, end, idx, kind, magnitude) in &self.windows {
            if t >= start && t < end {
                match kind {
                    AttackKind::Scale => y_a[idx] += magnitude * y[idx],
                    AttackKind::Bias => y_a[idx] += magnitude,
                }
            }
        }
        y_a
    }

    /// True when `t` lies inside any attack window.
    pub fn active(&self, t: f64) -> bool {
        self.windows.iter().any(|&(s, e, ..)| t >= s && t < e)
    }
}

/// Add independent zero-mean Gaussian noise per channel. A zero standard
/// deviation is an exact identity and consumes no randomness.
pub fn add_noise<R: Rng>(y: &Array1<f64>, noise_std: f64, rng: &mut R) -> Array1<f64> {
    if noise_std == 0.0 {
        return y.clone();
    }
    y.mapv(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal))
}

/// Build the physics model for a scenario: the case linearized at the
/// scenario's loading.
pub fn build_model(case: &GridCase, spec: &ScenarioSpec) -> Result<LinearModel> {
    let demand: Vec<f64> =
        case.nominal_demand().iter().map(|d| d * spec.loading_scale).collect();
    let op = dc_power_flow(case, &demand, &spec.loading_label)?;
    Ok(linearize(case, &op)?)
}

/// Simulation knobs that deviate from the scenario file.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Apply the attack script (disable for shadow/calibration runs).
    pub include_attacks: bool,
    /// Noise seed; calibration runs use a derived seed so their noise
    /// realization is held out from the evaluated run.
    pub seed: u64,
}

impl SimOptions {
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        SimOptions { include_attacks: true, seed: spec.seed }
    }
}

/// Run a scenario end to end and record the full trace.
pub fn simulate_scenario(case: &GridCase, spec: &ScenarioSpec) -> Result<SimulationTrace> {
    let model = build_model(case, spec)?;
    simulate_with(case, spec, &model, SimOptions::from_spec(spec))
}

/// Run a scenario against a prebuilt physics model.
pub fn simulate_with(
    case: &GridCase,
    spec: &ScenarioSpec,
    model: &LinearModel,
    opts: SimOptions,
) -> Result<SimulationTrace> {
    spec.validate()?;
    let profile = LoadProfile::new(spec, case)?;
    let attacks = CompiledAttacks::new(spec, model)?;
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);

    let steps = (spec.duration / spec.dt).round() as usize;
    let samples = steps + 1;
    let n = model.n;
    let l = model.n_outputs();
    let n_l = model.n_l;

    let mut times = Array1::<f64>::zeros(samples);
    let mut xs = Array2::<f64>::zeros((samples, n));
    let mut ys = Array2::<f64>::zeros((samples, l));
    let mut yts = Array2::<f64>::zeros((samples, l));
    let mut ds = Array2::<f64>::zeros((samples, n_l));

    let mut x = Array1::<f64>::zeros(n);
    for k in 0..samples {
        let t = k as f64 * spec.dt;
        let d = profile.eval(t);
        let y = model.c.dot(&x);
        let y_a = if opts.include_attacks {
            attacks.inject(&y, t)
        } else {
            Array1::zeros(l)
        };
        let y_tilde = add_noise(&(&y + &y_a), spec.noise_std, &mut rng);

        times[k] = t;
        xs.row_mut(k).assign(&x);
        ys.row_mut(k).assign(&y);
        yts.row_mut(k).assign(&y_tilde);
        ds.row_mut(k).assign(&d);

        if k + 1 < samples {
            x = step_dynamics(&x, &d, model, spec.dt).map_err(|e| match e {
                SimError::NonFinite { .. } => SimError::NonFinite { t },
                other => other,
            })?;
        }
    }

    Ok(SimulationTrace {
        times,
        x: xs,
        y: ys,
        y_tilde: yts,
        d: ds,
        output_labels: model.output_labels.clone(),
        load_buses: case.loads.iter().map(|ld| ld.bus).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmodel::parse_case_str;
    use approx::assert_abs_diff_eq;

    fn toy_case() -> GridCase {
        parse_case_str(
            "[system]\nbase_mva 100\n\
             [bus]\n1 generator\n2 load\n\
             [branch]\n1 2 10\n\
             [generator]\n1 5 1.2 1 0.3 0.25 1 0.04 2\n\
             [load]\n2 2.5 0.9 1\n",
        )
        .unwrap()
    }

    fn toy_scenario() -> ScenarioSpec {
        let mut spec = ScenarioSpec::default_for_case("toy.case");
        spec.duration = 10.0;
        spec.dt = 0.01;
        spec.load_events = vec![LoadEvent { time: 1.0, bus: 2, delta: 0.3 }];
        spec
    }

    #[test]
    fn equilibrium_stays_at_zero() {
        let case = toy_case();
        let spec = {
            let mut s = toy_scenario();
            s.load_events.clear();
            s
        };
        let trace = simulate_scenario(&case, &spec).unwrap();
        assert!(trace.x.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(trace.y, trace.y_tilde);
    }

    #[test]
    fn scalar_decay_matches_analytic() {
        // x' = -x via a hand-built 1-state "model".
        let model = {
            let case = toy_case();
            let spec = toy_scenario();
            let mut m = build_model(&case, &spec).unwrap();
            m.a_cl = array![[-1.0]];
            m.g = Array2::zeros((1, 1));
            m.c = Array2::eye(1);
            m.n = 1;
            m
        };
        let mut x = array![1.0];
        let d = array![0.0];
        for _ in 0..100 {
            x = step_dynamics(&x, &d, &model, 0.01).unwrap();
        }
        assert_abs_diff_eq!(x[0], (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn load_profile_piecewise_levels() {
        let case = toy_case();
        let mut spec = toy_scenario();
        spec.duration = 300.0;
        spec.load_events = vec![
            LoadEvent { time: 20.0, bus: 2, delta: 0.5 },
            LoadEvent { time: 200.0, bus: 2, delta: 0.0 },
        ];
        let profile = LoadProfile::new(&spec, &case).unwrap();
        assert_eq!(profile.eval(10.0)[0], 0.0);
        assert_eq!(profile.eval(100.0)[0], 0.5);
        assert_eq!(profile.eval(250.0)[0], 0.0);
    }

    #[test]
    fn unknown_event_bus_rejected() {
        let case = toy_case();
        let mut spec = toy_scenario();
        spec.load_events = vec![LoadEvent { time: 1.0, bus: 99, delta: 0.1 }];
        assert!(matches!(
            simulate_scenario(&case, &spec),
            Err(SimError::UnknownBus(99))
        ));
    }

    #[test]
    fn scale_and_bias_attacks() {
        let case = toy_case();
        let mut spec = toy_scenario();
        spec.attacks = vec![
            AttackWindow {
                start: 2.0,
                duration: 1.0,
                target: "PG1".into(),
                kind: AttackKind::Scale,
                magnitude: 0.1,
            },
            AttackWindow {
                start: 5.0,
                duration: 1.0,
                target: "wL1".into(),
                kind: AttackKind::Bias,
                magnitude: 0.02,
            },
        ];
        let model = build_model(&case, &spec).unwrap();
        let attacks = CompiledAttacks::new(&spec, &model).unwrap();
        let y = Array1::from_elem(model.n_outputs(), 1.0);
        let pg1 = model.output_index("PG1").unwrap();
        let wl1 = model.output_index("wL1").unwrap();

        let ya = attacks.inject(&y, 2.5);
        assert_abs_diff_eq!(ya[pg1], 0.1);
        assert_eq!(ya.iter().filter(|v| **v != 0.0).count(), 1);

        let ya = attacks.inject(&y, 5.5);
        assert_abs_diff_eq!(ya[wl1], 0.02);

        let ya = attacks.inject(&y, 4.0);
        assert!(ya.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unknown_attack_target_rejected() {
        let case = toy_case();
        let mut spec = toy_scenario();
        spec.attacks = vec![AttackWindow {
            start: 1.0,
            duration: 1.0,
            target: "PG9".into(),
            kind: AttackKind::Scale,
            magnitude: 0.1,
        }];
        assert!(matches!(
            simulate_scenario(&case, &spec),
            Err(SimError::UnknownTarget(_))
        ));
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let y = Array1::<f64>::zeros(1);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut samples = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            samples.push(add_noise(&y, 1e-3, &mut rng)[0]);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / samples.len() as f64;
        let std = var.sqrt();
        assert!((std - 1e-3).abs() / 1e-3 < 0.02, "sample std {std}");

        // Same seed, same stream.
        let mut r1 = ChaCha12Rng::seed_from_u64(11);
        let mut r2 = ChaCha12Rng::seed_from_u64(11);
        let y = Array1::from_elem(4, 0.5);
        for _ in 0..10 {
            assert_eq!(add_noise(&y, 0.01, &mut r1), add_noise(&y, 0.01, &mut r2));
        }
    }

    #[test]
    fn superposition_on_linear_model() {
        let case = toy_case();
        let base = toy_scenario();

        let mut s1 = base.clone();
        s1.load_events = vec![LoadEvent { time: 1.0, bus: 2, delta: 0.3 }];
        let mut s2 = base.clone();
        s2.load_events = vec![LoadEvent { time: 4.0, bus: 2, delta: -0.1 }];
        let mut s12 = base.clone();
        s12.load_events = vec![
            LoadEvent { time: 1.0, bus: 2, delta: 0.3 },
            LoadEvent { time: 4.0, bus: 2, delta: 0.2 },
        ];
        // s12's level after t=4 is 0.2 = 0.3 + (-0.1).

        let t1 = simulate_scenario(&case, &s1).unwrap();
        let t2 = simulate_scenario(&case, &s2).unwrap();
        let t12 = simulate_scenario(&case, &s12).unwrap();
        let sum = &t1.x + &t2.x;
        let diff = (&t12.x - &sum).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "superposition violated by {diff}");
    }

    #[test]
    fn steady_state_lies_in_null_direction() {
        // For constant d the residual A x + G d must converge into the zero
        // mode's span, i.e. vanish under the stable-subspace projector.
        let case = toy_case();
        let mut spec = toy_scenario();
        spec.duration = 120.0;
        spec.load_events = vec![LoadEvent { time: 0.0, bus: 2, delta: 0.4 }];
        let model = build_model(&case, &spec).unwrap();
        let trace = simulate_with(&case, &spec, &model, SimOptions::from_spec(&spec)).unwrap();

        let x_end = trace.x.row(trace.x.nrows() - 1).to_owned();
        let d_end = trace.d.row(trace.d.nrows() - 1).to_owned();
        let residual = model.a_cl.dot(&x_end) + model.g.dot(&d_end);
        let projected = model.semistability.stable_projector().dot(&residual);
        let norm = projected.dot(&projected).sqrt();
        assert!(norm < 1e-7, "stable-subspace residual {norm}");
    }
}
