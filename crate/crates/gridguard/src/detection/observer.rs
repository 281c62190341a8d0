//! Baseline Luenberger observer.
//!
//! The classical dynamic detector estimates the state from received
//! measurements and flags a nonzero residual. Against load disturbances this
//! fails structurally: a persistent disturbance drives the error system to a
//! nonzero steady state even without any attack, so the residual cannot
//! separate the two. The observer here exists to make that comparison
//! reproducible.

use ndarray::prelude::*;
use ndarray_linalg::{Eig, Inverse, Solve};

use super::{DetectError, Result};
use crate::gridmodel::LinearModel;

/// Luenberger observer with gain from modal pole placement.
#[derive(Debug, Clone)]
pub struct LuenbergerObserver {
    /// Error dynamics matrix `A - L C`, Hurwitz by construction.
    pub a_obs: Array2<f64>,
    /// Observer gain, `n x l`.
    pub l_gain: Array2<f64>,
    c: Array2<f64>,
    /// Current state estimate.
    pub x_hat: Array1<f64>,
}

impl LuenbergerObserver {
    /// Design the gain by reassigning every eigenvalue of the closed-loop
    /// matrix to the real ladder `first_pole - spacing * k` while keeping the
    /// eigenvector structure. Requires full state measurement (`C` square and
    /// invertible) so the placement is exact; the structural zero mode is
    /// moved along with the rest, otherwise the error dynamics would not be
    /// Hurwitz and the steady-state error under a persistent disturbance
    /// would be undefined.
    pub fn design(model: &LinearModel, first_pole: f64, spacing: f64) -> Result<Self> {
        let n = model.n;
        if model.n_outputs() != n {
            return Err(DetectError::Mismatch(
                "observer design requires full state measurement (C square)".into(),
            ));
        }
        if !(first_pole < 0.0 && spacing > 0.0) {
            return Err(DetectError::Mismatch(
                "observer poles must be negative with positive spacing".into(),
            ));
        }

        let decomp = &model.semistability;
        let mut u = Array2::<f64>::zeros((n, n));
        u.column_mut(0).assign(&decomp.u_max);
        u.slice_mut(s![.., 1..]).assign(&decomp.u_bar);
        let u_inv = u
            .inv()
            .map_err(|_| DetectError::Mismatch("eigenvector basis is singular".into()))?;

        let mut target = Array2::<f64>::zeros((n, n));
        for k in 0..n {
            target[[k, k]] = first_pole - spacing * k as f64;
        }
        let a_des = u.dot(&target).dot(&u_inv);

        // A - L C = A_des  =>  L = (A - A_des) C^-1.
        let c_inv = model
            .c
            .inv()
            .map_err(|_| DetectError::Mismatch("output map is not invertible".into()))?;
        let l_gain = (&model.a_cl - &a_des).dot(&c_inv);
        let a_obs = &model.a_cl - &l_gain.dot(&model.c);

        let (eigs, _) = a_obs.eig().map_err(crate::matcore::MatError::from)?;
        let max_re = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        if max_re >= 0.0 {
            return Err(DetectError::Mismatch(format!(
                "observer error dynamics not Hurwitz (max Re {max_re:.3e})"
            )));
        }

        Ok(LuenbergerObserver {
            a_obs,
            l_gain,
            c: model.c.clone(),
            x_hat: Array1::zeros(n),
        })
    }

    pub fn with_initial_state(mut self, x0: Array1<f64>) -> Self {
        self.x_hat = x0;
        self
    }

    /// One RK4 step of `x_hat' = (A - L C) x_hat + L y_tilde` with the
    /// measurement held constant over the step.
    pub fn step(&mut self, y_tilde: &ArrayView1<f64>, dt: f64) {
        let ly = self.l_gain.dot(y_tilde);
        let k1 = self.a_obs.dot(&self.x_hat) + &ly;
        let k2 = self.a_obs.dot(&(&self.x_hat + &(&k1 * (dt / 2.0)))) + &ly;
        let k3 = self.a_obs.dot(&(&self.x_hat + &(&k2 * (dt / 2.0)))) + &ly;
        let k4 = self.a_obs.dot(&(&self.x_hat + &(&k3 * dt))) + &ly;
        self.x_hat = &self.x_hat + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    }

    /// Residual `r_c = C x_hat - y_tilde`.
    pub fn residual(&self, y_tilde: &ArrayView1<f64>) -> Array1<f64> {
        &self.c.dot(&self.x_hat) - y_tilde
    }
}

/// Steady-state observer residual under a constant disturbance:
/// `C (A - L C)^{-1} G d`.
pub fn observer_steady_residual(
    obs: &LuenbergerObserver,
    model: &LinearModel,
    d: &Array1<f64>,
) -> Result<Array1<f64>> {
    let gd = model.g.dot(d);
    let e_star = obs
        .a_obs
        .solve(&gd)
        .map_err(|_| DetectError::Mismatch("observer dynamics singular".into()))?;
    Ok(obs.c.dot(&e_star))
}
