//! Quadrature oracle for reachability Gramians.
//!
//! Integrates `e^{At} G G^T e^{A^T t}` on a uniform grid with the trapezoidal
//! rule. This is deliberately a different computational route from the
//! Lyapunov solver so the two can cross-check each other in tests. For a
//! semistable `A` the caller must project the pair onto the stable subspace
//! first; an integrand that has not decayed by the end of the horizon is
//! reported as [`MatError::HorizonTooShort`].

use ndarray::prelude::*;
use ndarray_linalg::{FactorizeInto, Solve};

use super::{MatError, Result};

/// Ratio of the final integrand norm to the accumulated integral above which
/// the horizon is considered too short.
const TAIL_TOL: f64 = 1e-9;

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn one_norm(a: &Array2<f64>) -> f64 {
    let mut best = 0.0f64;
    for col in a.columns() {
        best = best.max(col.iter().map(|x| x.abs()).sum());
    }
    best
}

/// Matrix exponential by scaling-and-squaring with a degree-13 Pade
/// approximant.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }

    // theta_13 from Higham's scaling analysis.
    const THETA13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a / 2f64.powi(s);

    let eye = Array2::<f64>::eye(n);
    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let u_inner = a6.dot(&(&a6 * B[13] + &a4 * B[11] + &a2 * B[9]))
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &eye * B[1];
    let u = a_scaled.dot(&u_inner);
    let v = a6.dot(&(&a6 * B[12] + &a4 * B[10] + &a2 * B[8]))
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &eye * B[0];

    // (V - U) X = (V + U), solved column by column.
    let lhs = &v - &u;
    let rhs = &v + &u;
    let factored = lhs
        .factorize_into()
        .map_err(|_| MatError::NumericalFailure("Pade denominator is singular".into()))?;
    let mut x = Array2::<f64>::zeros((n, n));
    for (j, col) in rhs.columns().into_iter().enumerate() {
        let sol = factored
            .solve(&col.to_owned())
            .map_err(|_| MatError::NumericalFailure("Pade solve failed".into()))?;
        x.column_mut(j).assign(&sol);
    }

    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}



/// Trapezoidal evaluation of the reachability Gramian integral over
/// `[0, horizon]` with step `dt`.
pub fn oracle_gramian_quadrature(
    a: &Array2<f64>,
    g: &Array2<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || g.nrows() != n {
        return Err(MatError::DimensionMismatch(format!(
            "A is {}x{}, G has {} rows",
            a.nrows(),
            a.ncols(),
            g.nrows()
        )));
    }
    if !(dt > 0.0) || !(horizon > 0.0) || dt > horizon {
        return Err(MatError::DimensionMismatch(format!(
            "invalid quadrature grid: horizon {horizon}, dt {dt}"
        )));
    }

    let steps = (horizon / dt).round().max(1.0) as usize;
    let phi = expm(&(a * dt))?;

    let mut m = g.to_owned();
    let mut f_prev = m.dot(&m.t());
    let mut w = Array2::<f64>::zeros((n, n));
    for _ in 0..steps {
        m = phi.dot(&m);
        let f = m.dot(&m.t());
        w = w + (&f_prev + &f) * (0.5 * dt);
        f_prev = f;
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(MatError::NumericalFailure(
            "quadrature diverged to non-finite values".into(),
        ));
    }

    let tail_ratio = frob(&f_prev) / frob(&w).max(f64::MIN_POSITIVE);
    if tail_ratio > TAIL_TOL {
        return Err(MatError::HorizonTooShort { tail_ratio });
    }
    Ok(w)
}
