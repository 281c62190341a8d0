//! Dense continuous Lyapunov solver (Bartels-Stewart).
//!
//! `A W + W A^T + Q = 0` is reduced to real Schur form `A = U T U^T`, the
//! transformed equation `T Y + Y T^T = -U^T Q U` is solved by block
//! back-substitution over the 1x1/2x2 diagonal blocks of `T`, and the result
//! is transformed back. Sizes here are modest (n < 100), so a direct dense
//! solve is both the fastest and the most accurate option.

use ndarray::prelude::*;

use super::{MatError, Result};

/// Real Schur decomposition `A = U T U^T` with `U` orthogonal and `T` upper
/// quasi-triangular (LAPACK `dgees`).
pub fn real_schur(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "Schur decomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array2::zeros((0, 0)), Array2::zeros((0, 0))));
    }

    // Column-major copy for LAPACK.
    let mut t: Vec<f64> = a.t().iter().cloned().collect();
    let mut vs = vec![0.0f64; n * n];
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut sdim = 0i32;
    let mut info = 0i32;
    let mut bwork = vec![0i32; n];
    let ni = n as i32;

    unsafe {
        let mut query = [0.0f64];
        lapack::dgees(
            b'V', b'N', None, ni, &mut t, ni, &mut sdim, &mut wr, &mut wi, &mut vs, ni,
            &mut query, -1, &mut bwork, &mut info,
        );
        let lwork = query[0] as i32;
        let mut work = vec![0.0f64; lwork.max(1) as usize];
        lapack::dgees(
            b'V', b'N', None, ni, &mut t, ni, &mut sdim, &mut wr, &mut wi, &mut vs, ni,
            &mut work, lwork, &mut bwork, &mut info,
        );
    }
    if info != 0 {
        return Err(MatError::NumericalFailure(format!(
            "dgees failed to converge (info = {info})"
        )));
    }

    let t = Array2::from_shape_vec((n, n).f(), t)
        .expect("dgees output shape")
        .to_owned();
    let u = Array2::from_shape_vec((n, n).f(), vs)
        .expect("dgees output shape")
        .to_owned();
    Ok((t, u))
}

/// Diagonal block layout of a real quasi-triangular matrix.
fn diagonal_blocks(t: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[[i + 1, i]] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solve the tiny dense system `M x = b` (order <= 4) by Gaussian elimination
/// with partial pivoting.
fn solve_small(m: &mut [[f64; 4]; 4], b: &mut [f64; 4], k: usize) -> Result<()> {
    for col in 0..k {
        let mut piv = col;
        for row in col + 1..k {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return Err(MatError::NumericalFailure(
                "singular block in Lyapunov back-substitution".into(),
            ));
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for c in col..k {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..k).rev() {
        let mut s = b[col];
        for c in col + 1..k {
            s -= m[col][c] * b[c];
        }
        b[col] = s / m[col][col];
    }
    Ok(())
}

/// Solve `T Y + Y T^T + Q = 0` for upper quasi-triangular `T`.
fn solve_schur_form(t: &Array2<f64>, q: &Array2<f64>) -> Result<Array2<f64>> {
    let blocks = diagonal_blocks(t);
    let nb = blocks.len();
    let mut y = Array2::<f64>::zeros(q.raw_dim());

    for pb in (0..nb).rev() {
        for qb in (0..nb).rev() {
            let (ps, pn) = blocks[pb];
            let (qs, qn) = blocks[qb];

            // rhs = -Q_pq - sum_{k>p} T_pk Y_kq - sum_{k>q} Y_pk T_qk^T
            let mut rhs = Array2::<f64>::zeros((pn, qn));
            for i in 0..pn {
                for j in 0..qn {
                    rhs[[i, j]] = -q[[ps + i, qs + j]];
                }
            }
            if ps + pn < t.nrows() {
                let t_right = t.slice(s![ps..ps + pn, ps + pn..]);
                let y_below = y.slice(s![ps + pn.., qs..qs + qn]);
                rhs -= &t_right.dot(&y_below);
            }
            if qs + qn < t.nrows() {
                let y_right = y.slice(s![ps..ps + pn, qs + qn..]);
                let t_block = t.slice(s![qs..qs + qn, qs + qn..]);
                rhs -= &y_right.dot(&t_block.t());
            }

            // Solve T_pp X + X T_qq^T = rhs via the Kronecker form
            // (I (x) T_pp + T_qq (x) I) vec(X) = vec(rhs).
            let k = pn * qn;
            let mut m = [[0.0f64; 4]; 4];
            let mut b = [0.0f64; 4];
            for j in 0..qn {
                for i in 0..pn {
                    let row = j * pn + i;
                    b[row] = rhs[[i, j]];
                    for i2 in 0..pn {
                        m[row][j * pn + i2] += t[[ps + i, ps + i2]];
                    }
                    for j2 in 0..qn {
                        m[row][j2 * pn + i] += t[[qs + j, qs + j2]];
                    }
                }
            }
            solve_small(&mut m, &mut b, k)?;
            for j in 0..qn {
                for i in 0..pn {
                    y[[ps + i, qs + j]] = b[j * pn + i];
                }
            }
        }
    }
    Ok(y)
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solve `A W + W A^T + Q = 0` for Hurwitz `A` and symmetric PSD `Q`.
///
/// The relative residual is verified against `1e-8 * ||Q||_F`; a larger
/// residual is reported as [`MatError::NumericalFailure`].
pub fn solve_lyapunov(a: &Array2<f64>, q: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let q_norm = frob(q);
    if n == 0 || q_norm == 0.0 {
        return Ok(Array2::zeros((n, n)));
    }

    let (t, u) = real_schur(a)?;
    // Eigenvalues come for free from the Schur form; 2x2 blocks have real
    // part equal to half their trace.
    let mut max_re = f64::NEG_INFINITY;
    for (s, w) in diagonal_blocks(&t) {
        let re = if w == 1 { t[[s, s]] } else { 0.5 * (t[[s, s]] + t[[s + 1, s + 1]]) };
        max_re = max_re.max(re);
    }
    if max_re >= 0.0 {
        return Err(MatError::NotHurwitz { max_re });
    }

    let q_t = u.t().dot(q).dot(&u);
    let y = solve_schur_form(&t, &q_t)?;
    let mut w = u.dot(&y).dot(&u.t());
    w = 0.5 * (&w + &w.t());

    let residual = a.dot(&w) + w.dot(&a.t()) + q;
    let rel = frob(&residual) / q_norm;
    if rel > 1e-8 {
        return Err(MatError::NumericalFailure(format!(
            "Lyapunov residual {rel:.3e} exceeds tolerance"
        )));
    }
    Ok(w)
}
