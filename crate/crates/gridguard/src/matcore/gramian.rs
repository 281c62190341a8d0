//! Reachability Gramians and PSD factorization.

use ndarray::prelude::*;
use ndarray_linalg::EigValsh;

use super::{decompose_semistable, solve_lyapunov, MatError, Result};

/// Reachability Gramian with its low-rank factor.
///
/// `w_c = w_l * w_l^T` with `w_l` of full column rank `rank`. For a
/// semistable system `w_c` is singular by construction (the zero mode is
/// projected out), which is why the factor is produced by pivoted Cholesky
/// with rank truncation rather than a plain Cholesky.
#[derive(Debug, Clone)]
pub struct Gramian {
    /// Symmetric PSD Gramian, `n x n`.
    pub w_c: Array2<f64>,
    /// Factor with `w_c = w_l w_l^T`, `n x rank`.
    pub w_l: Array2<f64>,
    /// Numerical rank of `w_c`.
    pub rank: usize,
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pivoted Cholesky factorization of a symmetric PSD matrix.
///
/// Returns `(f, rank)` with `f * f^T = w` up to the truncation level
/// `1e-10 * trace(w)`. Columns follow the pivot order (largest remaining
/// diagonal first), which makes the factor deterministic. Indefinite input
/// (an eigenvalue below `-1e-8 * ||w||`) is rejected.
pub fn psd_factor(w: &Array2<f64>) -> Result<(Array2<f64>, usize)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "PSD factorization needs a square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array2::zeros((0, 0)), 0));
    }

    let eigs = w.eigvalsh(ndarray_linalg::UPLO::Lower)?;
    let max_abs = eigs.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-8 * max_abs {
        return Err(MatError::NotPsd { min_eig });
    }

    let trace: f64 = w.diag().sum();
    let threshold = 1e-10 * trace.max(0.0);

    // Left-looking outer-product Cholesky with diagonal pivoting; `perm[k]`
    // is the original index factored at step k.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag: Vec<f64> = w.diag().to_vec();
    let mut l = Array2::<f64>::zeros((n, n));
    let mut rank = n;
    for k in 0..n {
        let mut best = k;
        for j in k + 1..n {
            if diag[perm[j]] > diag[perm[best]] {
                best = j;
            }
        }
        perm.swap(k, best);
        let pk = perm[k];
        let pivot = diag[pk];
        if pivot <= threshold {
            rank = k;
            break;
        }
        let root = pivot.sqrt();
        l[[pk, k]] = root;
        for j in k + 1..n {
            let pj = perm[j];
            let mut s = w[[pj, pk]];
            for m in 0..k {
                s -= l[[pj, m]] * l[[pk, m]];
            }
            let val = s / root;
            l[[pj, k]] = val;
            diag[pj] -= val * val;
        }
    }

    Ok((l.slice(s![.., ..rank]).to_owned(), rank))
}

/// Reachability Gramian of a semistable pair `(A, G)`.
///
/// The dynamics are projected onto the stable eigenspace
/// (`a_bar = v_bar^T A u_bar`, `g_bar = v_bar^T G`), the projected Lyapunov
/// equation is solved there, and the result is lifted back through the right
/// eigenvectors as `w_c = u_bar w_bar u_bar^T`. The lift must use `u_bar`:
/// in stable modal coordinates `z = v_bar^T x` the response is
/// `x(t) = u_bar z(t)`, so the state-space Gramian is the `u_bar`-congruence
/// of the modal one. (For normal matrices `u_bar = v_bar` and the
/// distinction disappears.)
pub fn semistable_gramian(
    a: &Array2<f64>,
    g: &Array2<f64>,
    zero_tol: Option<f64>,
) -> Result<Gramian> {
    if g.nrows() != a.nrows() {
        return Err(MatError::DimensionMismatch(format!(
            "A is {}x{} but G has {} rows",
            a.nrows(),
            a.ncols(),
            g.nrows()
        )));
    }
    let decomp = decompose_semistable(a, zero_tol)?;
    let a_bar = decomp.v_bar.t().dot(a).dot(&decomp.u_bar);
    let g_bar = decomp.v_bar.t().dot(g);
    let q = g_bar.dot(&g_bar.t());
    let w_bar = solve_lyapunov(&a_bar, &q)?;
    let mut w_c = decomp.u_bar.dot(&w_bar).dot(&decomp.u_bar.t());
    w_c = 0.5 * (&w_c + &w_c.t());
    let (w_l, rank) = psd_factor(&w_c)?;
    Ok(Gramian { w_c, w_l, rank })
}

/// Reachability Gramian of a Hurwitz pair `(A, G)` via the plain Lyapunov
/// equation, factored the same way as the semistable variant.
pub fn gramian_hurwitz(a: &Array2<f64>, g: &Array2<f64>) -> Result<Gramian> {
    if g.nrows() != a.nrows() {
        return Err(MatError::DimensionMismatch(format!(
            "A is {}x{} but G has {} rows",
            a.nrows(),
            a.ncols(),
            g.nrows()
        )));
    }
    let q = g.dot(&g.t());
    let w_c = solve_lyapunov(a, &q)?;
    let (w_l, rank) = psd_factor(&w_c)?;
    Ok(Gramian { w_c, w_l, rank })
}

/// Total output energy `trace(C W_c C^T)`, equal to the sum of squared
/// H2 norms of the rows of the output map.
pub fn output_energy(c: &Array2<f64>, w_c: &Array2<f64>) -> f64 {
    c.dot(w_c).dot(&c.t()).diag().sum()
}
