//! Spectral decomposition of semistable matrices.

use ndarray::prelude::*;
use ndarray_linalg::{Eig, Inverse, SVD};
use num_complex::Complex64;

use super::{MatError, Result};

/// Eigenstructure of a semistable matrix, split into the single zero mode and
/// the Hurwitz remainder.
///
/// Complex conjugate eigenpairs are kept in real block form: a pair
/// `alpha ± i*beta` occupies two adjacent columns of `u_bar`/`v_bar` and a
/// `[[alpha, beta], [-beta, alpha]]` block in `lambda_bar`, so every stored
/// matrix is real. Eigenvalues are ordered by descending real part, then
/// descending imaginary part, which makes the factors (and everything derived
/// from them) reproducible run to run.
#[derive(Debug, Clone)]
pub struct SemistableDecomposition {
    /// Right eigenvector of the zero eigenvalue, unit norm.
    pub u_max: Array1<f64>,
    /// Left eigenvector of the zero eigenvalue, unit norm.
    pub v_max: Array1<f64>,
    /// Right eigenvectors of the stable part, `n x (n-1)`.
    pub u_bar: Array2<f64>,
    /// Left eigenvectors of the stable part, `n x (n-1)`, dual to `u_bar`
    /// (`v_bar^T u_bar = I`).
    pub v_bar: Array2<f64>,
    /// Stable eigenvalues in real block-diagonal form, `(n-1) x (n-1)`.
    pub lambda_bar: Array2<f64>,
    /// Stable eigenvalues as complex numbers, in storage order.
    pub stable_eigenvalues: Vec<Complex64>,
    /// Computed value of the (near-)zero eigenvalue.
    pub zero_eigenvalue: f64,
    /// Threshold below which an eigenvalue real part counts as zero.
    pub zero_tol: f64,
}

impl SemistableDecomposition {
    pub fn n(&self) -> usize {
        self.u_max.len()
    }

    /// Largest real part among the stable eigenvalues.
    pub fn max_stable_re(&self) -> f64 {
        self.stable_eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rebuild the matrix as `U Lambda U^-1`. The zero mode contributes
    /// nothing, so this reduces to `u_bar lambda_bar v_bar^T`.
    pub fn reassemble(&self) -> Array2<f64> {
        self.u_bar.dot(&self.lambda_bar).dot(&self.v_bar.t())
    }

    /// Oblique projector onto the stable eigenspace (`u_bar v_bar^T`).
    pub fn stable_projector(&self) -> Array2<f64> {
        self.u_bar.dot(&self.v_bar.t())
    }
}

/// One real eigenvalue or one conjugate pair, with its eigenvector(s).
enum SpectralUnit {
    Real { lambda: f64, vec: Array1<f64> },
    Pair { re: f64, im: f64, vec_re: Array1<f64>, vec_im: Array1<f64> },
}

impl SpectralUnit {
    fn real_part(&self) -> f64 {
        match self {
            SpectralUnit::Real { lambda, .. } => *lambda,
            SpectralUnit::Pair { re, .. } => *re,
        }
    }

    fn abs_im(&self) -> f64 {
        match self {
            SpectralUnit::Real { .. } => 0.0,
            SpectralUnit::Pair { im, .. } => im.abs(),
        }
    }

    fn width(&self) -> usize {
        match self {
            SpectralUnit::Real { .. } => 1,
            SpectralUnit::Pair { .. } => 2,
        }
    }
}

/// Make the largest-magnitude entry of a real vector nonnegative.
fn fix_sign(v: &mut Array1<f64>) {
    let mut idx = 0;
    let mut best = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

fn normalize(v: &mut Array1<f64>) {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        *v /= norm;
    }
}

/// Group the raw LAPACK eigen output into real eigenvalues and conjugate
/// pairs, with deterministic normalization of each eigenvector.
fn collect_units(vals: &Array1<Complex64>, vecs: &Array2<Complex64>) -> Result<Vec<SpectralUnit>> {
    let n = vals.len();
    let mut units = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let l = vals[i];
        if l.im == 0.0 {
            let mut vec = vecs.column(i).mapv(|z| z.re);
            normalize(&mut vec);
            fix_sign(&mut vec);
            units.push(SpectralUnit::Real { lambda: l.re, vec });
            i += 1;
        } else {
            // dgeev stores conjugate pairs in adjacent slots.
            if i + 1 >= n || (vals[i + 1] - l.conj()).norm() > 1e-8 * (1.0 + l.norm()) {
                return Err(MatError::NumericalFailure(
                    "complex eigenvalue without adjacent conjugate partner".into(),
                ));
            }
            // Use the positive-imaginary member; fix the phase so the
            // largest-magnitude component is real positive.
            let mut v: Array1<Complex64> = if l.im > 0.0 {
                vecs.column(i).to_owned()
            } else {
                vecs.column(i + 1).to_owned()
            };
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.mapv_inplace(|z| z / norm);
            }
            let mut k = 0;
            let mut best = -1.0;
            for (j, z) in v.iter().enumerate() {
                if z.norm() > best {
                    best = z.norm();
                    k = j;
                }
            }
            let phase = v[k] / v[k].norm();
            v.mapv_inplace(|z| z / phase);
            units.push(SpectralUnit::Pair {
                re: l.re,
                im: l.im.abs(),
                vec_re: v.mapv(|z| z.re),
                vec_im: v.mapv(|z| z.im),
            });
            i += 2;
        }
    }
    Ok(units)
}

/// Decompose a semistable matrix into its zero mode and stable part.
///
/// `zero_tol` defaults to `1e-7 * max|Re lambda|`. Exactly one eigenvalue must
/// satisfy `|Re lambda| < zero_tol`; everything else must have a strictly
/// negative real part. Eigenvalues within the zero band that form a defective
/// cluster are reported as [`MatError::DefectiveZeroEigenvalue`].
pub fn decompose_semistable(
    a: &Array2<f64>,
    zero_tol: Option<f64>,
) -> Result<SemistableDecomposition> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(MatError::DimensionMismatch(format!(
            "expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(MatError::NumericalFailure("non-finite entry in input".into()));
    }

    let (vals, vecs) = a.eig()?;
    let max_abs_re = vals.iter().map(|l| l.re.abs()).fold(0.0, f64::max);
    let zero_tol = zero_tol.unwrap_or(1e-7 * max_abs_re);

    let mut units = collect_units(&vals, &vecs)?;
    // Descending real part, then descending imaginary part. The zero mode
    // sorts first because every other real part is negative.
    units.sort_by(|a, b| {
        (b.real_part(), b.abs_im())
            .partial_cmp(&(a.real_part(), a.abs_im()))
            .expect("finite eigenvalues")
    });

    let near_zero: usize = units
        .iter()
        .filter(|u| u.real_part().abs() < zero_tol)
        .map(SpectralUnit::width)
        .sum();
    let unstable = units
        .iter()
        .map(SpectralUnit::real_part)
        .fold(f64::NEG_INFINITY, f64::max);
    if unstable >= zero_tol {
        return Err(MatError::NotSemistable(format!(
            "eigenvalue with real part {unstable:.3e} exceeds zero tolerance {zero_tol:.3e}"
        )));
    }
    if near_zero == 0 {
        return Err(MatError::NotSemistable(
            "no eigenvalue within the zero tolerance band".into(),
        ));
    }
    if near_zero > 1 {
        // Distinguish a genuinely repeated (semisimple) zero from a Jordan
        // block via the numerical nullity of the matrix itself.
        let (_, sv, _) = a.svd(false, false)?;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let rank = sv.iter().filter(|&&s| s > smax * n as f64 * f64::EPSILON).count();
        let nullity = n - rank;
        if nullity < near_zero {
            return Err(MatError::DefectiveZeroEigenvalue {
                geometric: nullity,
                algebraic: near_zero,
            });
        }
        return Err(MatError::NotSemistable(format!(
            "{near_zero} eigenvalues within the zero tolerance band"
        )));
    }
    // A single conjugate pair straddling zero would have counted as two.
    debug_assert!(matches!(units[0], SpectralUnit::Real { .. }));

    // Assemble the full right eigenvector matrix in real block form, zero
    // mode first, then invert once for the dual (left) basis.
    let mut u_full = Array2::<f64>::zeros((n, n));
    let mut lambda_bar = Array2::<f64>::zeros((n - 1, n - 1));
    let mut stable_eigenvalues = Vec::with_capacity(n - 1);
    let mut zero_eigenvalue = 0.0;
    let mut col = 0;
    for unit in &units {
        match unit {
            SpectralUnit::Real { lambda, vec } => {
                u_full.column_mut(col).assign(vec);
                if col == 0 {
                    zero_eigenvalue = *lambda;
                } else {
                    lambda_bar[[col - 1, col - 1]] = *lambda;
                    stable_eigenvalues.push(Complex64::new(*lambda, 0.0));
                }
                col += 1;
            }
            SpectralUnit::Pair { re, im, vec_re, vec_im } => {
                u_full.column_mut(col).assign(vec_re);
                u_full.column_mut(col + 1).assign(vec_im);
                let j = col - 1;
                lambda_bar[[j, j]] = *re;
                lambda_bar[[j, j + 1]] = *im;
                lambda_bar[[j + 1, j]] = -*im;
                lambda_bar[[j + 1, j + 1]] = *re;
                stable_eigenvalues.push(Complex64::new(*re, *im));
                stable_eigenvalues.push(Complex64::new(*re, -*im));
                col += 2;
            }
        }
    }

    let u_inv = u_full.inv().map_err(|_| {
        MatError::NumericalFailure("eigenvector matrix is numerically singular".into())
    })?;
    let v_full = u_inv.t().to_owned();

    let u_max = u_full.column(0).to_owned();
    let mut v_max = v_full.column(0).to_owned();
    normalize(&mut v_max);
    fix_sign(&mut v_max);

    Ok(SemistableDecomposition {
        u_max,
        v_max,
        u_bar: u_full.slice(s![.., 1..]).to_owned(),
        v_bar: v_full.slice(s![.., 1..]).to_owned(),
        lambda_bar,
        stable_eigenvalues,
        zero_eigenvalue,
        zero_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = a - b;
        let denom = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        diff.iter().map(|x| x * x).sum::<f64>().sqrt() / denom
    }

    #[test]
    fn diagonal_case() {
        let a = array![[0.0, 0.0], [0.0, -2.0]];
        let d = decompose_semistable(&a, None).unwrap();
        assert_abs_diff_eq!(d.v_max[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.v_max[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lambda_bar[[0, 0]], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_laplacian() {
        let a = array![[-1.0, 1.0], [1.0, -1.0]];
        let d = decompose_semistable(&a, None).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(d.v_max[0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(d.v_max[1], s, epsilon = 1e-12);
        assert_abs_diff_eq!(d.stable_eigenvalues[0].re, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.zero_eigenvalue, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn positive_eigenvalue_rejected() {
        let a = array![[0.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            decompose_semistable(&a, None),
            Err(MatError::NotSemistable(_))
        ));
    }

    #[test]
    fn double_zero_rejected() {
        let a = array![[0.0, 0.0], [0.0, 0.0]];
        let err = decompose_semistable(&a, Some(1e-9)).unwrap_err();
        assert!(matches!(err, MatError::NotSemistable(_)));
    }

    #[test]
    fn jordan_block_is_defective() {
        let a = array![[0.0, 1.0], [0.0, 0.0]];
        let err = decompose_semistable(&a, Some(1e-6)).unwrap_err();
        assert!(matches!(err, MatError::DefectiveZeroEigenvalue { .. }));
    }

    #[test]
    fn biorthogonality_and_reassembly() {
        // Nonsymmetric semistable matrix with a complex pair: build it from a
        // known spectrum and a random-ish basis.
        let t = array![
            [0.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 2.0, 0.0],
            [0.0, -2.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, -3.0]
        ];
        let p = array![
            [1.0, 0.3, -0.2, 0.5],
            [0.1, 1.0, 0.4, -0.3],
            [-0.2, 0.2, 1.0, 0.1],
            [0.4, -0.1, 0.3, 1.0]
        ];
        let p_inv = p.inv().unwrap();
        let a = p.dot(&t).dot(&p_inv);
        let d = decompose_semistable(&a, None).unwrap();

        let gram = d.v_bar.t().dot(&d.u_bar);
        assert!(rel_err(&gram, &Array2::eye(3)) < 1e-8);
        let vu = d.v_max.dot(&d.u_bar);
        assert!(vu.iter().all(|x| x.abs() < 1e-8));
        assert!(rel_err(&d.reassemble(), &a) < 1e-8);

        // Projector property.
        let proj = d.stable_projector();
        assert!(rel_err(&proj.dot(&proj), &proj) < 1e-8);
    }

    #[test]
    fn scalar_zero_with_explicit_tol() {
        let a = array![[0.0]];
        let d = decompose_semistable(&a, Some(1e-8)).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.stable_eigenvalues.len(), 0);
        assert_abs_diff_eq!(d.reassemble()[[0, 0]], 0.0);
    }
}
