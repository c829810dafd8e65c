//! Dense symmetric solves for the small normal-equation systems used by the
//! linear and spline learners. Dimensions here are tiny (tens at most), so a
//! plain Cholesky with a pivot tolerance is enough.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cholesky solve of `a x = b` for symmetric positive semidefinite `a`
/// (row-major d*d). Returns `None` when a pivot falls at or below
/// `tol_rel * max_diag`, signalling singularity to the caller.
pub(crate) fn cholesky_solve<F: Scalar>(a: &[F], b: &[F], d: usize, tol_rel: f64) -> Option<Vec<F>> {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(b.len(), d);
    let max_diag = (0..d).fold(F::zero(), |m, j| m.max(a[j * d + j].abs()));
    let tol = F::cst(tol_rel) * max_diag;
    let mut l = vec![F::zero(); d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag <= tol || !diag.is_finite() {
            return None;
        }
        let root = diag.sqrt();
        l[j * d + j] = root;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = v / root;
        }
    }
    // forward then back substitution
    let mut y = vec![F::zero(); d];
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * d + k] * y[k];
        }
        y[i] = v / l[i * d + i];
    }
    let mut x = vec![F::zero(); d];
    for i in (0..d).rev() {
        let mut v = y[i];
        for k in (i + 1)..d {
            v -= l[k * d + i] * x[k];
        }
        x[i] = v / l[i * d + i];
    }
    Some(x)
}

pub(crate) struct WlsSolution<F> {
    pub coef: Vec<F>,
    pub used_ridge: bool,
}

/// Weighted least squares of `z` on the rows of `design` (row-major n*d).
/// Solves the normal equations; if they are singular to 1e-10 relative to
/// the largest diagonal entry, retries once with ridge `1e-8 * trace / d`
/// added to every diagonal entry and records the fallback.
pub(crate) fn weighted_least_squares<F: Scalar>(
    design: &[F],
    d: usize,
    z: &[F],
    w: &[F],
) -> Result<WlsSolution<F>> {
    let n = z.len();
    debug_assert_eq!(design.len(), n * d);
    debug_assert_eq!(w.len(), n);
    let mut xtwx = vec![F::zero(); d * d];
    let mut xtwz = vec![F::zero(); d];
    for i in 0..n {
        let wi = w[i];
        if wi == F::zero() {
            continue;
        }
        let row = &design[i * d..(i + 1) * d];
        for j in 0..d {
            let wj = wi * row[j];
            xtwz[j] += wj * z[i];
            for k in j..d {
                xtwx[j * d + k] += wj * row[k];
            }
        }
    }
    // mirror the upper triangle
    for j in 0..d {
        for k in (j + 1)..d {
            xtwx[k * d + j] = xtwx[j * d + k];
        }
    }
    if let Some(coef) = cholesky_solve(&xtwx, &xtwz, d, 1e-10) {
        return Ok(WlsSolution { coef, used_ridge: false });
    }
    let trace = (0..d).fold(F::zero(), |s, j| s + xtwx[j * d + j]);
    let lambda = F::cst(1e-8) * trace / F::from_count(d);
    for j in 0..d {
        xtwx[j * d + j] += lambda;
    }
    match cholesky_solve(&xtwx, &xtwz, d, 0.0) {
        Some(coef) => Ok(WlsSolution { coef, used_ridge: true }),
        None => Err(Error::Underdetermined(
            "normal equations singular even after ridge fallback".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        // a = [[4,1],[1,3]], b = [1,2] -> x = [1/11, 7/11]
        let a: [f64; 4] = [4.0, 1.0, 1.0, 3.0];
        let b = [1.0, 2.0];
        let x = cholesky_solve(&a, &b, 2, 1e-12).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn flags_singular_matrix() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let b = [2.0, 2.0];
        assert!(cholesky_solve(&a, &b, 2, 1e-10).is_none());
    }

    #[test]
    fn wls_recovers_exact_linear_fit() {
        // z = 2 + 3*x with unequal weights: exact interpolation
        let design: Vec<f64> = (0..6).flat_map(|i| vec![1.0, i as f64]).collect();
        let z: Vec<f64> = (0..6).map(|i| 2.0 + 3.0 * i as f64).collect();
        let w = [0.5, 1.0, 2.0, 0.25, 1.5, 3.0];
        let sol = weighted_least_squares(&design, 2, &z, &w).unwrap();
        assert!(!sol.used_ridge);
        assert!((sol.coef[0] - 2.0).abs() < 1e-10);
        assert!((sol.coef[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn wls_duplicate_column_takes_ridge_path() {
        // x duplicated: singular normal equations, ridge splits the weight
        let mut design = Vec::new();
        let mut z = Vec::new();
        for i in 0..8 {
            let x = i as f64;
            design.extend_from_slice(&[1.0, x, x]);
            z.push(1.0 + 2.0 * x);
        }
        let w = vec![1.0; 8];
        let sol = weighted_least_squares(&design, 3, &z, &w).unwrap();
        assert!(sol.used_ridge);
        // the two duplicated columns share the slope
        let pred = sol.coef[0] + (sol.coef[1] + sol.coef[2]) * 3.0;
        assert!((pred - 7.0).abs() < 1e-5);
    }
}
