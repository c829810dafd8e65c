//! Weighted linear regression learner.

use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::scalar::Scalar;

use super::RegressionProblem;

/// Weighted least-squares fit of z on (1, W).
#[derive(Debug, Clone)]
pub struct LinearModel<F> {
    /// Intercept followed by one slope per covariate column.
    coef: Vec<F>,
    used_ridge: bool,
}

impl<F: Scalar> LinearModel<F> {
    pub fn coef(&self) -> &[F] {
        &self.coef
    }

    /// Whether the normal equations needed the ridge fallback.
    pub fn used_ridge(&self) -> bool {
        self.used_ridge
    }

    pub fn predict(&self, row: &[F]) -> F {
        let mut acc = self.coef[0];
        for (c, x) in self.coef[1..].iter().zip(row) {
            acc += *c * *x;
        }
        acc
    }
}

pub fn fit_linear<F: Scalar>(problem: &RegressionProblem<F>) -> Result<LinearModel<F>> {
    let n = problem.n();
    let p = problem.p();
    if n <= p + 1 {
        return Err(Error::Underdetermined(format!(
            "linear fit needs n > p+1, got n={n}, p={p}"
        )));
    }
    let d = p + 1;
    let mut design = Vec::with_capacity(n * d);
    for i in 0..n {
        design.push(F::one());
        design.extend_from_slice(problem.row(i));
    }
    let sol = weighted_least_squares(&design, d, problem.response(), problem.weight())?;
    Ok(LinearModel { coef: sol.coef, used_ridge: sol.used_ridge })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(features: Vec<f64>, p: usize, z: Vec<f64>, w: Vec<f64>) -> RegressionProblem<f64> {
        let n = z.len();
        RegressionProblem::new(features, p, z, w, vec![0; n], (0..n).collect()).unwrap()
    }

    #[test]
    fn exact_recovery_of_linear_signal() {
        let n = 25;
        let mut features = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let x1 = (i as f64 * 0.7).sin() * 2.0;
            let x2 = (i as f64 * 0.31).cos() - 0.5;
            features.extend_from_slice(&[x1, x2]);
            z.push(2.0 + 3.0 * x1 - 1.0 * x2);
            w.push(0.1 + (i % 7) as f64 * 0.2);
        }
        let m = fit_linear(&problem(features, 2, z, w)).unwrap();
        assert!((m.coef()[0] - 2.0).abs() < 1e-10);
        assert!((m.coef()[1] - 3.0).abs() < 1e-10);
        assert!((m.coef()[2] - (-1.0)).abs() < 1e-10);
        assert!(!m.used_ridge());
    }

    #[test]
    fn constant_response_gives_intercept_only() {
        let n = 10;
        let features: Vec<f64> = (0..n).map(|i| i as f64 * 0.4 - 2.0).collect();
        let m = fit_linear(&problem(features, 1, vec![5.5; n], vec![1.0; n])).unwrap();
        assert!((m.coef()[0] - 5.5).abs() < 1e-10);
        assert!(m.coef()[1].abs() < 1e-10);
    }

    #[test]
    fn underdetermined_rejected() {
        let p = problem(vec![1.0, 2.0], 1, vec![0.0, 1.0], vec![1.0, 1.0]);
        match fit_linear(&p) {
            Err(Error::Underdetermined(msg)) => assert!(msg.contains("n > p+1"), "{msg}"),
            other => panic!("expected underdetermined, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_column_uses_ridge_and_matches_clean_refit() {
        let n = 30;
        let mut dup = Vec::new();
        let mut solo = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let x = (i as f64 * 0.9).sin() * 1.5;
            dup.extend_from_slice(&[x, x]);
            solo.push(x);
            z.push(1.0 - 2.0 * x);
            w.push(0.5 + (i % 3) as f64 * 0.25);
        }
        let dup_problem = problem(dup, 2, z.clone(), w.clone());
        let solo_problem = problem(solo, 1, z, w);
        let m_dup = fit_linear(&dup_problem).unwrap();
        let m_solo = fit_linear(&solo_problem).unwrap();
        assert!(m_dup.used_ridge());
        assert!(!m_solo.used_ridge());
        for i in 0..n {
            let a = m_dup.predict(dup_problem.row(i));
            let b = m_solo.predict(solo_problem.row(i));
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
