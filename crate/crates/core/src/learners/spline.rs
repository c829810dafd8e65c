//! Additive natural cubic spline learner.
//!
//! Each continuous covariate is expanded in a natural cubic basis with
//! boundary knots at its weighted min/max and interior knots at the 0.25,
//! 0.5, 0.75 weighted quantiles; binary covariates stay linear. All columns
//! are fit jointly by weighted least squares, so the model nests the plain
//! linear learner.

use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::scalar::Scalar;

use super::RegressionProblem;

#[derive(Debug, Clone)]
enum ColumnBasis<F> {
    /// Single linear term (binary columns, or too few distinct values).
    Linear,
    /// Natural cubic terms over these ascending distinct knots (≥3).
    Natural { knots: Vec<F> },
}

impl<F: Scalar> ColumnBasis<F> {
    fn width(&self) -> usize {
        match self {
            ColumnBasis::Linear => 1,
            ColumnBasis::Natural { knots } => knots.len() - 1,
        }
    }

    /// Writes this column's basis values for covariate value `x`.
    fn expand(&self, x: F, out: &mut Vec<F>) {
        match self {
            ColumnBasis::Linear => out.push(x),
            ColumnBasis::Natural { knots } => {
                out.push(x);
                let k = knots.len();
                let last = knots[k - 1];
                let before_last = knots[k - 2];
                let d = |knot: F| -> F {
                    let a = (x - knot).max(F::zero());
                    let b = (x - last).max(F::zero());
                    (a * a * a - b * b * b) / (last - knot)
                };
                let d_ref = d(before_last);
                for &knot in &knots[..k - 2] {
                    out.push(d(knot) - d_ref);
                }
            }
        }
    }
}

/// Fitted additive spline model.
#[derive(Debug, Clone)]
pub struct SplineModel<F> {
    columns: Vec<ColumnBasis<F>>,
    coef: Vec<F>,
    used_ridge: bool,
}

impl<F: Scalar> SplineModel<F> {
    pub fn used_ridge(&self) -> bool {
        self.used_ridge
    }

    fn expand_row(&self, row: &[F], out: &mut Vec<F>) {
        out.clear();
        out.push(F::one());
        for (basis, &x) in self.columns.iter().zip(row) {
            basis.expand(x, out);
        }
    }

    pub fn predict(&self, row: &[F]) -> F {
        let mut basis = Vec::with_capacity(self.coef.len());
        self.expand_row(row, &mut basis);
        basis.iter().zip(&self.coef).map(|(&b, &c)| b * c).sum()
    }
}

/// Smallest value whose cumulative weight reaches `q` of the total.
fn weighted_quantile<F: Scalar>(sorted: &[(F, F)], total: F, q: F) -> F {
    let target = q * total;
    let mut cum = F::zero();
    for &(x, w) in sorted {
        cum += w;
        if cum >= target {
            return x;
        }
    }
    sorted.last().expect("non-empty column").0
}

fn column_basis<F: Scalar>(problem: &RegressionProblem<F>, col: usize) -> ColumnBasis<F> {
    let n = problem.n();
    let binary = (0..n).all(|i| {
        let x = problem.row(i)[col];
        x == F::zero() || x == F::one()
    });
    if binary {
        return ColumnBasis::Linear;
    }
    let mut pairs: Vec<(F, F)> =
        (0..n).map(|i| (problem.row(i)[col], problem.weight()[i])).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total = problem.total_weight();
    let mut knots = Vec::with_capacity(5);
    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let knot = weighted_quantile(&pairs, total, F::cst(q));
        if knots.last() != Some(&knot) {
            knots.push(knot);
        }
    }
    if knots.len() < 3 {
        ColumnBasis::Linear
    } else {
        ColumnBasis::Natural { knots }
    }
}

pub fn fit_spline_additive<F: Scalar>(problem: &RegressionProblem<F>) -> Result<SplineModel<F>> {
    let n = problem.n();
    let p = problem.p();
    if n < 10 * p {
        return Err(Error::Underdetermined(format!(
            "spline fit needs n >= 10*p, got n={n}, p={p}"
        )));
    }
    let columns: Vec<ColumnBasis<F>> = (0..p).map(|c| column_basis(problem, c)).collect();
    let d = 1 + columns.iter().map(|c| c.width()).sum::<usize>();
    if n <= d {
        return Err(Error::Underdetermined(format!(
            "spline basis has {d} columns but only n={n} rows"
        )));
    }
    let mut design = Vec::with_capacity(n * d);
    let mut row_buf = Vec::with_capacity(d);
    for i in 0..n {
        row_buf.clear();
        row_buf.push(F::one());
        for (basis, &x) in columns.iter().zip(problem.row(i)) {
            basis.expand(x, &mut row_buf);
        }
        design.extend_from_slice(&row_buf);
    }
    let sol = weighted_least_squares(&design, d, problem.response(), problem.weight())?;
    Ok(SplineModel { columns, coef: sol.coef, used_ridge: sol.used_ridge })
}
