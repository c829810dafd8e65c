//! Learners for the augmentation function b(W).
//!
//! The augmentation risk `(1/n) Σ (ψ̂_i - (A_i-π) b(W_i))²` is rewritten as a
//! weighted sum of squares with response `z_i = ψ̂_i/(A_i-π)` and weight
//! `w_i = (A_i-π)²/n`, so any weighted regression procedure can estimate the
//! optimal b. This module provides a linear model, a spline additive model,
//! a CART regression tree, a random forest, and a cross-validated stack of
//! candidates, all behind one fit/predict contract.

mod forest;
mod linear;
mod spline;
mod stack;
mod tree;

pub use forest::ForestModel;
pub use linear::LinearModel;
pub use spline::SplineModel;
pub use stack::StackModel;
pub use tree::TreeModel;

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::measures::InfluenceVector;
use crate::scalar::Scalar;

// ── weighted regression problem ─────────────────────────────────────────────

/// Weighted regression problem: find b minimizing `Σ w_i (z_i - b(W_i))²`.
#[derive(Debug, Clone)]
pub struct RegressionProblem<F> {
    features: Vec<F>, // n×p row-major
    p: usize,
    response: Vec<F>,
    weight: Vec<F>,
    treatment: Vec<u8>,
    subject_index: Vec<usize>,
}

impl<F: Scalar> RegressionProblem<F> {
    pub fn new(
        features: Vec<F>,
        p: usize,
        response: Vec<F>,
        weight: Vec<F>,
        treatment: Vec<u8>,
        subject_index: Vec<usize>,
    ) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::invalid("empty regression problem"));
        }
        if p == 0 || features.len() != n * p {
            return Err(Error::invalid(format!(
                "feature matrix length {} does not match n={n} rows of p={p}",
                features.len()
            )));
        }
        if weight.len() != n || treatment.len() != n || subject_index.len() != n {
            return Err(Error::invalid("response, weight, treatment, index lengths differ"));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature entry {i} is not finite")));
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("response entry {i} is not finite")));
        }
        if let Some(i) = weight.iter().position(|w| !(*w > F::zero()) || !w.is_finite()) {
            return Err(Error::invalid(format!("weight entry {i} must be strictly positive")));
        }
        Ok(Self { features, p, response, weight, treatment, subject_index })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn features(&self) -> &[F] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn response(&self) -> &[F] {
        &self.response
    }

    pub fn weight(&self) -> &[F] {
        &self.weight
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn subject_index(&self) -> &[usize] {
        &self.subject_index
    }

    /// Restriction to a subset of rows (original subject indices retained).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.p);
        let mut response = Vec::with_capacity(rows.len());
        let mut weight = Vec::with_capacity(rows.len());
        let mut treatment = Vec::with_capacity(rows.len());
        let mut subject_index = Vec::with_capacity(rows.len());
        for &i in rows {
            features.extend_from_slice(self.row(i));
            response.push(self.response[i]);
            weight.push(self.weight[i]);
            treatment.push(self.treatment[i]);
            subject_index.push(self.subject_index[i]);
        }
        Self { features, p: self.p, response, weight, treatment, subject_index }
    }

    pub fn total_weight(&self) -> F {
        self.weight.iter().copied().sum()
    }
}

/// Builds the weighted problem from a trial and its influence vector:
/// `z_i = ψ̂_i/(A_i-π)`, `w_i = (A_i-π)²/n`. With π = 1/2 every weight is
/// the same, `1/(4n)`.
pub fn make_problem<F: Scalar>(
    data: &TrialDataset<F>,
    psi: &InfluenceVector<F>,
) -> Result<RegressionProblem<F>> {
    let n = data.n();
    if psi.len() != n {
        return Err(Error::invalid(format!(
            "influence vector length {} differs from sample size {n}",
            psi.len()
        )));
    }
    let nf = F::from_count(n);
    let mut response = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for i in 0..n {
        let centered = F::from_count(data.treatment()[i] as usize) - data.pi();
        response.push(psi.values()[i] / centered);
        weight.push(centered * centered / nf);
    }
    RegressionProblem::new(
        data.covariates().to_vec(),
        data.p(),
        response,
        weight,
        data.treatment().to_vec(),
        (0..n).collect(),
    )
}

// ── learner selection ───────────────────────────────────────────────────────

/// Which learner to fit, with hyperparameters. Fractions are plain f64 so a
/// spec can be built without committing to the problem's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    /// b ≡ 0: no augmentation. Useful as a baseline and in stacks.
    Zero,
    Linear,
    SplineAdditive,
    Tree {
        max_depth: usize,
        min_leaf_weight_fraction: f64,
    },
    RandomForest {
        n_trees: usize,
        /// Columns tried per split; `None` means ceil(p/3).
        mtry: Option<usize>,
        min_leaf_weight_fraction: f64,
        bootstrap: bool,
    },
    SuperLearner {
        candidates: Vec<LearnerSpec>,
        v_folds: usize,
    },
}

impl LearnerSpec {
    pub fn tree() -> Self {
        LearnerSpec::Tree { max_depth: 4, min_leaf_weight_fraction: 0.05 }
    }

    pub fn random_forest() -> Self {
        LearnerSpec::RandomForest {
            n_trees: 200,
            mtry: None,
            min_leaf_weight_fraction: 0.01,
            bootstrap: true,
        }
    }

    pub fn super_learner(candidates: Vec<LearnerSpec>) -> Self {
        LearnerSpec::SuperLearner { candidates, v_folds: 5 }
    }

    /// Default stack: linear, spline, tree, forest.
    pub fn default_super_learner() -> Self {
        Self::super_learner(vec![
            LearnerSpec::Linear,
            LearnerSpec::SplineAdditive,
            LearnerSpec::tree(),
            LearnerSpec::random_forest(),
        ])
    }

    pub fn label(&self) -> &'static str {
        match self {
            LearnerSpec::Zero => "none",
            LearnerSpec::Linear => "linear",
            LearnerSpec::SplineAdditive => "spline",
            LearnerSpec::Tree { .. } => "tree",
            LearnerSpec::RandomForest { .. } => "forest",
            LearnerSpec::SuperLearner { .. } => "super",
        }
    }
}

/// A fitted augmentation function. Predictions are total on all finite
/// inputs: trees route out-of-range values to a leaf, splines extrapolate
/// linearly.
#[derive(Debug, Clone)]
pub enum FittedLearner<F> {
    Zero,
    Linear(LinearModel<F>),
    Spline(SplineModel<F>),
    Tree(TreeModel<F>),
    Forest(ForestModel<F>),
    Stack(StackModel<F>),
}

impl<F: Scalar> FittedLearner<F> {
    pub fn predict(&self, row: &[F]) -> F {
        match self {
            FittedLearner::Zero => F::zero(),
            FittedLearner::Linear(m) => m.predict(row),
            FittedLearner::Spline(m) => m.predict(row),
            FittedLearner::Tree(m) => m.predict(row),
            FittedLearner::Forest(m) => m.predict(row),
            FittedLearner::Stack(m) => m.predict(row),
        }
    }

    pub fn predict_problem(&self, problem: &RegressionProblem<F>) -> Vec<F> {
        (0..problem.n()).map(|i| self.predict(problem.row(i))).collect()
    }
}

/// Fit the requested learner. `seed` drives the forest bootstrap and the
/// stack's fold assignment; deterministic learners ignore it.
pub fn fit<F: Scalar>(
    spec: &LearnerSpec,
    problem: &RegressionProblem<F>,
    seed: u64,
) -> Result<FittedLearner<F>> {
    match spec {
        LearnerSpec::Zero => Ok(FittedLearner::Zero),
        LearnerSpec::Linear => Ok(FittedLearner::Linear(linear::fit_linear(problem)?)),
        LearnerSpec::SplineAdditive => {
            Ok(FittedLearner::Spline(spline::fit_spline_additive(problem)?))
        }
        LearnerSpec::Tree { max_depth, min_leaf_weight_fraction } => Ok(FittedLearner::Tree(
            tree::fit_tree(problem, *max_depth, *min_leaf_weight_fraction)?,
        )),
        LearnerSpec::RandomForest { n_trees, mtry, min_leaf_weight_fraction, bootstrap } => {
            Ok(FittedLearner::Forest(forest::fit_random_forest(
                problem,
                *n_trees,
                *mtry,
                *min_leaf_weight_fraction,
                *bootstrap,
                seed,
            )?))
        }
        LearnerSpec::SuperLearner { candidates, v_folds } => Ok(FittedLearner::Stack(
            stack::fit_super_learner(problem, candidates, *v_folds, seed)?,
        )),
    }
}

/// Weighted sum of squares `Σ w_i (z_i - pred_i)²`: the empirical
/// augmentation risk of a candidate b.
pub fn weighted_risk<F: Scalar>(problem: &RegressionProblem<F>, predictions: &[F]) -> F {
    problem
        .weight
        .iter()
        .zip(&problem.response)
        .zip(predictions)
        .map(|((&w, &z), &p)| w * (z - p) * (z - p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MeasureId, Provenance};

    fn toy_data(pi: f64) -> TrialDataset<f64> {
        TrialDataset::new(
            vec![0.4, -1.1, 2.0, 0.3, -0.7, 1.5],
            1,
            vec![1, 0, 1, 0, 1, 0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![1, 1, 1, 1, 1, 1],
            pi,
        )
        .unwrap()
    }

    fn psi_vec(values: Vec<f64>) -> InfluenceVector<f64> {
        InfluenceVector::new(values, MeasureId::MeanDiff, Provenance::Analytic).unwrap()
    }

    #[test]
    fn make_problem_half_pi_constant_weights() {
        let data = toy_data(0.5);
        let c = 3.0;
        let psi = psi_vec(vec![c, -c, c, -c, c, -c]);
        let problem = make_problem(&data, &psi).unwrap();
        for i in 0..6 {
            assert!((problem.weight()[i] - 1.0 / 24.0).abs() < 1e-15);
            // psi alternates in sign with the arm, so z = psi/(A-pi) is the
            // same 2c in both arms at pi = 1/2
            assert!((problem.response()[i] - 2.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn make_problem_asymmetric_pi_weights() {
        let data = toy_data(2.0 / 3.0);
        let psi = psi_vec(vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let problem = make_problem(&data, &psi).unwrap();
        let n = 6.0;
        for i in 0..6 {
            let want = if data.treatment()[i] == 1 { 1.0 / (9.0 * n) } else { 4.0 / (9.0 * n) };
            assert!((problem.weight()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_risk_matches_influence_form() {
        // Σ w_i (z_i - b_i)² must equal (1/n) Σ (ψ_i - (A_i-π) b_i)²
        let data = toy_data(0.37);
        let psi = psi_vec(vec![0.8, -1.3, 2.2, 0.1, -0.4, -1.4]);
        let problem = make_problem(&data, &psi).unwrap();
        let b: Vec<f64> = (0..6).map(|i| (i as f64 * 1.3).sin() * 2.0).collect();
        let lhs = weighted_risk(&problem, &b);
        let rhs: f64 = (0..6)
            .map(|i| {
                let a = data.treatment()[i] as f64 - data.pi();
                let r = psi.values()[i] - a * b[i];
                r * r
            })
            .sum::<f64>()
            / 6.0;
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn every_learner_at_least_matches_weighted_mean() {
        // mean-centered responses: fitting must not lose to the best constant
        let n = 60;
        let mut features = Vec::new();
        let mut response = Vec::new();
        let mut weight = Vec::new();
        let mut treatment = Vec::new();
        for i in 0..n {
            let x = (i as f64 * 0.611).sin() * 2.0;
            let y = (i as f64 * 1.137).cos();
            features.extend_from_slice(&[x, y]);
            response.push(x * y + 0.3 * x - 0.1 * (i as f64 * 0.77).sin());
            weight.push(0.5 + 0.4 * (i as f64 * 0.23).cos().abs());
            treatment.push((i % 2) as u8);
        }
        let sw: f64 = weight.iter().sum();
        let swz: f64 = weight.iter().zip(&response).map(|(w, z)| w * z).sum();
        let mean = swz / sw;
        for z in response.iter_mut() {
            *z -= mean;
        }
        let problem =
            RegressionProblem::new(features, 2, response, weight, treatment, (0..n).collect())
                .unwrap();
        let constant_risk = weighted_risk(&problem, &vec![0.0; n]);
        for spec in [
            LearnerSpec::Linear,
            LearnerSpec::SplineAdditive,
            LearnerSpec::tree(),
            LearnerSpec::random_forest(),
            LearnerSpec::super_learner(vec![LearnerSpec::Linear, LearnerSpec::tree()]),
        ] {
            let fitted = fit(&spec, &problem, 7).unwrap();
            let risk = weighted_risk(&problem, &fitted.predict_problem(&problem));
            assert!(
                risk <= constant_risk + 1e-12,
                "{}: {risk} vs constant {constant_risk}",
                spec.label()
            );
        }
    }

    #[test]
    fn weight_scaling_leaves_predictors_unchanged() {
        let n = 40;
        let mut features = Vec::new();
        let mut response = Vec::new();
        let mut weight = Vec::new();
        for i in 0..n {
            let x = (i as f64 * 0.37).sin() * 3.0;
            features.push(x);
            response.push(x * x - x);
            weight.push(0.2 + (i % 5) as f64 * 0.3);
        }
        let base = RegressionProblem::new(
            features.clone(),
            1,
            response.clone(),
            weight.clone(),
            vec![0; n],
            (0..n).collect(),
        )
        .unwrap();
        let scaled = RegressionProblem::new(
            features,
            1,
            response,
            weight.into_iter().map(|w| w * 3.7).collect(),
            vec![0; n],
            (0..n).collect(),
        )
        .unwrap();
        for spec in [
            LearnerSpec::Linear,
            LearnerSpec::SplineAdditive,
            LearnerSpec::tree(),
            LearnerSpec::random_forest(),
        ] {
            let a = fit(&spec, &base, 99).unwrap().predict_problem(&base);
            let b = fit(&spec, &scaled, 99).unwrap().predict_problem(&scaled);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{}: {x} vs {y}", spec.label());
            }
        }
    }

    #[test]
    fn problem_rejects_nonpositive_weights() {
        let r = RegressionProblem::new(
            vec![1.0, 2.0],
            1,
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0, 1],
            vec![0, 1],
        );
        assert!(r.is_err());
    }
}
