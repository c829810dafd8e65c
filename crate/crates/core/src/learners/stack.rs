//! Cross-validated stacking of candidate learners.
//!
//! Candidates are fit per fold (folds stratified by treatment arm), their
//! out-of-fold predictions form the matrix Z, and simplex weights minimize
//! the weighted risk of the combination z ≈ Zα via non-negative least
//! squares plus normalization. The feasible set contains every vertex, so
//! the combination's cross-validated risk never exceeds the best single
//! candidate's; if normalization lands above a vertex anyway, the weight
//! vector falls back to that vertex.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::scalar::Scalar;
use crate::stats::derive_seed;

use super::{fit, FittedLearner, LearnerSpec, RegressionProblem};

/// Fitted stack: full-problem candidate refits and their simplex weights.
#[derive(Debug, Clone)]
pub struct StackModel<F> {
    candidates: Vec<FittedLearner<F>>,
    labels: Vec<&'static str>,
    weights: Vec<F>,
    cv_risks: Vec<F>,
    combined_cv_risk: F,
    warnings: Vec<String>,
}

impl<F: Scalar> StackModel<F> {
    pub fn predict(&self, row: &[F]) -> F {
        self.candidates
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w * c.predict(row))
            .sum()
    }

    /// Simplex weights aligned with `labels()`.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn labels(&self) -> &[&'static str] {
        &self.labels
    }

    /// Cross-validated risk of each surviving candidate.
    pub fn cv_risks(&self) -> &[F] {
        &self.cv_risks
    }

    /// Cross-validated risk of the returned weighted combination.
    pub fn combined_cv_risk(&self) -> F {
        self.combined_cv_risk
    }

    /// Messages about candidates dropped during cross-validation.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Fold labels in 0..v, stratified by arm, uniform within arm given the seed.
fn stratified_folds(treatment: &[u8], v: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0));
    let mut fold = vec![0usize; treatment.len()];
    for arm in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..treatment.len())
            .filter(|&i| treatment[i] == arm)
            .collect();
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % v;
        }
    }
    fold
}

/// Lawson-Hanson non-negative least squares on the normal equations
/// `g = AᵀA`, `h = Aᵀb` (column count small). Returns x ≥ 0 minimizing
/// ‖Ax−b‖².
fn nnls_normal<F: Scalar>(g: &[F], h: &[F], m: usize) -> Vec<F> {
    let mut x = vec![F::zero(); m];
    let mut passive = vec![false; m];
    let scale = h.iter().fold(F::one(), |acc, v| acc.max(v.abs()));
    let tol = F::cst(1e-10) * scale;

    // gradient of 1/2‖Ax−b‖² is Gx − h; w = h − Gx
    let gradient = |x: &[F]| -> Vec<F> {
        (0..m)
            .map(|i| {
                let gx: F = (0..m).map(|j| g[i * m + j] * x[j]).sum();
                h[i] - gx
            })
            .collect()
    };

    // solve G_PP s_P = h_P on the passive set
    let solve_passive = |passive: &[bool]| -> Option<Vec<F>> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let d = idx.len();
        let mut sub_g = vec![F::zero(); d * d];
        let mut sub_h = vec![F::zero(); d];
        for (r, &i) in idx.iter().enumerate() {
            sub_h[r] = h[i];
            for (c, &j) in idx.iter().enumerate() {
                sub_g[r * d + c] = g[i * m + j];
            }
        }
        let sol = cholesky_solve(&sub_g, &sub_h, d, 1e-12).or_else(|| {
            // duplicate candidates make G singular; a hair of ridge picks
            // one of the equivalent solutions
            let trace: F = (0..d).map(|r| sub_g[r * d + r]).sum();
            let ridge = F::cst(1e-10) * trace / F::from_count(d.max(1));
            let mut damped = sub_g.clone();
            for r in 0..d {
                damped[r * d + r] += ridge;
            }
            cholesky_solve(&damped, &sub_h, d, 0.0)
        })?;
        let mut s = vec![F::zero(); m];
        for (r, &i) in idx.iter().enumerate() {
            s[i] = sol[r];
        }
        Some(s)
    };

    for _ in 0..(3 * m + 10) {
        let w = gradient(&x);
        let mut best: Option<(usize, F)> = None;
        for j in 0..m {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, bw)| w[j] > bw) {
                best = Some((j, w[j]));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        loop {
            let Some(s) = solve_passive(&passive) else {
                // singular even with ridge: give up on this entrant
                passive[enter] = false;
                return x;
            };
            let negatives: Vec<usize> =
                (0..m).filter(|&j| passive[j] && s[j] <= F::zero()).collect();
            if negatives.is_empty() {
                x = s;
                break;
            }
            let mut alpha = F::infinity();
            for &j in &negatives {
                let denom = x[j] - s[j];
                if denom > F::zero() {
                    alpha = alpha.min(x[j] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = F::zero();
            }
            for j in 0..m {
                if passive[j] {
                    x[j] = x[j] + alpha * (s[j] - x[j]);
                }
            }
            for j in 0..m {
                if passive[j] && x[j].abs() <= F::cst(1e-14) * scale.max(F::one()) {
                    x[j] = F::zero();
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

pub fn fit_super_learner<F: Scalar>(
    problem: &RegressionProblem<F>,
    candidates: &[LearnerSpec],
    v_folds: usize,
    rng_seed: u64,
) -> Result<StackModel<F>> {
    let n = problem.n();
    let m = candidates.len();
    if m < 2 {
        return Err(Error::invalid("super learner needs at least 2 candidates"));
    }
    if v_folds < 2 {
        return Err(Error::invalid("super learner needs at least 2 folds"));
    }
    if n < 10 * v_folds {
        return Err(Error::invalid(format!(
            "super learner needs n >= 10*v_folds, got n={n}, v_folds={v_folds}"
        )));
    }

    let fold = stratified_folds(problem.treatment(), v_folds, rng_seed);
    let mut oof = vec![F::zero(); n * m]; // out-of-fold prediction matrix
    let mut alive = vec![true; m];
    let mut warnings = Vec::new();

    for v in 0..v_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != v).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == v).collect();
        if test.is_empty() {
            continue;
        }
        let sub = problem.subset(&train);
        for (c, spec) in candidates.iter().enumerate() {
            if !alive[c] {
                continue;
            }
            let seed = derive_seed(rng_seed, (1 + v * m + c) as u64);
            match fit(spec, &sub, seed) {
                Ok(model) => {
                    for &i in &test {
                        oof[i * m + c] = model.predict(problem.row(i));
                    }
                }
                Err(e) => {
                    alive[c] = false;
                    warnings.push(format!(
                        "candidate {} dropped in fold {v}: {e}",
                        spec.label()
                    ));
                }
            }
        }
    }

    let live: Vec<usize> = (0..m).filter(|&c| alive[c]).collect();
    if live.is_empty() {
        return Err(Error::LearnerFailure(format!(
            "all super learner candidates failed: {}",
            warnings.join("; ")
        )));
    }

    // per-candidate cross-validated risks
    let cv_risks: Vec<F> = live
        .iter()
        .map(|&c| {
            (0..n)
                .map(|i| {
                    let r = problem.response()[i] - oof[i * m + c];
                    problem.weight()[i] * r * r
                })
                .sum()
        })
        .collect();
    let best = cv_risks
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .expect("at least one live candidate");

    // weighted NNLS via normal equations on the live columns
    let k = live.len();
    let mut g = vec![F::zero(); k * k];
    let mut h = vec![F::zero(); k];
    for i in 0..n {
        let wi = problem.weight()[i];
        let zi = problem.response()[i];
        for (a, &ca) in live.iter().enumerate() {
            let za = oof[i * m + ca];
            h[a] += wi * za * zi;
            for (b, &cb) in live.iter().enumerate() {
                g[a * k + b] += wi * za * oof[i * m + cb];
            }
        }
    }
    let alpha = nnls_normal(&g, &h, k);
    let total: F = alpha.iter().copied().sum();

    let combo_risk = |weights: &[F]| -> F {
        (0..n)
            .map(|i| {
                let pred: F = live
                    .iter()
                    .enumerate()
                    .map(|(a, &ca)| weights[a] * oof[i * m + ca])
                    .sum();
                let r = problem.response()[i] - pred;
                problem.weight()[i] * r * r
            })
            .sum()
    };

    let mut weights: Vec<F> = if total > F::zero() {
        alpha.iter().map(|&a| a / total).collect()
    } else {
        let mut w = vec![F::zero(); k];
        w[best] = F::one();
        w
    };
    let mut combined_cv_risk = combo_risk(&weights);
    // vertices are feasible, so the reported combination must not lose to
    // the best single candidate
    if combined_cv_risk > cv_risks[best] {
        weights = vec![F::zero(); k];
        weights[best] = F::one();
        combined_cv_risk = cv_risks[best];
    }

    // refit survivors on the full problem
    let mut fitted = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for &c in &live {
        let seed = derive_seed(rng_seed, (1 + v_folds * m + c) as u64);
        let model = fit(&candidates[c], problem, seed).map_err(|e| {
            Error::LearnerFailure(format!(
                "candidate {} failed on the full problem after clean folds: {e}",
                candidates[c].label()
            ))
        })?;
        fitted.push(model);
        labels.push(candidates[c].label());
    }

    Ok(StackModel {
        candidates: fitted,
        labels,
        weights,
        cv_risks,
        combined_cv_risk,
        warnings,
    })
}
