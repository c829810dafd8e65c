//! Augmented estimation engine.
//!
//! Given a measure with influence values ψ̂ and a learner for the
//! augmentation function b, the engine computes
//!
//! `θ̂(b̂) = θ̄ - (1/n) Σ (A_i - π) b̂(W_i)`
//!
//! either on the full sample (plug-in variance σ̂²) or with K-fold
//! cross-fitting (out-of-fold variance σ̃²), where every fold's ψ̂ and b̂ are
//! fit on the fold complement and evaluated at the held-out subjects. θ̄ is
//! always the full-sample estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::learners::{fit, make_problem, LearnerSpec};
use crate::measures::{estimate_and_influence, fit_measure, influence, EffectMeasureSpec};
use crate::scalar::Scalar;
use crate::stats::{derive_seed, hash_indices, normal_quantile};

// ── cross-fit plan ──────────────────────────────────────────────────────────

/// Fold assignment for K-fold cross-fitting. Labels are 1-based: V_i ∈ 1..=k.
#[derive(Debug, Clone)]
pub struct CrossFitPlan {
    k: usize,
    assignment: Vec<usize>,
    rng_seed: u64,
}

impl CrossFitPlan {
    /// Wraps an explicit assignment. Structural checks only (labels in
    /// range, no empty fold); whether each fold complement supports the
    /// measure is checked against the data when the plan is used, which is
    /// what permits leave-one-out plans whose single-subject folds cannot
    /// hold both arms.
    pub fn from_assignment(k: usize, assignment: Vec<usize>, rng_seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("cross-fit needs k >= 2"));
        }
        if assignment.len() < k {
            return Err(Error::invalid("assignment shorter than fold count"));
        }
        let mut seen = vec![false; k];
        for (i, &v) in assignment.iter().enumerate() {
            if v < 1 || v > k {
                return Err(Error::invalid(format!(
                    "subject {i}: fold label {v} outside 1..={k}"
                )));
            }
            seen[v - 1] = true;
        }
        if let Some(v) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("fold {} is empty", v + 1)));
        }
        Ok(Self { k, assignment, rng_seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Draws i.i.d. uniform fold labels until every fold is non-empty, contains
/// both arms, and holds at least one event; resamples whole assignments up
/// to 100 times.
pub fn make_plan(
    n: usize,
    treatment: &[u8],
    event: &[u8],
    k: usize,
    rng_seed: u64,
) -> Result<CrossFitPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("cross-fit needs k >= 2, got {k}")));
    }
    if n < 4 * k {
        return Err(Error::invalid(format!("cross-fit needs n >= 4k, got n={n}, k={k}")));
    }
    if treatment.len() != n || event.len() != n {
        return Err(Error::invalid("treatment/event length differs from n"));
    }
    for attempt in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(rng_seed, attempt));
        let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let mut arm_seen = vec![[false; 2]; k];
        let mut event_seen = vec![false; k];
        for i in 0..n {
            let f = assignment[i] - 1;
            arm_seen[f][treatment[i] as usize] = true;
            if event[i] == 1 {
                event_seen[f] = true;
            }
        }
        let feasible = (0..k).all(|f| arm_seen[f][0] && arm_seen[f][1] && event_seen[f]);
        if feasible {
            return Ok(CrossFitPlan { k, assignment, rng_seed });
        }
    }
    Err(Error::PlanInfeasible(
        "no uniform assignment satisfied the fold constraints in 100 draws".into(),
    ))
}

// ── reports ─────────────────────────────────────────────────────────────────

/// One estimator's output: point, standard error, normal-theory interval.
#[derive(Debug, Clone, Copy)]
pub struct PointEstimate<F> {
    pub point: F,
    pub se: F,
    pub ci: (F, F),
}

/// Full output of one augmented analysis.
#[derive(Debug, Clone)]
pub struct EstimateReport<F: Scalar> {
    pub unadjusted: PointEstimate<F>,
    pub augmented: PointEstimate<F>,
    pub method: LearnerSpec,
    pub splitting: Option<CrossFitPlan>,
    pub measure: EffectMeasureSpec<F>,
    pub ci_level: F,
    pub seed: u64,
}

/// `point ± Φ⁻¹((1+level)/2) · se`.
pub fn confidence_interval<F: Scalar>(point: F, se: F, level: F) -> Result<(F, F)> {
    if !(se > F::zero()) || !se.is_finite() {
        return Err(Error::invalid(format!("se must be positive, got {se}")));
    }
    if !(level > F::zero() && level < F::one()) {
        return Err(Error::invalid(format!("ci level must lie in (0,1), got {level}")));
    }
    let z = F::cst(normal_quantile(((F::one() + level) / F::cst(2.0)).as_f64()));
    Ok((point - z * se, point + z * se))
}

fn point_estimate<F: Scalar>(point: F, se: F, level: F) -> PointEstimate<F> {
    // degenerate zero/non-finite se still deserves a report; the interval
    // collapses to the point
    let ci = confidence_interval(point, se, level).unwrap_or((point, point));
    PointEstimate { point, se, ci }
}

// ── estimators ──────────────────────────────────────────────────────────────

fn centered_arm<F: Scalar>(data: &TrialDataset<F>, i: usize) -> F {
    F::from_count(data.treatment()[i] as usize) - data.pi()
}

/// Full-sample augmented estimate: ψ̂ and b̂ are fit once on all subjects,
/// and the plug-in variance re-uses the same fits.
pub fn augment_no_split<F: Scalar>(
    data: &TrialDataset<F>,
    spec: &EffectMeasureSpec<F>,
    learner: &LearnerSpec,
    rng_seed: u64,
) -> Result<EstimateReport<F>> {
    augment_no_split_with(data, spec, learner, rng_seed, F::cst(0.95))
}

pub fn augment_no_split_with<F: Scalar>(
    data: &TrialDataset<F>,
    spec: &EffectMeasureSpec<F>,
    learner: &LearnerSpec,
    rng_seed: u64,
    ci_level: F,
) -> Result<EstimateReport<F>> {
    let n = data.n();
    let nf = F::from_count(n);
    let (theta_bar, psi) = estimate_and_influence(spec, data)?;
    let problem = make_problem(data, &psi)?;
    let fitted = fit(learner, &problem, rng_seed)?;

    let mut aug_term = F::zero();
    let mut sigma2 = F::zero();
    for i in 0..n {
        let b = fitted.predict(data.covariate_row(i));
        let centered = centered_arm(data, i);
        aug_term += centered * b;
        let r = psi.values()[i] - centered * b;
        sigma2 += r * r;
    }
    aug_term /= nf;
    sigma2 /= nf;

    let theta_hat = theta_bar - aug_term;
    let se_aug = (sigma2 / nf).sqrt();
    let se_unadj = psi.estimator_variance().sqrt();
    Ok(EstimateReport {
        unadjusted: point_estimate(theta_bar, se_unadj, ci_level),
        augmented: point_estimate(theta_hat, se_aug, ci_level),
        method: learner.clone(),
        splitting: None,
        measure: spec.clone(),
        ci_level,
        seed: rng_seed,
    })
}

struct FoldOutput<F> {
    members: Vec<usize>,
    psi_oof: Vec<F>,
    b_oof: Vec<F>,
}

/// K-fold cross-fit augmented estimate. θ̄ stays full-sample; ψ̂ and b̂ are
/// fit on each fold complement and evaluated at the held-out subjects, and
/// σ̃² is assembled from those out-of-fold values. Fold learner seeds derive
/// from the complement membership, so the result is invariant to permuting
/// fold labels.
pub fn augment_cross_fit<F: Scalar>(
    data: &TrialDataset<F>,
    spec: &EffectMeasureSpec<F>,
    learner: &LearnerSpec,
    plan: &CrossFitPlan,
) -> Result<EstimateReport<F>> {
    augment_cross_fit_with(data, spec, learner, plan, F::cst(0.95))
}

pub fn augment_cross_fit_with<F: Scalar>(
    data: &TrialDataset<F>,
    spec: &EffectMeasureSpec<F>,
    learner: &LearnerSpec,
    plan: &CrossFitPlan,
    ci_level: F,
) -> Result<EstimateReport<F>> {
    let n = data.n();
    if plan.assignment().len() != n {
        return Err(Error::invalid(format!(
            "plan covers {} subjects but data has {n}",
            plan.assignment().len()
        )));
    }
    let nf = F::from_count(n);
    let (theta_bar, psi_full) = estimate_and_influence(spec, data)?;

    let folds: Vec<FoldOutput<F>> = (1..=plan.k())
        .into_par_iter()
        .map(|v| -> Result<FoldOutput<F>> {
            let members = plan.members(v);
            let comp = plan.complement(v);
            let comp_data = data.subset(&comp).map_err(|e| {
                Error::PlanInfeasible(format!("fold {v} complement unusable: {e}"))
            })?;
            let measure_fit = fit_measure(spec, &comp_data)?;
            let psi_comp = influence(spec, &comp_data)?;
            let comp_problem = make_problem(&comp_data, &psi_comp)?;
            let fold_seed = derive_seed(plan.rng_seed(), hash_indices(&comp));
            let fitted = fit(learner, &comp_problem, fold_seed)?;
            let mut psi_oof = Vec::with_capacity(members.len());
            let mut b_oof = Vec::with_capacity(members.len());
            for &i in &members {
                psi_oof.push(measure_fit.influence_at(&data.subject(i))?);
                b_oof.push(fitted.predict(data.covariate_row(i)));
            }
            Ok(FoldOutput { members, psi_oof, b_oof })
        })
        .collect::<Result<Vec<_>>>()?;

    // scatter to subject order before summing so the result does not depend
    // on how subjects were grouped into folds
    let mut psi_oof = vec![None; n];
    let mut b_oof = vec![F::zero(); n];
    for fold in &folds {
        for (j, &i) in fold.members.iter().enumerate() {
            psi_oof[i] = Some(fold.psi_oof[j]);
            b_oof[i] = fold.b_oof[j];
        }
    }
    let mut aug_term = F::zero();
    let mut sigma2 = F::zero();
    for i in 0..n {
        let psi = psi_oof[i]
            .ok_or_else(|| Error::invalid("plan does not cover every subject"))?;
        let centered = centered_arm(data, i);
        aug_term += centered * b_oof[i];
        let r = psi - centered * b_oof[i];
        sigma2 += r * r;
    }
    aug_term /= nf;
    sigma2 /= nf;

    let theta_tilde = theta_bar - aug_term;
    let se_aug = (sigma2 / nf).sqrt();
    let se_unadj = psi_full.estimator_variance().sqrt();
    Ok(EstimateReport {
        unadjusted: point_estimate(theta_bar, se_unadj, ci_level),
        augmented: point_estimate(theta_tilde, se_aug, ci_level),
        method: learner.clone(),
        splitting: Some(plan.clone()),
        measure: spec.clone(),
        ci_level,
        seed: plan.rng_seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::weighted_risk;
    use crate::measures::analytic_influence;

    fn balanced_data(n: usize) -> TrialDataset<f64> {
        let mut covariates = Vec::new();
        let mut treatment = Vec::new();
        let mut time = Vec::new();
        for i in 0..n {
            covariates.push((i as f64 * 0.61).sin() * 2.0);
            treatment.push((i % 2) as u8);
            time.push(1.0 + (i as f64 * 0.37).cos().abs() * 3.0 + 0.01 * i as f64);
        }
        TrialDataset::new(covariates, 1, treatment, time, vec![1; n], 0.5).unwrap()
    }

    #[test]
    fn zero_learner_reduces_to_unadjusted() {
        let data = balanced_data(24);
        let spec = EffectMeasureSpec::mean_diff();
        let report = augment_no_split(&data, &spec, &LearnerSpec::Zero, 3).unwrap();
        assert_eq!(report.unadjusted.point, report.augmented.point);
        assert!((report.unadjusted.se - report.augmented.se).abs() < 1e-15);
    }

    #[test]
    fn constant_covariate_balanced_arms_no_shift() {
        // constant covariate: the tree is a stump predicting a constant c;
        // with n1 = n·π exactly, Σ(A_i-π)c = 0 and θ̂ = θ̄
        let n = 24;
        let data = TrialDataset::new(
            vec![1.5; n],
            1,
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| 1.0 + 0.3 * i as f64).collect(),
            vec![1; n],
            0.5,
        )
        .unwrap();
        let spec = EffectMeasureSpec::mean_diff();
        let report = augment_no_split(&data, &spec, &LearnerSpec::tree(), 5).unwrap();
        assert!(
            (report.unadjusted.point - report.augmented.point).abs() < 1e-12,
            "{} vs {}",
            report.unadjusted.point,
            report.augmented.point
        );
    }

    #[test]
    fn augmentation_term_matches_definition() {
        // θ̄ - θ̂ must equal (1/n) Σ (A_i-π) b̂(W_i) with b̂ refit identically
        let data = balanced_data(40);
        let spec = EffectMeasureSpec::mean_diff();
        let seed = 11u64;
        let report = augment_no_split(&data, &spec, &LearnerSpec::Linear, seed).unwrap();
        let psi = analytic_influence(&spec, &data).unwrap();
        let problem = make_problem(&data, &psi).unwrap();
        let fitted = fit(&LearnerSpec::Linear, &problem, seed).unwrap();
        let term: f64 = (0..data.n())
            .map(|i| {
                (data.treatment()[i] as f64 - data.pi()) * fitted.predict(data.covariate_row(i))
            })
            .sum::<f64>()
            / data.n() as f64;
        let got = report.unadjusted.point - report.augmented.point;
        assert!((got - term).abs() < 1e-12, "{got} vs {term}");
    }

    #[test]
    fn constant_shift_of_psi_leaves_augmented_point_unchanged_when_balanced() {
        // mirrored design: each covariate value appears once per arm, so
        // Σ(A_i-π)x_i = 0 in every design coordinate and adding c to every ψ̂
        // perturbs the linear fit only in directions the augmentation term
        // cannot see
        let n = 40;
        let mut covariates = Vec::new();
        let mut treatment = Vec::new();
        let mut time = Vec::new();
        for j in 0..n / 2 {
            let w = (j as f64 * 0.61).sin() * 2.0;
            for arm in [0u8, 1u8] {
                covariates.push(w);
                treatment.push(arm);
                time.push(1.0 + (j as f64 * 0.37).cos().abs() * 3.0 + 0.2 * arm as f64);
            }
        }
        let data = TrialDataset::new(covariates, 1, treatment, time, vec![1; n], 0.5).unwrap();
        let spec = EffectMeasureSpec::mean_diff();
        let psi = analytic_influence(&spec, &data).unwrap();
        let problem = make_problem(&data, &psi).unwrap();

        let c = 2.9;
        let shifted_z: Vec<f64> = (0..data.n())
            .map(|i| {
                let centered = data.treatment()[i] as f64 - data.pi();
                (psi.values()[i] + c) / centered
            })
            .collect();
        let shifted = crate::learners::RegressionProblem::new(
            data.covariates().to_vec(),
            1,
            shifted_z,
            problem.weight().to_vec(),
            data.treatment().to_vec(),
            (0..data.n()).collect(),
        )
        .unwrap();

        let term = |p: &crate::learners::RegressionProblem<f64>| -> f64 {
            let fitted = fit(&LearnerSpec::Linear, p, 0).unwrap();
            (0..data.n())
                .map(|i| {
                    (data.treatment()[i] as f64 - data.pi())
                        * fitted.predict(data.covariate_row(i))
                })
                .sum::<f64>()
                / data.n() as f64
        };
        let base_term = term(&problem);
        let shifted_term = term(&shifted);
        assert!((base_term - shifted_term).abs() < 1e-9, "{base_term} vs {shifted_term}");
    }

    #[test]
    fn make_plan_deterministic_and_labeled() {
        let n = 100;
        let treatment: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let event: Vec<u8> = (0..n).map(|i| if i % 4 == 0 { 0 } else { 1 }).collect();
        let a = make_plan(n, &treatment, &event, 5, 77).unwrap();
        let b = make_plan(n, &treatment, &event, 5, 77).unwrap();
        assert_eq!(a.assignment(), b.assignment());
        assert!(a.assignment().iter().all(|&v| (1..=5).contains(&v)));
        let sizes: Vec<usize> = (1..=5).map(|v| a.members(v).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), n);
        assert!(sizes.iter().all(|&s| s >= 10), "{sizes:?}");
    }

    #[test]
    fn make_plan_preconditions() {
        let treatment = vec![0u8, 1, 0, 1, 0, 1, 0, 1];
        let event = vec![1u8; 8];
        assert!(make_plan(8, &treatment, &event, 1, 0).is_err());
        assert!(make_plan(8, &treatment, &event, 3, 0).is_err()); // n < 4k
    }

    #[test]
    fn make_plan_single_event_infeasible() {
        let n = 40;
        let treatment: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let mut event = vec![0u8; n];
        event[0] = 1;
        let err = make_plan(n, &treatment, &event, 5, 1).unwrap_err();
        assert!(err.to_string().contains("cross-fit plan infeasible"), "{err}");
    }

    #[test]
    fn cross_fit_zero_learner_keeps_theta_bar() {
        let data = balanced_data(40);
        let spec = EffectMeasureSpec::mean_diff();
        let plan =
            make_plan(data.n(), data.treatment(), data.event(), 4, 9).unwrap();
        let report = augment_cross_fit(&data, &spec, &LearnerSpec::Zero, &plan).unwrap();
        assert_eq!(report.unadjusted.point, report.augmented.point);
        // σ̃² is the out-of-fold plug-in variance: recompute by hand
        let mut sigma2 = 0.0;
        for v in 1..=plan.k() {
            let comp = plan.complement(v);
            let comp_data = data.subset(&comp).unwrap();
            let fit_m = fit_measure(&spec, &comp_data).unwrap();
            for i in plan.members(v) {
                let psi = fit_m.influence_at(&data.subject(i)).unwrap();
                sigma2 += psi * psi;
            }
        }
        sigma2 /= data.n() as f64;
        let want = (sigma2 / data.n() as f64).sqrt();
        assert!((report.augmented.se - want).abs() < 1e-12, "{} vs {want}", report.augmented.se);
    }

    #[test]
    fn leave_one_out_plan_permutation_invariant() {
        let n = 20;
        let data = balanced_data(n);
        let spec = EffectMeasureSpec::mean_diff();
        let assignment: Vec<usize> = (1..=n).collect();
        let plan = CrossFitPlan::from_assignment(n, assignment, 5).unwrap();
        let base = augment_cross_fit(&data, &spec, &LearnerSpec::Linear, &plan).unwrap();

        // reverse the subject order; folds follow their subjects
        let order: Vec<usize> = (0..n).rev().collect();
        let data_perm = TrialDataset::new(
            order.iter().map(|&i| data.covariates()[i]).collect(),
            1,
            order.iter().map(|&i| data.treatment()[i]).collect(),
            order.iter().map(|&i| data.time()[i]).collect(),
            order.iter().map(|&i| data.event()[i]).collect(),
            0.5,
        )
        .unwrap();
        let plan_perm =
            CrossFitPlan::from_assignment(n, (1..=n).rev().collect(), 5).unwrap();
        let perm = augment_cross_fit(&data_perm, &spec, &LearnerSpec::Linear, &plan_perm).unwrap();
        assert!(
            (base.augmented.point - perm.augmented.point).abs() < 1e-10,
            "{} vs {}",
            base.augmented.point,
            perm.augmented.point
        );
        assert!((base.augmented.se - perm.augmented.se).abs() < 1e-10);
    }

    #[test]
    fn fold_relabeling_leaves_result_identical() {
        let n = 60;
        let data = balanced_data(n);
        let spec = EffectMeasureSpec::mean_diff();
        let plan = make_plan(n, data.treatment(), data.event(), 4, 13).unwrap();
        // rotate labels 1→2→3→4→1
        let rotated: Vec<usize> =
            plan.assignment().iter().map(|&v| v % plan.k() + 1).collect();
        let plan_rot = CrossFitPlan::from_assignment(plan.k(), rotated, 13).unwrap();
        let forest = LearnerSpec::RandomForest {
            n_trees: 40,
            mtry: None,
            min_leaf_weight_fraction: 0.01,
            bootstrap: true,
        };
        let a = augment_cross_fit(&data, &spec, &forest, &plan).unwrap();
        let b = augment_cross_fit(&data, &spec, &forest, &plan_rot).unwrap();
        assert_eq!(a.augmented.point, b.augmented.point);
        assert_eq!(a.augmented.se, b.augmented.se);
    }

    #[test]
    fn confidence_interval_values() {
        let (lo, hi) = confidence_interval::<f64>(0.0, 1.0, 0.95).unwrap();
        assert!((lo + 1.959963984540054).abs() < 1e-12, "{lo}");
        assert!((hi - 1.959963984540054).abs() < 1e-12);
        let (lo, hi) = confidence_interval::<f64>(-0.385, 0.121, 0.95).unwrap();
        assert!((lo - (-0.6222)).abs() < 5e-5, "{lo}");
        assert!((hi - (-0.1478)).abs() < 5e-5, "{hi}");
        let (l90_lo, l90_hi) = confidence_interval(0.5, 2.0, 0.90).unwrap();
        let (l99_lo, l99_hi) = confidence_interval(0.5, 2.0, 0.99).unwrap();
        assert!(l99_lo < l90_lo && l99_hi > l90_hi);
        assert!(confidence_interval(0.0, 0.0, 0.95).is_err());
        assert!(confidence_interval(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cross_fit_learner_improves_risk_over_zero() {
        // sanity: with a real covariate signal the linear fold fits should
        // reduce the empirical risk relative to b ≡ 0
        let n = 80;
        let mut covariates = Vec::new();
        let mut treatment = Vec::new();
        let mut time = Vec::new();
        for i in 0..n {
            let w = (i as f64 * 0.77).sin() * 2.0;
            covariates.push(w);
            treatment.push((i % 2) as u8);
            // outcome strongly driven by w
            time.push(3.0 + w + 0.05 * (i as f64 * 1.3).cos() + if i % 2 == 1 { 0.4 } else { 0.0 });
        }
        let data = TrialDataset::new(covariates, 1, treatment, time, vec![1; n], 0.5).unwrap();
        let spec = EffectMeasureSpec::mean_diff();
        let psi = analytic_influence(&spec, &data).unwrap();
        let problem = make_problem(&data, &psi).unwrap();
        let fitted = fit(&LearnerSpec::Linear, &problem, 0).unwrap();
        let preds: Vec<f64> = (0..n).map(|i| fitted.predict(data.covariate_row(i))).collect();
        let fit_risk = weighted_risk(&problem, &preds);
        let zeros = vec![0.0; n];
        let zero_risk = weighted_risk(&problem, &zeros);
        assert!(fit_risk < 0.5 * zero_risk, "{fit_risk} vs {zero_risk}");

        let report = augment_no_split(&data, &spec, &LearnerSpec::Linear, 0).unwrap();
        assert!(report.augmented.se < report.unadjusted.se);
    }
}
