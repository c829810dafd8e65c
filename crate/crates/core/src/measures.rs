//! Treatment-effect measures as (estimator, influence vector) pairs.
//!
//! Every measure exposes a point estimate and per-subject influence values
//! ψ̂(O_i) normalized so that `(1/n²) Σ ψ̂_i²` estimates the variance of the
//! point estimator. Built-in measures carry closed-form influence values;
//! user-supplied measures fall back to the delete-one jackknife.
//!
//! The survival-curve influence values use the weight-derivative form with
//! `1/(y_k - d_k)` event terms rather than the textbook martingale `1/y_k`
//! form: with that choice the within-arm sum of squares reproduces the
//! Greenwood variance exactly, not just asymptotically, which the tests pin
//! at 1e-10 relative.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{SubjectObs, TrialDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::survival::{cox_unadjusted, km_analysis, CoxEval, KmAnalysis};

// ── identifiers ─────────────────────────────────────────────────────────────

/// Which effect measure an influence vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureId {
    LogHr,
    SurvDiff,
    RmstDiff,
    MeanDiff,
    Custom,
}

impl MeasureId {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasureId::LogHr => "log_hr",
            MeasureId::SurvDiff => "surv_diff",
            MeasureId::RmstDiff => "rmst_diff",
            MeasureId::MeanDiff => "mean_diff",
            MeasureId::Custom => "custom",
        }
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the influence vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Jackknife,
}

/// Requested influence computation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceMode {
    Analytic,
    Jackknife,
}

// ── measure specification ───────────────────────────────────────────────────

pub type CustomEstimator<F> = Arc<dyn Fn(&TrialDataset<F>) -> Result<F> + Send + Sync>;
pub type CustomInfluence<F> = Arc<dyn Fn(&TrialDataset<F>) -> Result<Vec<F>> + Send + Sync>;

#[derive(Clone)]
enum MeasureKind<F> {
    LogHr,
    SurvDiff { tau: F },
    RmstDiff { tau: F },
    MeanDiff,
    Custom {
        label: String,
        estimator: CustomEstimator<F>,
        influence: Option<CustomInfluence<F>>,
    },
}

/// An effect measure: selects the estimator θ̄ and the influence path.
#[derive(Clone)]
pub struct EffectMeasureSpec<F> {
    kind: MeasureKind<F>,
    influence_mode: InfluenceMode,
}

impl<F: Scalar> EffectMeasureSpec<F> {
    /// Log hazard ratio from the unadjusted Cox model.
    pub fn log_hr() -> Self {
        Self { kind: MeasureKind::LogHr, influence_mode: InfluenceMode::Analytic }
    }

    /// Difference in Kaplan-Meier survival probabilities at `tau`.
    pub fn surv_diff(tau: F) -> Self {
        Self { kind: MeasureKind::SurvDiff { tau }, influence_mode: InfluenceMode::Analytic }
    }

    /// Difference in restricted mean survival time over `[0, tau]`.
    pub fn rmst_diff(tau: F) -> Self {
        Self { kind: MeasureKind::RmstDiff { tau }, influence_mode: InfluenceMode::Analytic }
    }

    /// Difference in arm means of the observed time; valid only when every
    /// subject is uncensored.
    pub fn mean_diff() -> Self {
        Self { kind: MeasureKind::MeanDiff, influence_mode: InfluenceMode::Analytic }
    }

    /// User-supplied estimator; influence values come from the jackknife.
    pub fn custom(label: impl Into<String>, estimator: CustomEstimator<F>) -> Self {
        Self {
            kind: MeasureKind::Custom { label: label.into(), estimator, influence: None },
            influence_mode: InfluenceMode::Jackknife,
        }
    }

    /// User-supplied estimator with its own analytic influence function.
    pub fn custom_with_influence(
        label: impl Into<String>,
        estimator: CustomEstimator<F>,
        influence: CustomInfluence<F>,
    ) -> Self {
        Self {
            kind: MeasureKind::Custom {
                label: label.into(),
                estimator,
                influence: Some(influence),
            },
            influence_mode: InfluenceMode::Analytic,
        }
    }

    /// Switch the influence path. A custom measure without an analytic
    /// influence function stays on the jackknife regardless.
    pub fn with_influence_mode(mut self, mode: InfluenceMode) -> Self {
        let forced_jackknife = matches!(
            &self.kind,
            MeasureKind::Custom { influence: None, .. }
        );
        self.influence_mode = if forced_jackknife { InfluenceMode::Jackknife } else { mode };
        self
    }

    pub fn influence_mode(&self) -> InfluenceMode {
        self.influence_mode
    }

    pub fn id(&self) -> MeasureId {
        match &self.kind {
            MeasureKind::LogHr => MeasureId::LogHr,
            MeasureKind::SurvDiff { .. } => MeasureId::SurvDiff,
            MeasureKind::RmstDiff { .. } => MeasureId::RmstDiff,
            MeasureKind::MeanDiff => MeasureId::MeanDiff,
            MeasureKind::Custom { .. } => MeasureId::Custom,
        }
    }

    /// Horizon for the survival-curve measures, if any.
    pub fn tau(&self) -> Option<F> {
        match &self.kind {
            MeasureKind::SurvDiff { tau } | MeasureKind::RmstDiff { tau } => Some(*tau),
            _ => None,
        }
    }

    /// Short name for reports: built-in id or the custom label.
    pub fn label(&self) -> &str {
        match &self.kind {
            MeasureKind::Custom { label, .. } => label,
            _ => self.id().as_str(),
        }
    }
}

impl<F: Scalar> fmt::Debug for EffectMeasureSpec<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EffectMeasureSpec({}, {:?})", self.label(), self.influence_mode)
    }
}

// ── influence vector ────────────────────────────────────────────────────────

/// Per-subject influence values with their provenance.
#[derive(Debug, Clone)]
pub struct InfluenceVector<F> {
    values: Vec<F>,
    measure_id: MeasureId,
    provenance: Provenance,
}

impl<F: Scalar> InfluenceVector<F> {
    /// Validates finiteness and the mean-zero normalization contract
    /// (|mean| ≤ 1e-6 · sd).
    pub fn new(values: Vec<F>, measure_id: MeasureId, provenance: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("influence vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("influence value {i} is not finite")));
        }
        let n = F::from_count(values.len());
        let mean = values.iter().copied().sum::<F>() / n;
        let sd = (values.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n).sqrt();
        if mean.abs() > F::cst(1e-6) * sd {
            return Err(Error::invalid(format!(
                "influence vector mean {mean} exceeds 1e-6 of its sd {sd}"
            )));
        }
        Ok(Self { values, measure_id, provenance })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn measure_id(&self) -> MeasureId {
        self.measure_id
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn mean(&self) -> F {
        self.values.iter().copied().sum::<F>() / F::from_count(self.values.len())
    }

    /// `(1/n²) Σ ψ̂_i²`: the plug-in variance estimate of the point estimator.
    pub fn estimator_variance(&self) -> F {
        let n = F::from_count(self.values.len());
        self.values.iter().map(|&v| v * v).sum::<F>() / (n * n)
    }
}

// ── per-arm survival-curve influence machinery ──────────────────────────────

/// One arm's product-limit fit plus the per-event-time ingredients of the
/// weight-derivative influence values, queryable at arbitrary subjects.
pub(crate) struct ArmCurve<F> {
    analysis: KmAnalysis<F>,
    tau: F,
    s_tau: F,
    /// Restricted mean over [0, tau].
    area_tau: F,
    /// Prefix sums (inclusive, aligned with analysis.rows) of
    /// g_k = d_k / (y_k (y_k - d_k)), zero where y_k = d_k.
    g_prefix: Vec<F>,
    /// Prefix sums of g_k · μ(t_k, tau) with μ(a,b) = ∫_a^b Ŝ.
    g_area_prefix: Vec<F>,
}

impl<F: Scalar> ArmCurve<F> {
    fn new(times: &[F], events: &[u8], tau: F) -> Result<Self> {
        let analysis = km_analysis(times, events)?;
        if tau > analysis.max_time() {
            return Err(Error::TauOutsideSupport(format!(
                "tau {tau} exceeds the last observed time {}",
                analysis.max_time()
            )));
        }
        let s_tau = analysis.step.value_at(tau);
        let area_tau = analysis.step.integral_to(tau);
        let mut g_prefix = Vec::with_capacity(analysis.rows.len());
        let mut g_area_prefix = Vec::with_capacity(analysis.rows.len());
        let mut gp = F::zero();
        let mut gap = F::zero();
        for row in &analysis.rows {
            // rows with y = d terminate the curve at zero; their weight
            // derivative vanishes, so they contribute nothing
            let g = if row.at_risk > row.events {
                row.events / (row.at_risk * (row.at_risk - row.events))
            } else {
                F::zero()
            };
            let mu = if row.time <= tau {
                analysis.step.integral_between(row.time, tau)
            } else {
                F::zero()
            };
            gp += g;
            gap += g * mu;
            g_prefix.push(gp);
            g_area_prefix.push(gap);
        }
        Ok(Self { analysis, tau, s_tau, area_tau, g_prefix, g_area_prefix })
    }

    /// Event-jump reciprocal at time `x`: `1/(y(x) - d(x))` from this arm's
    /// counts. Rows with y = d contribute zero (terminal row convention);
    /// beyond the fitted support the denominator is floored at one.
    fn jump_term(&self, x: F) -> F {
        let y = self.analysis.at_risk_at(x);
        let d = self.analysis.events_at(x);
        if y > d {
            (y - d).recip()
        } else if d > F::zero() {
            F::zero()
        } else {
            F::one()
        }
    }

    fn prefix_index(&self, x: F) -> usize {
        let cut = if x < self.tau { x } else { self.tau };
        self.analysis.rows.partition_point(|r| r.time <= cut)
    }

    /// Weight derivative of Ŝ(tau) for a subject `(x, δ)` of this arm.
    fn u_surv(&self, x: F, delta: u8) -> F {
        let idx = self.prefix_index(x);
        let g = if idx == 0 { F::zero() } else { self.g_prefix[idx - 1] };
        let jump = if delta == 1 && x <= self.tau { self.jump_term(x) } else { F::zero() };
        -self.s_tau * (jump - g)
    }

    /// Weight derivative of ∫₀^tau Ŝ for a subject `(x, δ)` of this arm.
    fn u_rmst(&self, x: F, delta: u8) -> F {
        let idx = self.prefix_index(x);
        let g_area = if idx == 0 { F::zero() } else { self.g_area_prefix[idx - 1] };
        let jump = if delta == 1 && x <= self.tau {
            self.jump_term(x) * self.analysis.step.integral_between(x, self.tau)
        } else {
            F::zero()
        };
        -(jump - g_area)
    }
}

// ── fitted measure: estimate plus influence evaluation at any subject ───────

/// A measure fit on one sample, able to produce the point estimate and to
/// evaluate influence values both for its own subjects and for held-out ones
/// (the cross-fitting path).
pub(crate) enum MeasureFit<F> {
    Cox(CoxEval<F>),
    KmDiff { arm0: ArmCurve<F>, arm1: ArmCurve<F>, n_fit: usize, estimate: F, rmst: bool },
    MeanDiff { mean0: F, mean1: F, pi: F, estimate: F },
    AddOne { spec: EffectMeasureSpec<F>, fit_data: TrialDataset<F>, estimate: F },
}

impl<F: Scalar> MeasureFit<F> {
    pub fn estimate(&self) -> F {
        match self {
            MeasureFit::Cox(eval) => eval.beta,
            MeasureFit::KmDiff { estimate, .. }
            | MeasureFit::MeanDiff { estimate, .. }
            | MeasureFit::AddOne { estimate, .. } => *estimate,
        }
    }

    /// Influence value of this fit at one subject (in-sample or held out).
    pub fn influence_at(&self, obs: &SubjectObs<'_, F>) -> Result<F> {
        match self {
            MeasureFit::Cox(eval) => Ok(eval.influence_at(obs.treatment, obs.time, obs.event)),
            MeasureFit::KmDiff { arm0, arm1, n_fit, rmst, .. } => {
                let n = F::from_count(*n_fit);
                let u = if obs.treatment == 1 {
                    let arm = arm1;
                    if *rmst { arm.u_rmst(obs.time, obs.event) } else { arm.u_surv(obs.time, obs.event) }
                } else {
                    let arm = arm0;
                    let v =
                        if *rmst { arm.u_rmst(obs.time, obs.event) } else { arm.u_surv(obs.time, obs.event) };
                    -v
                };
                Ok(n * u)
            }
            MeasureFit::MeanDiff { mean0, mean1, pi, .. } => {
                if obs.event != 1 {
                    return Err(Error::invalid("mean_diff requires uncensored data"));
                }
                let x = obs.time;
                Ok(if obs.treatment == 1 {
                    (x - *mean1) / *pi
                } else {
                    -(x - *mean0) / (F::one() - *pi)
                })
            }
            MeasureFit::AddOne { spec, fit_data, estimate } => {
                let grown = fit_data.with_appended(*obs)?;
                let theta = crate::measures::estimate(spec, &grown)?;
                Ok(F::from_count(fit_data.n()) * (theta - *estimate))
            }
        }
    }
}

fn arm_series<F: Scalar>(data: &TrialDataset<F>, arm: u8) -> (Vec<F>, Vec<u8>) {
    let mut times = Vec::new();
    let mut events = Vec::new();
    for i in 0..data.n() {
        if data.treatment()[i] == arm {
            times.push(data.time()[i]);
            events.push(data.event()[i]);
        }
    }
    (times, events)
}

fn km_diff_fit<F: Scalar>(data: &TrialDataset<F>, tau: F, rmst: bool) -> Result<MeasureFit<F>> {
    if !(tau > F::zero()) || !tau.is_finite() {
        return Err(Error::invalid("tau must be strictly positive and finite"));
    }
    let (t0, e0) = arm_series(data, 0);
    let (t1, e1) = arm_series(data, 1);
    let arm0 = ArmCurve::new(&t0, &e0, tau)?;
    let arm1 = ArmCurve::new(&t1, &e1, tau)?;
    let estimate = if rmst {
        arm1.area_tau - arm0.area_tau
    } else {
        arm1.s_tau - arm0.s_tau
    };
    Ok(MeasureFit::KmDiff { arm0, arm1, n_fit: data.n(), estimate, rmst })
}

fn mean_diff_fit<F: Scalar>(data: &TrialDataset<F>) -> Result<MeasureFit<F>> {
    if data.event().contains(&0) {
        return Err(Error::invalid("mean_diff requires uncensored data"));
    }
    let mut sums = [F::zero(); 2];
    let mut counts = [0usize; 2];
    for i in 0..data.n() {
        let a = data.treatment()[i] as usize;
        sums[a] += data.time()[i];
        counts[a] += 1;
    }
    let mean0 = sums[0] / F::from_count(counts[0]);
    let mean1 = sums[1] / F::from_count(counts[1]);
    Ok(MeasureFit::MeanDiff { mean0, mean1, pi: data.pi(), estimate: mean1 - mean0 })
}

/// Fit `spec` on `fit_data` so that influence values can be evaluated at
/// arbitrary subjects. Built-in measures in analytic mode get closed forms;
/// everything else gets the add-one empirical influence
/// `n_fit · (θ̂_{fit+obs} − θ̂_fit)`.
pub(crate) fn fit_measure<F: Scalar>(
    spec: &EffectMeasureSpec<F>,
    fit_data: &TrialDataset<F>,
) -> Result<MeasureFit<F>> {
    let analytic = spec.influence_mode == InfluenceMode::Analytic;
    match (&spec.kind, analytic) {
        (MeasureKind::LogHr, true) => Ok(MeasureFit::Cox(cox_unadjusted(fit_data)?.eval)),
        (MeasureKind::SurvDiff { tau }, true) => km_diff_fit(fit_data, *tau, false),
        (MeasureKind::RmstDiff { tau }, true) => km_diff_fit(fit_data, *tau, true),
        (MeasureKind::MeanDiff, true) => mean_diff_fit(fit_data),
        _ => Ok(MeasureFit::AddOne {
            spec: spec.clone(),
            fit_data: fit_data.clone(),
            estimate: estimate(spec, fit_data)?,
        }),
    }
}

// ── public operations ───────────────────────────────────────────────────────

/// Point estimate θ̄ of the chosen measure.
pub fn estimate<F: Scalar>(spec: &EffectMeasureSpec<F>, data: &TrialDataset<F>) -> Result<F> {
    match &spec.kind {
        MeasureKind::LogHr => Ok(cox_unadjusted(data)?.log_hr),
        MeasureKind::SurvDiff { tau } => Ok(km_diff_fit(data, *tau, false)?.estimate()),
        MeasureKind::RmstDiff { tau } => Ok(km_diff_fit(data, *tau, true)?.estimate()),
        MeasureKind::MeanDiff => Ok(mean_diff_fit(data)?.estimate()),
        MeasureKind::Custom { estimator, .. } => estimator(data),
    }
}

/// Closed-form influence values of the built-in measures (or a supplied
/// custom influence function). `(1/n)Σψ̂_i` is zero up to roundoff and
/// `(1/n²)Σψ̂_i²` estimates the variance of the point estimator.
pub fn analytic_influence<F: Scalar>(
    spec: &EffectMeasureSpec<F>,
    data: &TrialDataset<F>,
) -> Result<InfluenceVector<F>> {
    if let MeasureKind::Custom { influence, .. } = &spec.kind {
        let f = influence.as_ref().ok_or_else(|| {
            Error::invalid("custom measure has no analytic influence function")
        })?;
        let values = f(data)?;
        if values.len() != data.n() {
            return Err(Error::invalid(format!(
                "custom influence length {} differs from sample size {}",
                values.len(),
                data.n()
            )));
        }
        return InfluenceVector::new(values, MeasureId::Custom, Provenance::Analytic);
    }
    let fit = fit_measure(spec, data)?;
    let mut values = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        values.push(fit.influence_at(&data.subject(i))?);
    }
    InfluenceVector::new(values, spec.id(), Provenance::Analytic)
}

/// Delete-one jackknife influence values `(n-1)(θ̂ - θ̂_{-i})`, centered to
/// mean exactly zero. Leave-one-out fits run in parallel; results do not
/// depend on evaluation order.
pub fn jackknife_influence<F: Scalar>(
    spec: &EffectMeasureSpec<F>,
    data: &TrialDataset<F>,
) -> Result<InfluenceVector<F>> {
    let n = data.n();
    let theta = estimate(spec, data)?;
    let raw: Vec<F> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<F> {
            let reduced = data.leave_one_out(i).map_err(|e| Error::JackknifeSubject {
                subject: i,
                reason: e.to_string(),
            })?;
            let theta_i = estimate(spec, &reduced).map_err(|e| Error::JackknifeSubject {
                subject: i,
                reason: e.to_string(),
            })?;
            Ok(F::from_count(n - 1) * (theta - theta_i))
        })
        .collect::<Result<Vec<F>>>()?;
    let mean = raw.iter().copied().sum::<F>() / F::from_count(n);
    let values: Vec<F> = raw.into_iter().map(|v| v - mean).collect();
    InfluenceVector::new(values, spec.id(), Provenance::Jackknife)
}

/// Influence values along the path the measure's influence mode requests.
pub fn influence<F: Scalar>(
    spec: &EffectMeasureSpec<F>,
    data: &TrialDataset<F>,
) -> Result<InfluenceVector<F>> {
    match spec.influence_mode {
        InfluenceMode::Analytic => analytic_influence(spec, data),
        InfluenceMode::Jackknife => jackknife_influence(spec, data),
    }
}

/// Point estimate and influence values from a single fit of the measure.
pub fn estimate_and_influence<F: Scalar>(
    spec: &EffectMeasureSpec<F>,
    data: &TrialDataset<F>,
) -> Result<(F, InfluenceVector<F>)> {
    match spec.influence_mode {
        InfluenceMode::Analytic => {
            if matches!(&spec.kind, MeasureKind::Custom { .. }) {
                return Ok((estimate(spec, data)?, analytic_influence(spec, data)?));
            }
            let fit = fit_measure(spec, data)?;
            let mut values = Vec::with_capacity(data.n());
            for i in 0..data.n() {
                values.push(fit.influence_at(&data.subject(i))?);
            }
            let psi = InfluenceVector::new(values, spec.id(), Provenance::Analytic)?;
            Ok((fit.estimate(), psi))
        }
        InfluenceMode::Jackknife => {
            Ok((estimate(spec, data)?, jackknife_influence(spec, data)?))
        }
    }
}
