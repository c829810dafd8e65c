//! Survival primitives: Kaplan-Meier and Nelson-Aalen curves, restricted-mean
//! integration, and the unadjusted Cox partial-likelihood solver for a single
//! binary treatment covariate.
//!
//! Tied times follow the events-before-censorings convention: subjects
//! censored at `t` stay in the risk set for events at `t`. Cox ties use the
//! Breslow approximation.

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::step::StepFunction;

// ── one-sample product-limit machinery ──────────────────────────────────────

/// One distinct event time with its risk-set count and event count.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EventRow<F> {
    pub time: F,
    pub at_risk: F,
    pub events: F,
}

/// Sorted one-sample summary shared by the curve estimators and the
/// influence-function evaluation in `measures`.
#[derive(Debug, Clone)]
pub(crate) struct KmAnalysis<F> {
    /// Sample size.
    pub n: usize,
    /// All observed times, ascending, duplicates kept (risk-set queries).
    pub sorted_times: Vec<F>,
    /// Distinct event times ascending.
    pub rows: Vec<EventRow<F>>,
    /// Product-limit curve.
    pub step: StepFunction<F>,
}

fn validate_sample<F: Scalar>(times: &[F], events: &[u8]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if times.len() != events.len() {
        return Err(Error::invalid(format!(
            "times length {} differs from events length {}",
            times.len(),
            events.len()
        )));
    }
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t <= F::zero() {
            return Err(Error::invalid(format!(
                "row {i}: time must be strictly positive and finite"
            )));
        }
    }
    if let Some(i) = events.iter().position(|&e| e > 1) {
        return Err(Error::invalid(format!("row {i}: event must be 0 or 1")));
    }
    Ok(())
}

pub(crate) fn km_analysis<F: Scalar>(times: &[F], events: &[u8]) -> Result<KmAnalysis<F>> {
    validate_sample(times, events)?;
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let sorted_times: Vec<F> = order.iter().map(|&i| times[i]).collect();

    let mut rows: Vec<EventRow<F>> = Vec::new();
    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    // The product of (y-d)/y telescopes to (y_start - deaths)/y_start across
    // any stretch with no censoring, so the running value is kept as
    // coeff * (survivors in segment)/(segment start): one division per
    // emitted value, and without censoring the whole curve is the single
    // exact ratio (n - deaths)/n, equal to empirical survival to the last bit.
    let mut surv = F::one();
    let mut coeff = F::one();
    let mut seg_start = n;
    let mut seg_deaths = 0usize;
    let mut k = 0usize;
    while k < n {
        let t = sorted_times[k];
        let mut span = 0usize;
        let mut d = 0usize;
        while k + span < n && sorted_times[k + span] == t {
            if events[order[k + span]] == 1 {
                d += 1;
            }
            span += 1;
        }
        if d > 0 {
            let at_risk = n - k;
            if at_risk != seg_start - seg_deaths {
                // censoring shrank the risk set: fold the finished segment
                // into the coefficient and start a new one here
                coeff = surv;
                seg_start = at_risk;
                seg_deaths = 0;
            }
            seg_deaths += d;
            surv = coeff
                * (F::from_count(seg_start - seg_deaths) / F::from_count(seg_start));
            rows.push(EventRow {
                time: t,
                at_risk: F::from_count(at_risk),
                events: F::from_count(d),
            });
            jump_times.push(t);
            values.push(surv);
        }
        k += span;
    }
    let step = StepFunction::new(F::one(), jump_times, values)?;
    Ok(KmAnalysis { n, sorted_times, rows, step })
}

impl<F: Scalar> KmAnalysis<F> {
    /// Count of subjects with observed time `>= x`.
    pub fn at_risk_at(&self, x: F) -> F {
        let below = self.sorted_times.partition_point(|&t| t < x);
        F::from_count(self.n - below)
    }

    /// Events at exactly `x` (zero off the event grid).
    pub fn events_at(&self, x: F) -> F {
        match self.rows.binary_search_by(|r| r.time.partial_cmp(&x).unwrap()) {
            Ok(idx) => self.rows[idx].events,
            Err(_) => F::zero(),
        }
    }

    pub fn max_time(&self) -> F {
        *self.sorted_times.last().expect("non-empty sample")
    }
}

// ── public curve estimators ─────────────────────────────────────────────────

/// Kaplan-Meier product-limit estimate. Jumps only at distinct event times;
/// ties process events before censorings.
pub fn kaplan_meier<F: Scalar>(times: &[F], events: &[u8]) -> Result<StepFunction<F>> {
    Ok(km_analysis(times, events)?.step)
}

/// Nelson-Aalen cumulative hazard `Λ̂(t) = Σ_{t_k ≤ t} d_k / y_k`.
pub fn nelson_aalen<F: Scalar>(times: &[F], events: &[u8]) -> Result<StepFunction<F>> {
    let analysis = km_analysis(times, events)?;
    let mut cum = F::zero();
    let mut jump_times = Vec::with_capacity(analysis.rows.len());
    let mut values = Vec::with_capacity(analysis.rows.len());
    for row in &analysis.rows {
        cum += row.events / row.at_risk;
        jump_times.push(row.time);
        values.push(cum);
    }
    StepFunction::new(F::zero(), jump_times, values)
}

/// Restricted mean survival time: the exact area under `surv` on `[0, tau]`.
pub fn rmst<F: Scalar>(surv: &StepFunction<F>, tau: F) -> Result<F> {
    if !(tau > F::zero()) || !tau.is_finite() {
        return Err(Error::invalid("tau must be strictly positive and finite"));
    }
    Ok(surv.integral_to(tau))
}

// ── Cox partial likelihood, single binary covariate, Breslow ties ───────────

/// Per-event-time counts sufficient for the binary-covariate partial
/// likelihood: with `S0 = n0 + n1 e^β` and `S1 = n1 e^β`, every Newton
/// quantity is a sum over these rows.
#[derive(Debug, Clone, Copy)]
struct CoxRow<F> {
    #[allow(dead_code)]
    time: F,
    n0: F, // at risk, arm 0
    n1: F, // at risk, arm 1
    d: F,  // events at this time
    d1: F, // events in arm 1
}

/// Fitted unadjusted Cox model.
#[derive(Debug, Clone)]
pub struct CoxFit<F> {
    /// Maximum partial likelihood estimate of the log hazard ratio.
    pub log_hr: F,
    /// Observed information (sum form) at the maximizer.
    pub information: F,
    /// Lin-Wei score residuals `U_i`, one per subject; they sum to the score
    /// at the maximizer, which is zero up to the convergence tolerance.
    pub score_residuals: Vec<F>,
    pub(crate) eval: CoxEval<F>,
}

/// Everything needed to evaluate the fitted model's score contribution at an
/// arbitrary (possibly held-out) subject.
#[derive(Debug, Clone)]
pub(crate) struct CoxEval<F> {
    pub beta: F,
    pub information: F,
    pub n: usize,
    times0: Vec<F>, // sorted observed times, arm 0
    times1: Vec<F>, // sorted observed times, arm 1
    ev_times: Vec<F>,
    m_rows: Vec<F>,    // risk-set mean of A at each event time
    cum_haz: Vec<F>,   // inclusive prefix of d_l / S0_l (Breslow baseline)
    cum_m_haz: Vec<F>, // inclusive prefix of m_l d_l / S0_l
}

impl<F: Scalar> CoxEval<F> {
    /// Risk-set mean of the treatment indicator at time `x`; when nobody in
    /// the fit sample is at risk (held-out `x` beyond its support) the last
    /// supported value is carried forward.
    fn risk_mean_at(&self, x: F) -> F {
        let n0 = F::from_count(self.times0.len() - self.times0.partition_point(|&t| t < x));
        let n1 = F::from_count(self.times1.len() - self.times1.partition_point(|&t| t < x));
        let e = self.beta.exp();
        let s0 = n0 + n1 * e;
        if s0 > F::zero() {
            n1 * e / s0
        } else {
            *self.m_rows.last().expect("cox fit has at least one event")
        }
    }

    /// Score contribution `U` of a subject `(a, x, δ)` against this fit:
    /// the event jump `δ(a - m(x))` minus the compensator
    /// `e^{βa} Σ_{t_l ≤ x} (a - m_l) d_l / S0_l`.
    pub fn score_at(&self, a: u8, x: F, delta: u8) -> F {
        let af = F::from_count(a as usize);
        let idx = self.ev_times.partition_point(|&t| t <= x);
        let comp = if idx == 0 {
            F::zero()
        } else {
            (af * self.cum_haz[idx - 1] - self.cum_m_haz[idx - 1]) * (self.beta * af).exp()
        };
        let jump = if delta == 1 { af - self.risk_mean_at(x) } else { F::zero() };
        jump - comp
    }

    /// Influence value `ψ = n Î⁻¹ U`, normalized so `(1/n²) Σ ψ²` estimates
    /// the variance of the log-HR estimator.
    pub fn influence_at(&self, a: u8, x: F, delta: u8) -> F {
        F::from_count(self.n) / self.information * self.score_at(a, x, delta)
    }
}

fn cox_rows<F: Scalar>(data: &TrialDataset<F>) -> (Vec<CoxRow<F>>, Vec<F>, Vec<F>) {
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let times = data.time();
    order.sort_unstable_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());

    let mut rows = Vec::new();
    let mut k = 0usize;
    let mut risk0 = data.n_arm(0);
    let mut risk1 = data.n_arm(1);
    while k < n {
        let t = times[order[k]];
        let mut span = 0usize;
        let mut d = 0usize;
        let mut d1 = 0usize;
        let mut leaving1 = 0usize;
        while k + span < n && times[order[k + span]] == t {
            let i = order[k + span];
            if data.event()[i] == 1 {
                d += 1;
                if data.treatment()[i] == 1 {
                    d1 += 1;
                }
            }
            if data.treatment()[i] == 1 {
                leaving1 += 1;
            }
            span += 1;
        }
        if d > 0 {
            rows.push(CoxRow {
                time: t,
                n0: F::from_count(risk0),
                n1: F::from_count(risk1),
                d: F::from_count(d),
                d1: F::from_count(d1),
            });
        }
        risk1 -= leaving1;
        risk0 -= span - leaving1;
        k += span;
    }
    let mut times0: Vec<F> = Vec::with_capacity(data.n_arm(0));
    let mut times1: Vec<F> = Vec::with_capacity(data.n_arm(1));
    for (&t, &a) in times.iter().zip(data.treatment()) {
        if a == 1 {
            times1.push(t);
        } else {
            times0.push(t);
        }
    }
    times0.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    times1.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    (rows, times0, times1)
}

fn partial_loglik<F: Scalar>(rows: &[CoxRow<F>], beta: F) -> F {
    let e = beta.exp();
    rows.iter()
        .map(|r| beta * r.d1 - r.d * (r.n0 + r.n1 * e).ln())
        .sum()
}

fn score_info<F: Scalar>(rows: &[CoxRow<F>], beta: F) -> (F, F) {
    let e = beta.exp();
    let mut score = F::zero();
    let mut info = F::zero();
    for r in rows {
        let s0 = r.n0 + r.n1 * e;
        let m = r.n1 * e / s0;
        score += r.d1 - r.d * m;
        info += r.d * m * (F::one() - m);
    }
    (score, info)
}

const MAX_ABS_LOG_HR: f64 = 15.0;

/// Newton-Raphson maximizer of the Breslow partial likelihood in the single
/// binary covariate `A`. Converges when `|score| < 1e-9` or the relative
/// step falls below 1e-10; step-halving keeps the log likelihood increasing.
pub fn cox_unadjusted<F: Scalar>(data: &TrialDataset<F>) -> Result<CoxFit<F>> {
    let d1_total: usize = (0..data.n())
        .filter(|&i| data.event()[i] == 1 && data.treatment()[i] == 1)
        .count();
    let d_total: usize = data.event().iter().filter(|&&e| e == 1).count();
    if d1_total == 0 || d1_total == d_total {
        return Err(Error::DegenerateLikelihood("all events in one arm".into()));
    }

    let (rows, times0, times1) = cox_rows(data);
    let score_tol = F::cst(1e-9);
    let step_tol = F::cst(1e-10);
    let mut beta = F::zero();
    let mut loglik = partial_loglik(&rows, beta);
    let mut converged = false;
    for _ in 0..50 {
        let (score, info) = score_info(&rows, beta);
        if !(info > F::zero()) {
            return Err(Error::DegenerateLikelihood(
                "no between-arm information in any risk set".into(),
            ));
        }
        if score.abs() < score_tol {
            converged = true;
            break;
        }
        let mut step = score / info;
        // step-halving until the partial log likelihood does not decrease
        let mut candidate = beta + step;
        let mut cand_loglik = partial_loglik(&rows, candidate);
        let mut halvings = 0;
        while cand_loglik < loglik && halvings < 40 {
            step *= F::cst(0.5);
            candidate = beta + step;
            cand_loglik = partial_loglik(&rows, candidate);
            halvings += 1;
        }
        let rel_step = step.abs() / candidate.abs().max(F::one());
        beta = candidate;
        loglik = cand_loglik;
        if beta.abs() > F::cst(MAX_ABS_LOG_HR) {
            return Err(Error::DegenerateLikelihood(format!(
                "estimate diverging, |log HR| > {MAX_ABS_LOG_HR} (monotone likelihood)"
            )));
        }
        if rel_step < step_tol {
            converged = true;
            break;
        }
    }
    let (score, info) = score_info(&rows, beta);
    if !converged && score.abs() >= score_tol {
        return Err(Error::DegenerateLikelihood(
            "Newton iteration did not converge in 50 steps".into(),
        ));
    }
    if !(info > F::zero()) {
        return Err(Error::DegenerateLikelihood(
            "no between-arm information in any risk set".into(),
        ));
    }

    // per-event-time quantities for residual evaluation
    let e = beta.exp();
    let mut ev_times = Vec::with_capacity(rows.len());
    let mut m_rows = Vec::with_capacity(rows.len());
    let mut cum_haz = Vec::with_capacity(rows.len());
    let mut cum_m_haz = Vec::with_capacity(rows.len());
    let mut ch = F::zero();
    let mut cmh = F::zero();
    for r in &rows {
        let s0 = r.n0 + r.n1 * e;
        let m = r.n1 * e / s0;
        ch += r.d / s0;
        cmh += m * r.d / s0;
        ev_times.push(r.time);
        m_rows.push(m);
        cum_haz.push(ch);
        cum_m_haz.push(cmh);
    }
    let eval = CoxEval {
        beta,
        information: info,
        n: data.n(),
        times0,
        times1,
        ev_times,
        m_rows,
        cum_haz,
        cum_m_haz,
    };
    let score_residuals: Vec<F> = (0..data.n())
        .map(|i| eval.score_at(data.treatment()[i], data.time()[i], data.event()[i]))
        .collect();
    Ok(CoxFit { log_hr: beta, information: info, score_residuals, eval })
}
