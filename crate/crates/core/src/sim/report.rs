//! CSV and text rendering of Monte Carlo results.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{MonteCarloResult, SimMetrics};

fn csv_field(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:.decimals$}")
    }
}

/// One row per (scenario cell, measure, estimator, split choice).
pub fn metrics_csv(results: &[MonteCarloResult]) -> String {
    let mut out = String::from(
        "scenario,gamma,pi,n,measure,estimator,split,bias,sd,re,cp,n_reps,n_failures\n",
    );
    for result in results {
        let s = &result.scenario;
        for cell in &result.cells {
            for m in &cell.metrics {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    s.scenario,
                    s.gamma,
                    s.pi,
                    s.n,
                    cell.measure_label,
                    m.estimator_id,
                    m.split,
                    csv_field(m.bias, 6),
                    csv_field(m.sd, 6),
                    csv_field(m.re, 6),
                    csv_field(m.cp, 6),
                    m.n_reps,
                    m.n_failures
                );
            }
        }
    }
    out
}

/// One row per replicate and estimator, including failures.
pub fn replicates_csv(results: &[MonteCarloResult]) -> String {
    let mut out = String::from(
        "scenario,gamma,pi,n,rep,measure,estimator,split,estimate,se,ci_low,ci_high,error\n",
    );
    for result in results {
        let s = &result.scenario;
        for r in &result.replicates {
            let error = match &r.error {
                Some(e) => e.replace([',', '\n'], ";"),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.scenario,
                s.gamma,
                s.pi,
                s.n,
                r.rep,
                r.measure,
                r.estimator,
                r.split,
                csv_field(r.estimate, 8),
                csv_field(r.se, 8),
                csv_field(r.ci.0, 8),
                csv_field(r.ci.1, 8),
                error
            );
        }
    }
    out
}

fn fmt_metric(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        format!("{:>7}", ".")
    } else {
        format!("{v:>7.decimals$}")
    }
}

fn metric_block(m: Option<&SimMetrics>) -> String {
    match m {
        Some(m) => {
            let flag = if m.flagged { "!" } else { " " };
            format!(
                "{} {} {} {}{}",
                fmt_metric(m.bias, 3),
                fmt_metric(m.sd, 3),
                fmt_metric(m.re, 2),
                fmt_metric(m.cp, 2),
                flag
            )
        }
        None => format!("{:>7} {:>7} {:>7} {:>7} ", ".", ".", ".", "."),
    }
}

/// Text tables grouped by scenario cell and measure. Estimators evaluated
/// both with and without splitting share a row with two metric blocks.
pub fn render_tables(results: &[MonteCarloResult]) -> String {
    let mut out = String::new();
    let mut any_flag = false;
    for result in results {
        let s = &result.scenario;
        let _ = writeln!(
            out,
            "Scenario {}  gamma={}  pi={}  n={}  ({} replicates)",
            s.scenario, s.gamma, s.pi, s.n, result.n_reps
        );
        for cell in &result.cells {
            let tau = match cell.tau {
                Some(t) => format!(", tau={t}"),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "  measure: {}{}  (true value {:.4})",
                cell.measure_label, tau, cell.true_value
            );
            let _ = writeln!(
                out,
                "  {:<14} {:>31}  {:>31}",
                "", "--- without splitting ---", "---- with splitting ----"
            );
            let _ = writeln!(
                out,
                "  {:<14} {:>7} {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7} {:>7}",
                "estimator", "bias", "sd", "re", "cp", "bias", "sd", "re", "cp"
            );
            let mut labels: Vec<String> = Vec::new();
            let mut seen = BTreeSet::new();
            for m in &cell.metrics {
                if seen.insert(m.estimator_id.clone()) {
                    labels.push(m.estimator_id.clone());
                }
            }
            for label in &labels {
                let no_split = cell
                    .metrics
                    .iter()
                    .find(|m| &m.estimator_id == label && m.split == 0);
                let split = cell
                    .metrics
                    .iter()
                    .find(|m| &m.estimator_id == label && m.split > 0);
                any_flag |= no_split.map(|m| m.flagged).unwrap_or(false)
                    || split.map(|m| m.flagged).unwrap_or(false);
                let _ = writeln!(
                    out,
                    "  {:<14} {} {}",
                    label,
                    metric_block(no_split),
                    metric_block(split)
                );
            }
            out.push('\n');
        }
    }
    if any_flag {
        out.push_str("! more than 1% of replicates failed for this estimator\n");
    }
    out
}
