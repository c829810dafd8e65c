//! The `analyze` subcommand: one augmented analysis of a CSV trial export.
//! Prints an unadjusted row and one augmented row per fitted learner; with
//! `--learner super` every candidate is shown alongside the combined fit,
//! all sharing the same fold plan.

use crate::ingest::{imputed_note, ingest_csv, ColumnRoles, Ingested, MissingPolicy};
use crate::{fail, AppResult};
use augsurv::augment::{
    augment_cross_fit_with, augment_no_split_with, make_plan, CrossFitPlan, PointEstimate,
};
use augsurv::learners::LearnerSpec;
use augsurv::{Dataset, Measure};
use clap::{Args, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    /// Log hazard ratio from an unadjusted proportional-hazards fit.
    LogHr,
    /// Difference in survival probability at --tau.
    SurvDiff,
    /// Difference in restricted mean survival time over [0, --tau].
    RmstDiff,
    /// Difference in mean time; requires fully uncensored data.
    MeanDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Linear,
    Spline,
    Tree,
    Forest,
    /// Cross-validated convex combination of the candidate learners.
    Super,
}

impl LearnerArg {
    fn spec(self) -> LearnerSpec {
        match self {
            LearnerArg::Linear => LearnerSpec::Linear,
            LearnerArg::Spline => LearnerSpec::SplineAdditive,
            LearnerArg::Tree => LearnerSpec::tree(),
            LearnerArg::Forest => LearnerSpec::random_forest(),
            LearnerArg::Super => LearnerSpec::default_super_learner(),
        }
    }
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// CSV file with a header row and one row per subject.
    #[arg(long)]
    pub input: PathBuf,
    /// Column with the observed time (event or censoring, whichever first).
    #[arg(long)]
    pub time: String,
    /// Column with the event indicator (1 = event, 0 = censored).
    #[arg(long)]
    pub event: String,
    /// Column with the treatment arm (1 = experimental, 0 = control).
    #[arg(long)]
    pub trt: String,
    /// Comma-separated continuous covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub cont: Vec<String>,
    /// Comma-separated categorical covariate columns (one-hot expanded).
    #[arg(long, value_delimiter = ',')]
    pub cat: Vec<String>,
    /// Randomization probability P(treatment = 1).
    #[arg(long, default_value_t = 0.5)]
    pub pi: f64,
    #[arg(long, value_enum)]
    pub measure: MeasureArg,
    /// Horizon for surv-diff and rmst-diff, in the time column's unit.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = LearnerArg::Linear)]
    pub learner: LearnerArg,
    /// Candidate learners for --learner super (default: linear,spline,tree,forest).
    #[arg(long, value_delimiter = ',', value_enum)]
    pub candidates: Option<Vec<LearnerArg>>,
    /// Cross-fit folds; 0 fits on the full sample without splitting.
    #[arg(long, default_value_t = 5)]
    pub k_folds: usize,
    /// Seed for fold assignment and learner randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MissingPolicy::MedianImpute)]
    pub missing: MissingPolicy,
    /// Two-sided confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
}

fn build_measure(args: &AnalyzeArgs) -> AppResult<Measure> {
    let needs_tau = matches!(args.measure, MeasureArg::SurvDiff | MeasureArg::RmstDiff);
    match (needs_tau, args.tau) {
        (true, None) => {
            return Err(fail("this measure requires --tau (the evaluation horizon)"));
        }
        (false, Some(_)) => {
            return Err(fail("--tau applies only to surv-diff and rmst-diff"));
        }
        (true, Some(t)) if !(t > 0.0 && t.is_finite()) => {
            return Err(fail(format!("--tau must be a positive number, got {t}")));
        }
        _ => {}
    }
    Ok(match args.measure {
        MeasureArg::LogHr => Measure::log_hr(),
        MeasureArg::SurvDiff => Measure::surv_diff(args.tau.unwrap()),
        MeasureArg::RmstDiff => Measure::rmst_diff(args.tau.unwrap()),
        MeasureArg::MeanDiff => Measure::mean_diff(),
    })
}

fn build_learners(args: &AnalyzeArgs) -> AppResult<Vec<(String, LearnerSpec)>> {
    if args.candidates.is_some() && args.learner != LearnerArg::Super {
        return Err(fail("--candidates is only valid with --learner super"));
    }
    if args.learner != LearnerArg::Super {
        return Ok(vec![("Augmented".to_string(), args.learner.spec())]);
    }
    let candidates = args
        .candidates
        .clone()
        .unwrap_or_else(|| vec![LearnerArg::Linear, LearnerArg::Spline, LearnerArg::Tree, LearnerArg::Forest]);
    if candidates.is_empty() {
        return Err(fail("--candidates must name at least one learner"));
    }
    if candidates.contains(&LearnerArg::Super) {
        return Err(fail("--candidates cannot include super"));
    }
    let mut rows: Vec<(String, LearnerSpec)> = candidates
        .iter()
        .map(|c| (format!("Augmented ({})", c.spec().label()), c.spec()))
        .collect();
    let stack = LearnerSpec::super_learner(candidates.iter().map(|c| c.spec()).collect());
    rows.push(("Augmented (super)".to_string(), stack));
    Ok(rows)
}

fn run_one(
    data: &Dataset,
    measure: &Measure,
    learner: &LearnerSpec,
    plan: Option<&CrossFitPlan>,
    seed: u64,
    ci_level: f64,
) -> AppResult<augsurv::Report> {
    let report = match plan {
        Some(plan) => augment_cross_fit_with(data, measure, learner, plan, ci_level)?,
        None => augment_no_split_with(data, measure, learner, seed, ci_level)?,
    };
    Ok(report)
}

// ── table rendering ──────────────────────────────────────────────────────────

fn fmt(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn render_table(rows: &[(String, PointEstimate<f64>)], ci_level: f64) -> String {
    // 3 decimals, or 1 when the estimates live on a scale of tens or more
    // (e.g. restricted means in days)
    let decimals = if rows.iter().any(|(_, e)| e.point.abs() >= 10.0) { 1 } else { 3 };
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|(label, e)| {
            [
                label.clone(),
                fmt(e.point, decimals),
                fmt(e.se, decimals),
                format!("[{}, {}]", fmt(e.ci.0, decimals), fmt(e.ci.1, decimals)),
            ]
        })
        .collect();
    let ci_header = format!("{}% CI", ci_level * 100.0);
    let header = ["".to_string(), "Estimate".to_string(), "Std. Err.".to_string(), ci_header];
    let width = |col: usize| {
        cells
            .iter()
            .map(|r| r[col].len())
            .chain(std::iter::once(header[col].len()))
            .max()
            .unwrap()
    };
    let widths = [width(0), width(1), width(2), width(3)];
    let mut out = String::new();
    let mut push_row = |row: &[String; 4]| {
        let line = format!(
            "{:<w0$}   {:>w1$}   {:>w2$}   {:<w3$}",
            row[0],
            row[1],
            row[2],
            row[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        );
        out.push_str(line.trim_end());
        out.push('\n');
    };
    push_row(&header);
    for row in &cells {
        push_row(row);
    }
    out
}

pub fn run(args: &AnalyzeArgs) -> AppResult<()> {
    if !(args.pi > 0.0 && args.pi < 1.0) {
        return Err(fail(format!("--pi must lie strictly inside (0,1), got {}", args.pi)));
    }
    if !(args.ci_level > 0.0 && args.ci_level < 1.0) {
        return Err(fail(format!("--ci-level must lie strictly inside (0,1), got {}", args.ci_level)));
    }
    let measure = build_measure(args)?;
    let learners = build_learners(args)?;

    let roles = ColumnRoles {
        time: &args.time,
        event: &args.event,
        treatment: &args.trt,
        continuous: &args.cont,
        categorical: &args.cat,
    };
    let Ingested { data, design_columns, n_imputed } = ingest_csv(&args.input, &roles, args.pi, args.missing)?;
    if n_imputed > 0 {
        println!("note: {}", imputed_note(n_imputed));
    }

    let plan = if args.k_folds > 0 {
        Some(make_plan(data.n(), data.treatment(), data.event(), args.k_folds, args.seed)?)
    } else {
        None
    };

    let mut rows: Vec<(String, PointEstimate<f64>)> = Vec::new();
    let mut unadjusted: Option<PointEstimate<f64>> = None;
    for (label, learner) in &learners {
        let report = run_one(&data, &measure, learner, plan.as_ref(), args.seed, args.ci_level)?;
        unadjusted.get_or_insert(report.unadjusted);
        rows.push((label.clone(), report.augmented));
    }
    rows.insert(0, ("Unadjusted".to_string(), unadjusted.expect("at least one learner")));

    let events = data.event().iter().filter(|&&e| e == 1).count();
    let split_note = match args.k_folds {
        0 => "no splitting".to_string(),
        k => format!("{k}-fold cross-fit"),
    };
    println!(
        "n = {}   events = {}   design columns = {}   pi = {}",
        data.n(),
        events,
        design_columns.len(),
        args.pi
    );
    println!(
        "measure = {}   learner = {}   {}   seed = {}",
        measure.label(),
        learners.last().map(|(_, l)| l.label()).unwrap_or("none"),
        split_note,
        args.seed
    );
    println!();
    print!("{}", render_table(&rows, args.ci_level));
    Ok(())
}
