//! The `simulate` subcommand: runs the Monte Carlo harness over a grid of
//! scenario cells described by a TOML config file, and writes the metrics
//! CSV, the raw replicate log, the rendered tables, and the true-value
//! cache into the configured output directory.
//!
//! Config shape:
//!
//! ```toml
//! output_dir = "out"
//! reps = 2000
//! seed = 20240801
//! threads = 0            # optional; 0 = default thread pool
//! oracle_seed = 11       # optional; seeds the true-value oracles
//!
//! [grid]
//! scenarios = ["A", "C"]
//! gammas = [0.0, 0.5]
//! ns = [250]
//! pi = 0.5               # optional, default 0.5
//!
//! [[measures]]
//! kind = "rmst_diff"     # log_hr | surv_diff | rmst_diff
//! tau = 2.0              # required for surv_diff and rmst_diff
//!
//! [[estimators]]
//! learner = "linear"     # linear | spline | tree | forest | super
//! k_folds = 5            # 0 disables splitting
//! label = "linear5"      # optional; defaults to the learner name
//! candidates = ["linear", "tree"]   # only for learner = "super"
//! ```

use crate::{fail, AppResult};
use augsurv::learners::LearnerSpec;
use augsurv::sim::report::{metrics_csv, render_tables, replicates_csv};
use augsurv::sim::{
    run_monte_carlo, true_value_cached, EstimatorConfig, MeasureTarget, MonteCarloResult,
    Scenario, ScenarioSpec,
};
use augsurv::stats::derive_seed;
use augsurv::Measure;
use clap::Args;
use serde::Deserialize;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Args)]
pub struct SimulateArgs {
    /// TOML config file describing the grid, measures and estimators.
    pub config: PathBuf,
    /// Worker threads for replicates; 0 keeps the config/default pool.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

fn default_pi() -> f64 {
    0.5
}

fn default_oracle_seed() -> u64 {
    11
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfig {
    output_dir: PathBuf,
    reps: usize,
    seed: u64,
    #[serde(default)]
    threads: usize,
    #[serde(default = "default_oracle_seed")]
    oracle_seed: u64,
    grid: GridConfig,
    #[serde(default)]
    measures: Vec<MeasureConfig>,
    #[serde(default)]
    estimators: Vec<EstimatorToml>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    scenarios: Vec<String>,
    gammas: Vec<f64>,
    ns: Vec<usize>,
    #[serde(default = "default_pi")]
    pi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureConfig {
    kind: String,
    tau: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorToml {
    learner: String,
    k_folds: usize,
    label: Option<String>,
    candidates: Option<Vec<String>>,
}

/// A measure plus the horizon the oracle needs; `measure.tau()` carries it
/// for the estimators, `oracle_tau` for the generating-model integration.
struct PlannedMeasure {
    measure: Measure,
    oracle_tau: f64,
}

fn parse_measure(config: &MeasureConfig) -> AppResult<PlannedMeasure> {
    let kind = config.kind.replace('-', "_");
    let (measure, needs_tau) = match kind.as_str() {
        "log_hr" => (Measure::log_hr(), false),
        "surv_diff" => (Measure::surv_diff(0.0), true),
        "rmst_diff" => (Measure::rmst_diff(0.0), true),
        "mean_diff" => {
            return Err(fail(
                "mean_diff is not simulable: generated trials are censored and the \
                 generating model has no mean_diff oracle",
            ));
        }
        other => return Err(fail(format!("unknown measure kind {other:?}"))),
    };
    if needs_tau {
        let tau = config
            .tau
            .ok_or_else(|| fail(format!("measure {kind:?} requires tau")))?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(fail(format!("measure {kind:?}: tau must be positive, got {tau}")));
        }
        let measure = match kind.as_str() {
            "surv_diff" => Measure::surv_diff(tau),
            _ => Measure::rmst_diff(tau),
        };
        return Ok(PlannedMeasure { measure, oracle_tau: tau });
    }
    if config.tau.is_some() {
        return Err(fail(format!("measure {kind:?} does not take tau")));
    }
    // log_hr ignores the horizon; any fixed value keys the oracle cache
    Ok(PlannedMeasure { measure, oracle_tau: 2.0 })
}

fn parse_single_learner(name: &str) -> AppResult<LearnerSpec> {
    match name {
        "linear" => Ok(LearnerSpec::Linear),
        "spline" => Ok(LearnerSpec::SplineAdditive),
        "tree" => Ok(LearnerSpec::tree()),
        "forest" => Ok(LearnerSpec::random_forest()),
        "none" => Ok(LearnerSpec::Zero),
        other => Err(fail(format!(
            "unknown learner {other:?} (expected linear, spline, tree, forest, super or none)"
        ))),
    }
}

fn parse_estimator(config: &EstimatorToml) -> AppResult<EstimatorConfig> {
    if config.k_folds == 1 {
        return Err(fail("k_folds must be 0 (no splitting) or at least 2"));
    }
    let learner = if config.learner == "super" {
        match &config.candidates {
            None => LearnerSpec::default_super_learner(),
            Some(names) if names.is_empty() => {
                return Err(fail("super learner needs at least one candidate"));
            }
            Some(names) => {
                let specs = names
                    .iter()
                    .map(|n| parse_single_learner(n))
                    .collect::<AppResult<Vec<_>>>()?;
                LearnerSpec::super_learner(specs)
            }
        }
    } else {
        if config.candidates.is_some() {
            return Err(fail("candidates is only valid for learner = \"super\""));
        }
        parse_single_learner(&config.learner)?
    };
    Ok(match &config.label {
        Some(label) => EstimatorConfig::labeled(label.clone(), learner, config.k_folds),
        None => EstimatorConfig::new(learner, config.k_folds),
    })
}

struct Plan {
    cells: Vec<ScenarioSpec>,
    measures: Vec<PlannedMeasure>,
    estimators: Vec<EstimatorConfig>,
}

/// Everything that can be rejected is rejected here, before any replicate
/// or oracle computation starts.
fn validate(config: &SimConfig) -> AppResult<Plan> {
    if config.reps < 2 {
        return Err(fail("reps must be at least 2"));
    }
    if config.measures.is_empty() {
        return Err(fail("config lists no measures"));
    }
    if config.grid.scenarios.is_empty() || config.grid.gammas.is_empty() || config.grid.ns.is_empty() {
        return Err(fail("grid.scenarios, grid.gammas and grid.ns must each be non-empty"));
    }
    let scenarios = config
        .grid
        .scenarios
        .iter()
        .map(|s| s.parse::<Scenario>().map_err(Into::into))
        .collect::<AppResult<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &scenario in &scenarios {
        for &gamma in &config.grid.gammas {
            for &n in &config.grid.ns {
                cells.push(ScenarioSpec::new(scenario, gamma, config.grid.pi, n)?);
            }
        }
    }
    let measures = config.measures.iter().map(parse_measure).collect::<AppResult<Vec<_>>>()?;
    let estimators = config.estimators.iter().map(parse_estimator).collect::<AppResult<Vec<_>>>()?;

    let min_n = *config.grid.ns.iter().min().expect("ns checked non-empty");
    for est in &estimators {
        if est.k_folds > 0 && min_n < 4 * est.k_folds {
            return Err(fail(format!(
                "estimator {:?}: {}-fold splitting needs n >= {}, but the grid includes n = {min_n}",
                est.label,
                est.k_folds,
                4 * est.k_folds
            )));
        }
    }
    Ok(Plan { cells, measures, estimators })
}

pub fn run(args: &SimulateArgs) -> AppResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| fail(format!("cannot read {}: {e}", args.config.display())))?;
    let config: SimConfig = toml::from_str(&text).map_err(|e| fail(format!("bad config: {e}")))?;
    let plan = validate(&config)?;
    let threads = if args.threads > 0 { args.threads } else { config.threads };

    std::fs::create_dir_all(&config.output_dir)?;
    let cache_path = config.output_dir.join("true_values.json");

    let total = plan.cells.len();
    let mut results: Vec<MonteCarloResult> = Vec::with_capacity(total);
    for (cell_idx, cell) in plan.cells.iter().enumerate() {
        let started = Instant::now();
        let mut targets = Vec::with_capacity(plan.measures.len());
        for planned in &plan.measures {
            let oracle_spec = cell.with_tau(planned.oracle_tau)?;
            let tv = true_value_cached(
                &oracle_spec,
                planned.measure.id(),
                config.oracle_seed,
                &cache_path,
            )?;
            targets.push(MeasureTarget { spec: planned.measure.clone(), true_value: tv.value });
        }
        let result = run_monte_carlo(
            cell,
            &targets,
            &plan.estimators,
            config.reps,
            derive_seed(config.seed, cell_idx as u64),
            threads,
        )?;
        println!(
            "cell {}/{total}: scenario {} gamma={} pi={} n={} done ({} replicates, {:.1}s)",
            cell_idx + 1,
            cell.scenario,
            cell.gamma,
            cell.pi,
            cell.n,
            config.reps,
            started.elapsed().as_secs_f64()
        );
        results.push(result);
    }

    let write = |name: &str, body: String| -> AppResult<PathBuf> {
        let path = config.output_dir.join(name);
        std::fs::write(&path, body)?;
        Ok(path)
    };
    write("results.csv", metrics_csv(&results))?;
    write("replicates.csv", replicates_csv(&results))?;
    write("tables.txt", render_tables(&results))?;
    println!(
        "wrote results.csv, replicates.csv, tables.txt and true_values.json to {}",
        config.output_dir.display()
    );
    Ok(())
}
