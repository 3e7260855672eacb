//! Experiment runner and report emitters: searcher runs, method
//! comparisons, ε-sweeps with box statistics, per-actuator histograms and
//! best-perturbation tables.
//!
//! Every file written here is a deterministic function of the config when
//! wall-clock features are off, so reruns reproduce outputs byte for byte.

mod config;
mod stats;
mod table;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};
use crate::oracle::{rollout, RolloutOracle};
use crate::perturbation::TorquePerturbation;
use crate::rng::derive_seed;
use crate::search::{run_search, Method, SearchOutcome};

pub use config::{ExperimentConfig, LinearParams, OracleKind, QuadraticParams, SweepParams};
pub use stats::{actuator_histogram, quantile_sorted, ActuatorBins, ActuatorHistogram, BoxStats};
pub use table::{best_perturbation_table, format_signed, PerturbationTable, TableRow};

pub const OUTCOME_FILE: &str = "outcome.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const BOX_STATS_FILE: &str = "box_stats.csv";
pub const SWEEP_REWARDS_FILE: &str = "sweep_rewards.json";
pub const HISTOGRAM_FILE: &str = "hist.csv";
pub const TABLE_TEXT_FILE: &str = "table.txt";
pub const TABLE_JSON_FILE: &str = "table.json";

/// Label for the seed shared by all post-search sweep evaluations.
const SWEEP_EVAL_LABEL: u64 = 0x0073_7765_6570;

/// Runs the configured searcher against `oracle`.
pub fn run_with_oracle<O: RolloutOracle + ?Sized>(oracle: &O, cfg: &ExperimentConfig) -> Result<SearchOutcome> {
    run_method(oracle, cfg, cfg.method)
}

fn run_method<O: RolloutOracle + ?Sized>(oracle: &O, cfg: &ExperimentConfig, method: Method) -> Result<SearchOutcome> {
    cfg.validate()?;
    run_search(oracle, method, &cfg.search_settings(), &cfg.de, &cfg.ngd)
}

/// Builds the oracle, runs the search and, when `cfg.out` is set, writes
/// `outcome.json` and `trace.csv` there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let oracle = cfg.build_oracle()?;
    let outcome = run_with_oracle(oracle.as_ref(), cfg)?;
    if let Some(dir) = &cfg.out {
        write_outcome(dir, &outcome)?;
    }
    Ok(outcome)
}

/// Runs several methods under one budget and seed.
pub fn run_comparison<O: RolloutOracle + ?Sized>(
    oracle: &O,
    cfg: &ExperimentConfig,
    methods: &[Method],
) -> Result<Vec<SearchOutcome>> {
    methods.iter().map(|&m| run_method(oracle, cfg, m)).collect()
}

pub fn trace_csv(outcome: &SearchOutcome) -> String {
    let mut out = String::from("seconds,evaluations,best_mean\n");
    for p in &outcome.trace {
        out.push_str(&format!("{},{},{}\n", p.seconds, p.evaluations, p.best_mean));
    }
    out
}

pub fn comparison_csv(outcomes: &[SearchOutcome]) -> String {
    let mut out = String::from("method,seconds,evaluations,best_mean\n");
    for o in outcomes {
        for p in &o.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                o.method.name(),
                p.seconds,
                p.evaluations,
                p.best_mean
            ));
        }
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents).map_err(|e| AttackError::Io(format!("{}: {e}", dir.join(name).display())))
}

pub fn write_outcome(dir: &Path, outcome: &SearchOutcome) -> Result<()> {
    write(dir, OUTCOME_FILE, &(outcome.to_json()? + "\n"))?;
    write(dir, TRACE_FILE, &trace_csv(outcome))
}

pub fn write_comparison(dir: &Path, outcomes: &[SearchOutcome]) -> Result<()> {
    for o in outcomes {
        write_outcome(&dir.join(o.method.name()), o)?;
    }
    write(dir, COMPARISON_FILE, &comparison_csv(outcomes))
}

pub fn read_outcome(path: &Path) -> Result<SearchOutcome> {
    let path = if path.is_dir() {
        path.join(OUTCOME_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| AttackError::Io(format!("{}: {e}", path.display())))?;
    SearchOutcome::from_json(&text)
}

/// One row of an ε-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub eps: f64,
    pub best_pert: TorquePerturbation,
    pub best_mean_reward: f64,
    pub evaluations_used: u64,
    pub rewards: Vec<f64>,
    pub steps: Vec<usize>,
    #[serde(skip)]
    pub stats: Option<BoxStats>,
    #[serde(skip)]
    pub outcome: Option<SearchOutcome>,
}

/// For each ε: search with the configured method, then score `δ_best` over
/// `eval_episodes` fresh episodes. All ε share one scoring seed, so the
/// ε = 0 row is exactly the unattacked baseline.
pub fn sweep_epsilon<O: RolloutOracle + ?Sized>(
    oracle: &O,
    cfg: &ExperimentConfig,
    eps_list: &[f64],
    eval_episodes: usize,
) -> Result<Vec<SweepEntry>> {
    if eps_list.is_empty() {
        return Err(AttackError::Config("eps list is empty".into()));
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(AttackError::Config(format!(
            "eps values must be finite and >= 0, got {e}"
        )));
    }
    if eval_episodes == 0 {
        return Err(AttackError::Config("eval_episodes must be >= 1".into()));
    }
    let eval_seed = derive_seed(cfg.seed, SWEEP_EVAL_LABEL);
    eps_list
        .iter()
        .map(|&eps| {
            let run_cfg = ExperimentConfig { eps, ..cfg.clone() };
            let outcome = run_with_oracle(oracle, &run_cfg)?;
            if let Some(msg) = &outcome.aborted {
                return Err(AttackError::Oracle(format!("search at eps={eps} aborted: {msg}")));
            }
            let scored = rollout(oracle, &outcome.best_pert, eval_episodes, eval_seed)?;
            let stats = BoxStats::from_rewards(eps, &scored.cumulative_rewards)?;
            Ok(SweepEntry {
                eps,
                best_pert: outcome.best_pert.clone(),
                best_mean_reward: outcome.best_mean_reward,
                evaluations_used: outcome.evaluations_used,
                rewards: scored.cumulative_rewards,
                steps: scored.episode_lengths,
                stats: Some(stats),
                outcome: Some(outcome),
            })
        })
        .collect()
}

pub fn box_stats_csv(entries: &[SweepEntry]) -> Result<String> {
    let mut out = String::from(BoxStats::CSV_HEADER);
    out.push('\n');
    for e in entries {
        let stats = match e.stats {
            Some(s) => s,
            None => BoxStats::from_rewards(e.eps, &e.rewards)?,
        };
        out.push_str(&stats.csv_row());
        out.push('\n');
    }
    Ok(out)
}

pub fn write_sweep(dir: &Path, entries: &[SweepEntry]) -> Result<()> {
    write(dir, BOX_STATS_FILE, &box_stats_csv(entries)?)?;
    let json = serde_json::to_string_pretty(entries).map_err(|e| AttackError::Io(e.to_string()))?;
    write(dir, SWEEP_REWARDS_FILE, &(json + "\n"))
}

pub fn write_histogram(dir: &Path, hist: &ActuatorHistogram) -> Result<()> {
    write(dir, HISTOGRAM_FILE, &hist.to_csv())
}

pub fn write_table(dir: &Path, table: &PerturbationTable) -> Result<()> {
    write(dir, TABLE_TEXT_FILE, &table.render())?;
    let json = serde_json::to_string_pretty(table).map_err(|e| AttackError::Io(e.to_string()))?;
    write(dir, TABLE_JSON_FILE, &(json + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearOracle;

    fn linear_cfg() -> ExperimentConfig {
        ExperimentConfig {
            oracle: OracleKind::Linear,
            episodes: 1,
            budget_evals: Some(200),
            de: crate::search::DEConfig {
                population_size: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn comparison_csv_has_one_trace_per_method() {
        let cfg = linear_cfg();
        let o = cfg.build_oracle().unwrap();
        let outs = run_comparison(o.as_ref(), &cfg, &[Method::Random, Method::De, Method::Ngd]).unwrap();
        let csv = comparison_csv(&outs);
        for m in ["random", "de", "ngd"] {
            assert!(csv.lines().any(|l| l.starts_with(&format!("{m},"))));
        }
    }

    #[test]
    fn sweep_zero_row_is_baseline() {
        let cfg = ExperimentConfig {
            linear: LinearParams {
                noise_std: 0.5,
                ..Default::default()
            },
            ..linear_cfg()
        };
        let o = cfg.build_oracle().unwrap();
        let rows = sweep_epsilon(o.as_ref(), &cfg, &[0.0, 0.25], 50).unwrap();
        assert_eq!(rows[0].best_pert.as_slice(), &[0.0; 8]);
        let zero = TorquePerturbation::zeros(8, 0.0).unwrap();
        let base = rollout(o.as_ref(), &zero, 50, derive_seed(cfg.seed, SWEEP_EVAL_LABEL)).unwrap();
        assert_eq!(rows[0].rewards, base.cumulative_rewards);
        assert!(rows[1].stats.unwrap().median < rows[0].stats.unwrap().median);
        assert!(rows[1].best_pert.inf_norm() <= 0.25);
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let o = LinearOracle::new(vec![1.0], 0.0).unwrap();
        let cfg = linear_cfg();
        assert!(sweep_epsilon(&o, &cfg, &[], 10).is_err());
        assert!(sweep_epsilon(&o, &cfg, &[-0.1], 10).is_err());
        assert!(sweep_epsilon(&o, &cfg, &[0.1], 0).is_err());
    }
}
