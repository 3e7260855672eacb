//! `jointattack` command-line interface.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jointattack::bridge::{serve_oracle, ListenEndpoint};
use jointattack::report::{
    self, actuator_histogram, best_perturbation_table, box_stats_csv, comparison_csv, run_comparison, run_with_oracle,
    sweep_epsilon, trace_csv, ExperimentConfig, OracleKind,
};
use jointattack::search::{Method, SearchOutcome};
use jointattack::AttackError;

#[derive(Parser)]
#[command(
    name = "jointattack",
    version,
    about = "Black-box torque-perturbation attacks on rollout oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one searcher, or compare several given as a comma list.
    Run(Common),
    /// Search at each ε and score the best perturbation over fresh episodes.
    SweepEps {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        eps_list: Option<Vec<f64>>,
        #[arg(long)]
        eval_episodes: Option<usize>,
    },
    /// Per-actuator histogram of a final DE population.
    Hist {
        #[command(flatten)]
        common: Common,
        /// Existing outcome.json (or directory holding one) instead of a new DE run.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Best perturbation as a labelled table.
    Table {
        #[command(flatten)]
        common: Common,
        /// Existing outcome.json (or directory holding one) instead of a new run.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Serve the configured oracle over the bridge protocol.
    Serve {
        #[command(flatten)]
        common: Common,
        /// `stdio` or `host:port`.
        #[arg(long, default_value = "stdio")]
        listen: String,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// surrogate | linear | quadratic | bridge
    #[arg(long)]
    oracle: Option<OracleKind>,
    /// random | de | ngd, or a comma list for `run`.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    /// DE population size.
    #[arg(long)]
    np: Option<usize>,
    /// DE crossover rate.
    #[arg(long)]
    cr: Option<f64>,
    /// Episodes per mean-reward estimate.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    budget_evals: Option<u64>,
    #[arg(long)]
    budget_minutes: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace_every: Option<u64>,
    /// Trace on wall-clock seconds instead of evaluation counts.
    #[arg(long)]
    trace_seconds: Option<f64>,
    /// Remote oracle for `--oracle bridge`: `host:port` or `exec:<command>`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Reuse one evaluation seed for every candidate.
    #[arg(long)]
    crn: bool,
}

/// Failures that are the caller's fault exit with status 2.
struct Usage(anyhow::Error);

impl Common {
    fn config(&self) -> Result<(ExperimentConfig, Vec<Method>), Usage> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| Usage(e.into()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v.into(); })*
            };
        }
        set!(
            oracle => oracle,
            eps => eps,
            np => de.population_size,
            cr => de.crossover_rate,
            m => episodes,
            seed => seed,
            trace_every => trace_every,
        );
        if let Some(v) = self.budget_evals {
            cfg.budget_evals = Some(v);
        }
        if let Some(v) = self.budget_minutes {
            cfg.budget_minutes = Some(v);
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.trace_seconds {
            cfg.trace_seconds = Some(v);
        }
        if let Some(v) = &self.endpoint {
            cfg.endpoint = Some(v.clone());
        }
        if self.crn {
            cfg.common_random_numbers = true;
        }
        let methods = self.method.clone().unwrap_or_else(|| vec![cfg.method]);
        if methods.is_empty() {
            return Err(Usage(anyhow::anyhow!("--method needs at least one method")));
        }
        cfg.method = methods[0];
        cfg.validate().map_err(|e| Usage(e.into()))?;
        Ok((cfg, methods))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<AttackError>() {
            Some(AttackError::Config(_)) => Failure::Usage(e),
            _ => Failure::Run(e),
        }
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        anyhow::Error::from(e).into()
    }
}

/// Exit status 3 marks a partial outcome left by a failing oracle.
fn partial_status(outcomes: &[SearchOutcome]) -> ExitCode {
    let mut status = ExitCode::SUCCESS;
    for o in outcomes {
        if let Some(msg) = &o.aborted {
            eprintln!(
                "warning: {} search stopped after {} evaluations: {msg}",
                o.method.name(),
                o.evaluations_used
            );
            status = ExitCode::from(3);
        }
    }
    status
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Run(common) => {
            let (cfg, methods) = common.config()?;
            let oracle = cfg.build_oracle()?;
            if methods.len() == 1 {
                let out = run_with_oracle(oracle.as_ref(), &cfg)?;
                match &cfg.out {
                    Some(dir) => {
                        report::write_outcome(dir, &out)?;
                        emit(&trace_csv(&out))?;
                    }
                    None => emit(&(out.to_json()? + "\n"))?,
                }
                Ok(partial_status(&[out]))
            } else {
                let outs = run_comparison(oracle.as_ref(), &cfg, &methods)?;
                if let Some(dir) = &cfg.out {
                    report::write_comparison(dir, &outs)?;
                }
                emit(&comparison_csv(&outs))?;
                Ok(partial_status(&outs))
            }
        }
        Command::SweepEps {
            common,
            eps_list,
            eval_episodes,
        } => {
            let (cfg, _) = common.config()?;
            let eps_list = eps_list.unwrap_or_else(|| cfg.sweep.eps_list.clone());
            let eval_episodes = eval_episodes.unwrap_or(cfg.sweep.eval_episodes);
            let oracle = cfg.build_oracle()?;
            let rows = sweep_epsilon(oracle.as_ref(), &cfg, &eps_list, eval_episodes)?;
            if let Some(dir) = &cfg.out {
                report::write_sweep(dir, &rows)?;
            }
            emit(&box_stats_csv(&rows)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Hist { common, from, bins } => {
            let (mut cfg, _) = common.config()?;
            if let Some(b) = bins {
                cfg.histogram_bins = b;
            }
            let outcome = match from {
                Some(p) => load_outcome(&p)?,
                None => {
                    cfg.method = Method::De;
                    let oracle = cfg.build_oracle()?;
                    run_with_oracle(oracle.as_ref(), &cfg)?
                }
            };
            let Some(pop) = outcome.final_population.as_deref() else {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "histograms need a DE outcome with a final population"
                )));
            };
            let labels = cfg.actuator_labels(outcome.best_pert.len());
            let hist = actuator_histogram(pop, outcome.eps, cfg.histogram_bins, &labels)?;
            if let Some(dir) = &cfg.out {
                report::write_histogram(dir, &hist)?;
            }
            emit(&hist.to_csv())?;
            Ok(partial_status(&[outcome]))
        }
        Command::Table { common, from } => {
            let (cfg, _) = common.config()?;
            let outcome = match from {
                Some(p) => load_outcome(&p)?,
                None => {
                    let oracle = cfg.build_oracle()?;
                    run_with_oracle(oracle.as_ref(), &cfg)?
                }
            };
            let table = best_perturbation_table(&outcome.best_pert, &cfg.actuator_labels(outcome.best_pert.len()))?;
            if let Some(dir) = &cfg.out {
                report::write_table(dir, &table)?;
            }
            emit(&table.render())?;
            Ok(partial_status(&[outcome]))
        }
        Command::Serve { common, listen } => {
            let (cfg, _) = common.config()?;
            if cfg.oracle == OracleKind::Bridge {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "serve needs a local oracle, not bridge"
                )));
            }
            let endpoint: ListenEndpoint = listen.parse()?;
            let oracle = cfg.build_oracle()?;
            if let ListenEndpoint::Tcp(addr) = &endpoint {
                eprintln!("serving {:?} oracle on {addr}", cfg.oracle);
            }
            serve_oracle(oracle, &endpoint)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_outcome(path: &Path) -> anyhow::Result<SearchOutcome> {
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    report::read_outcome(path).with_context(|| format!("reading {}", path.display()))
}
