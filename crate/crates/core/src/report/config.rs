use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bridge::{connect_remote_oracle, Endpoint};
use crate::error::{AttackError, Result};
use crate::oracle::{LinearOracle, QuadraticOracle, RolloutOracle, DEFAULT_EPISODES};
use crate::search::{DEConfig, Method, NGDConfig, SearchBudget, SearchSettings, TraceInterval};
use crate::walker::{SurrogateWalker, WalkerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Surrogate,
    Linear,
    Quadratic,
    Bridge,
}

impl std::str::FromStr for OracleKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "surrogate" | "walker" => Ok(OracleKind::Surrogate),
            "linear" => Ok(OracleKind::Linear),
            "quadratic" => Ok(OracleKind::Quadratic),
            "bridge" | "remote" => Ok(OracleKind::Bridge),
            other => Err(AttackError::Config(format!(
                "unknown oracle {other:?} (expected surrogate, linear, quadratic or bridge)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    pub weights: Vec<f64>,
    pub noise_std: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            weights: vec![2.0, -3.0, 1.0, -1.5, 0.5, -2.5, 1.2, -0.7],
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticParams {
    pub center: Vec<f64>,
    pub scale: f64,
    pub noise_std: f64,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        Self {
            center: vec![0.2, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            scale: 1.0,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub eps_list: Vec<f64>,
    /// Fresh episodes used to score each ε's best perturbation.
    pub eval_episodes: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            eps_list: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            eval_episodes: 1000,
        }
    }
}

/// Everything one experiment run needs. Loaded from TOML; CLI flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub oracle: OracleKind,
    pub method: Method,
    pub eps: f64,
    pub episodes: usize,
    pub budget_evals: Option<u64>,
    pub budget_minutes: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Trace point every this many evaluations.
    pub trace_every: u64,
    /// Wall-clock trace spacing; replaces `trace_every` when set.
    pub trace_seconds: Option<f64>,
    pub common_random_numbers: bool,
    pub endpoint: Option<String>,
    pub histogram_bins: usize,
    pub walker: WalkerConfig,
    pub de: DEConfig,
    pub ngd: NGDConfig,
    pub linear: LinearParams,
    pub quadratic: QuadraticParams,
    pub sweep: SweepParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            oracle: OracleKind::Surrogate,
            method: Method::De,
            eps: 0.5,
            episodes: DEFAULT_EPISODES,
            budget_evals: Some(2000),
            budget_minutes: None,
            seed: 0,
            out: None,
            trace_every: 10,
            trace_seconds: None,
            common_random_numbers: false,
            endpoint: None,
            histogram_bins: 10,
            walker: WalkerConfig::default(),
            de: DEConfig::default(),
            ngd: NGDConfig::default(),
            linear: LinearParams::default(),
            quadratic: QuadraticParams::default(),
            sweep: SweepParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AttackError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AttackError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AttackError::Config(e.to_string()))
    }

    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            max_evaluations: self.budget_evals,
            wall_clock_limit: self.budget_minutes.map(|m| Duration::from_secs_f64(m * 60.0)),
        }
    }

    pub fn search_settings(&self) -> SearchSettings {
        SearchSettings {
            eps: self.eps,
            episodes: self.episodes,
            budget: self.budget(),
            seed: self.seed,
            common_random_numbers: self.common_random_numbers,
            trace_interval: match self.trace_seconds {
                Some(s) => TraceInterval::Seconds(s),
                None => TraceInterval::Evaluations(self.trace_every),
            },
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be finite and >= 0, got {}", self.eps));
        }
        if let Some(m) = self.budget_minutes {
            if !(m > 0.0) || !m.is_finite() {
                return bad("budget_minutes must be positive".into());
            }
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be >= 1".into());
        }
        if self.sweep.eval_episodes == 0 {
            return bad("sweep.eval_episodes must be >= 1".into());
        }
        self.search_settings()
            .validate()
            .map_err(|e| AttackError::Config(e.to_string()))?;
        self.de
            .validate()
            .map_err(|e| AttackError::Config(format!("de: {e}")))?;
        self.ngd
            .validate()
            .map_err(|e| AttackError::Config(format!("ngd: {e}")))?;
        match self.oracle {
            OracleKind::Surrogate => self.walker.validate(),
            OracleKind::Bridge if self.endpoint.is_none() => bad("the bridge oracle needs an endpoint".into()),
            _ => Ok(()),
        }
    }

    /// Instantiates the selected oracle (connecting, for `bridge`).
    pub fn build_oracle(&self) -> Result<Box<dyn RolloutOracle>> {
        Ok(match self.oracle {
            OracleKind::Surrogate => Box::new(SurrogateWalker::new(self.walker.clone())?),
            OracleKind::Linear => Box::new(LinearOracle::new(self.linear.weights.clone(), self.linear.noise_std)?),
            OracleKind::Quadratic => Box::new(QuadraticOracle::new(
                self.quadratic.center.clone(),
                self.quadratic.scale,
                self.quadratic.noise_std,
            )?),
            OracleKind::Bridge => {
                let ep: Endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| AttackError::Config("the bridge oracle needs an endpoint".into()))?
                    .parse()?;
                Box::new(connect_remote_oracle(&ep)?)
            }
        })
    }

    /// Actuator labels for reports.
    pub fn actuator_labels(&self, n: usize) -> Vec<String> {
        if self.oracle == OracleKind::Surrogate && self.walker.n_actuators() == n {
            self.walker.actuator_labels()
        } else {
            (1..=n).map(|i| format!("actuator{i}")).collect()
        }
    }
}
