//! Python bindings for `jointattack`.
//!
//! Perturbations cross the boundary as plain lists of floats. Searches and
//! rollouts release the GIL; an oracle implemented in Python re-acquires it
//! for each rollout call.

use std::sync::Arc;

use jointattack::bridge::{connect_remote_oracle, Endpoint};
use jointattack::oracle::{CoinFlipOracle, ConstantOracle, LinearOracle, OracleSpec, QuadraticOracle, RolloutResult};
use jointattack::report::{run_experiment as run_experiment_rs, ExperimentConfig};
use jointattack::rng::derive_seed as derive_seed_rs;
use jointattack::search::{
    run_search, DEConfig, Method, NGDConfig, SearchBudget, SearchOutcome as Outcome, SearchSettings,
};
use jointattack::walker::WalkerConfig;
use jointattack::{
    estimate_mean_reward as estimate_rs, AttackError, RolloutOracle, SeededRng, SurrogateWalker,
    TorquePerturbation as Pert,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(jointattack_py, JointAttackError, PyRuntimeError);

fn to_py(e: AttackError) -> PyErr {
    match e {
        AttackError::Argument(_) | AttackError::Dimension { .. } | AttackError::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => JointAttackError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for jointattack::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// `delta` must lie in the closed ball of radius `eps`; `eps=None` takes
/// `max|delta_i|`.
fn pert(delta: Vec<f64>, eps: Option<f64>) -> PyResult<Pert> {
    match eps {
        Some(e) => Pert::new(delta, e),
        None => Pert::from_values(delta),
    }
    .py_err()
}

#[pyfunction]
fn clip_inf(raw: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    Ok(jointattack::clip_inf(&raw, eps).py_err()?.to_vec())
}

#[pyfunction]
fn sample_uniform(eps: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = SeededRng::new(seed, 0);
    Ok(jointattack::sample_uniform(&mut rng, eps, n).py_err()?.to_vec())
}

/// `(1 + delta) * action`, element-wise.
#[pyfunction]
fn apply_perturbation(action: Vec<f64>, delta: Vec<f64>) -> PyResult<Vec<f64>> {
    let a = jointattack::ActionVector::new(action).py_err()?;
    let p = pert(delta, None)?;
    Ok(jointattack::apply_perturbation(&a, &p).py_err()?.into_inner())
}

#[pyfunction]
fn derive_seed(parent: u64, label: u64) -> u64 {
    derive_seed_rs(parent, label)
}

#[pyclass(frozen, get_all)]
struct MeanRewardEstimate {
    mean: f64,
    sample_std: f64,
    episodes: usize,
}

#[pymethods]
impl MeanRewardEstimate {
    fn __repr__(&self) -> String {
        format!(
            "MeanRewardEstimate(mean={}, sample_std={}, episodes={})",
            self.mean, self.sample_std, self.episodes
        )
    }
}

/// Adapts a Python callable `f(delta, episodes, seed) -> (rewards, steps)`.
struct CallableOracle {
    callable: Py<PyAny>,
    spec: OracleSpec,
}

impl RolloutOracle for CallableOracle {
    fn spec(&self) -> OracleSpec {
        self.spec
    }

    fn rollout(&self, pert: &Pert, episodes: usize, seed: u64) -> jointattack::Result<RolloutResult> {
        Python::attach(|py| {
            let out = self
                .callable
                .call1(py, (pert.to_vec(), episodes, seed))
                .and_then(|r| r.extract::<(Vec<f64>, Vec<usize>)>(py));
            match out {
                Ok((cumulative_rewards, episode_lengths)) => Ok(RolloutResult {
                    cumulative_rewards,
                    episode_lengths,
                }),
                Err(e) => Err(AttackError::Oracle(format!("python oracle: {e}"))),
            }
        })
    }
}

/// Any rollout oracle: built-in benchmark, surrogate walker, remote bridge
/// endpoint or Python callable.
#[pyclass(frozen)]
struct Oracle {
    inner: Arc<dyn RolloutOracle>,
}

impl Oracle {
    fn wrap<O: RolloutOracle + 'static>(o: O) -> Self {
        Self { inner: Arc::new(o) }
    }
}

#[pymethods]
impl Oracle {
    /// The surrogate walker. `config_toml` holds `WalkerConfig` fields;
    /// keyword arguments override it.
    #[staticmethod]
    #[pyo3(signature = (config_toml=None, horizon=None, torque_noise_std=None, fall_threshold=None))]
    fn surrogate(
        config_toml: Option<&str>,
        horizon: Option<usize>,
        torque_noise_std: Option<f64>,
        fall_threshold: Option<f64>,
    ) -> PyResult<Self> {
        let mut cfg = match config_toml {
            Some(text) => {
                ExperimentConfig::from_toml_str(&format!("[walker]\n{text}"))
                    .py_err()?
                    .walker
            }
            None => WalkerConfig::default(),
        };
        if let Some(h) = horizon {
            cfg.horizon = h;
        }
        if let Some(s) = torque_noise_std {
            cfg.torque_noise_std = s;
        }
        if let Some(t) = fall_threshold {
            cfg.fall_threshold = t;
        }
        Ok(Self::wrap(SurrogateWalker::new(cfg).py_err()?))
    }

    #[staticmethod]
    #[pyo3(signature = (weights, noise_std=0.0))]
    fn linear(weights: Vec<f64>, noise_std: f64) -> PyResult<Self> {
        Ok(Self::wrap(LinearOracle::new(weights, noise_std).py_err()?))
    }

    #[staticmethod]
    #[pyo3(signature = (center, scale=1.0, noise_std=0.0))]
    fn quadratic(center: Vec<f64>, scale: f64, noise_std: f64) -> PyResult<Self> {
        Ok(Self::wrap(QuadraticOracle::new(center, scale, noise_std).py_err()?))
    }

    #[staticmethod]
    fn constant(n_actuators: usize, reward: f64) -> Self {
        Self::wrap(ConstantOracle { n_actuators, reward })
    }

    #[staticmethod]
    fn coin_flip(n_actuators: usize) -> Self {
        Self::wrap(CoinFlipOracle { n_actuators })
    }

    /// Connects to a bridge server: `host:port` or `exec:<command>`.
    #[staticmethod]
    fn connect(py: Python<'_>, endpoint: &str) -> PyResult<Self> {
        let ep: Endpoint = endpoint.parse().py_err()?;
        Ok(Self::wrap(py.detach(|| connect_remote_oracle(&ep)).py_err()?))
    }

    /// Wraps `f(delta, episodes, seed) -> (rewards, steps)`. Episode `m`
    /// should depend only on `(seed, m)` for searches to be reproducible.
    #[staticmethod]
    #[pyo3(signature = (f, n_actuators, horizon, deterministic=false))]
    fn from_callable(f: Py<PyAny>, n_actuators: usize, horizon: usize, deterministic: bool) -> PyResult<Self> {
        let spec = OracleSpec {
            n_actuators,
            horizon,
            deterministic,
            supports_concurrent_rollouts: false,
        };
        spec.validate().py_err()?;
        Ok(Self::wrap(CallableOracle { callable: f, spec }))
    }

    #[getter]
    fn n_actuators(&self) -> usize {
        self.inner.spec().n_actuators
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.spec().horizon
    }

    #[getter]
    fn deterministic(&self) -> bool {
        self.inner.spec().deterministic
    }

    /// Returns `(rewards, steps)`.
    #[pyo3(signature = (delta, episodes, seed, eps=None))]
    fn rollout(
        &self,
        py: Python<'_>,
        delta: Vec<f64>,
        episodes: usize,
        seed: u64,
        eps: Option<f64>,
    ) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let p = pert(delta, eps)?;
        let r = py
            .detach(|| jointattack::rollout(&self.inner, &p, episodes, seed))
            .py_err()?;
        Ok((r.cumulative_rewards, r.episode_lengths))
    }

    #[pyo3(signature = (delta, episodes=100, seed=0, eps=None))]
    fn estimate_mean_reward(
        &self,
        py: Python<'_>,
        delta: Vec<f64>,
        episodes: usize,
        seed: u64,
        eps: Option<f64>,
    ) -> PyResult<MeanRewardEstimate> {
        estimate_mean_reward(py, self, delta, episodes, seed, eps)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.spec();
        format!(
            "Oracle(n_actuators={}, horizon={}, deterministic={})",
            s.n_actuators, s.horizon, s.deterministic
        )
    }
}

#[pyfunction]
#[pyo3(signature = (oracle, delta, episodes=100, seed=0, eps=None))]
fn estimate_mean_reward(
    py: Python<'_>,
    oracle: &Oracle,
    delta: Vec<f64>,
    episodes: usize,
    seed: u64,
    eps: Option<f64>,
) -> PyResult<MeanRewardEstimate> {
    let p = pert(delta, eps)?;
    let e = py.detach(|| estimate_rs(&oracle.inner, &p, episodes, seed)).py_err()?;
    Ok(MeanRewardEstimate {
        mean: e.mean,
        sample_std: e.sample_std,
        episodes: e.episodes,
    })
}

#[pyclass(frozen)]
struct SearchOutcome {
    inner: Outcome,
}

#[pymethods]
impl SearchOutcome {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn best_pert(&self) -> Vec<f64> {
        self.inner.best_pert.to_vec()
    }

    #[getter]
    fn best_mean_reward(&self) -> f64 {
        self.inner.best_mean_reward
    }

    #[getter]
    fn evaluations_used(&self) -> u64 {
        self.inner.evaluations_used
    }

    /// `(seconds, evaluations, best_mean)` tuples.
    #[getter]
    fn trace(&self) -> Vec<(f64, u64, f64)> {
        self.inner
            .trace
            .iter()
            .map(|p| (p.seconds, p.evaluations, p.best_mean))
            .collect()
    }

    /// `(delta, fitness)` pairs of the last DE generation, else `None`.
    #[getter]
    fn final_population(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        self.inner
            .final_population
            .as_ref()
            .map(|pop| pop.iter().map(|i| (i.delta.to_vec(), i.fitness)).collect())
    }

    #[getter]
    fn aborted(&self) -> Option<String> {
        self.inner.aborted.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Outcome::from_json(text).py_err()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchOutcome(method={:?}, best_mean_reward={}, evaluations_used={})",
            self.inner.method.name(),
            self.inner.best_mean_reward,
            self.inner.evaluations_used
        )
    }
}

fn settings(eps: f64, budget_evals: u64, seed: u64, episodes: usize, crn: bool) -> SearchSettings {
    let mut s = SearchSettings::new(eps, SearchBudget::evaluations(budget_evals), seed).with_episodes(episodes);
    s.common_random_numbers = crn;
    s
}

fn search(
    py: Python<'_>,
    oracle: &Oracle,
    method: Method,
    s: SearchSettings,
    de: DEConfig,
    ngd: NGDConfig,
) -> PyResult<SearchOutcome> {
    let inner = py
        .detach(|| run_search(&oracle.inner, method, &s, &de, &ngd))
        .py_err()?;
    Ok(SearchOutcome { inner })
}

#[pyfunction]
#[pyo3(signature = (oracle, eps, budget_evals, seed=0, episodes=100, common_random_numbers=false))]
fn random_search(
    py: Python<'_>,
    oracle: &Oracle,
    eps: f64,
    budget_evals: u64,
    seed: u64,
    episodes: usize,
    common_random_numbers: bool,
) -> PyResult<SearchOutcome> {
    let s = settings(eps, budget_evals, seed, episodes, common_random_numbers);
    search(py, oracle, Method::Random, s, DEConfig::default(), NGDConfig::default())
}

#[pyfunction]
#[pyo3(signature = (
    oracle, eps, budget_evals, seed=0, episodes=100, population_size=120,
    crossover_rate=0.7, f_low=0.5, f_high=1.0, common_random_numbers=false
))]
#[allow(clippy::too_many_arguments)]
fn de_search(
    py: Python<'_>,
    oracle: &Oracle,
    eps: f64,
    budget_evals: u64,
    seed: u64,
    episodes: usize,
    population_size: usize,
    crossover_rate: f64,
    f_low: f64,
    f_high: f64,
    common_random_numbers: bool,
) -> PyResult<SearchOutcome> {
    let de = DEConfig {
        population_size,
        crossover_rate,
        f_low,
        f_high,
        ..DEConfig::default()
    };
    let s = settings(eps, budget_evals, seed, episodes, common_random_numbers);
    search(py, oracle, Method::De, s, de, NGDConfig::default())
}

#[pyfunction]
#[pyo3(signature = (
    oracle, eps, budget_evals, seed=0, episodes=100, finite_difference=0.01,
    step_size=0.05, common_random_numbers=false
))]
#[allow(clippy::too_many_arguments)]
fn ngd_search(
    py: Python<'_>,
    oracle: &Oracle,
    eps: f64,
    budget_evals: u64,
    seed: u64,
    episodes: usize,
    finite_difference: f64,
    step_size: f64,
    common_random_numbers: bool,
) -> PyResult<SearchOutcome> {
    let ngd = NGDConfig {
        finite_difference,
        step_size,
        ..NGDConfig::default()
    };
    let s = settings(eps, budget_evals, seed, episodes, common_random_numbers);
    search(py, oracle, Method::Ngd, s, DEConfig::default(), ngd)
}

/// Runs an experiment described by a TOML config, writing its files when
/// the config names an output directory.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str) -> PyResult<SearchOutcome> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).py_err()?;
    let inner = py.detach(|| run_experiment_rs(&cfg)).py_err()?;
    Ok(SearchOutcome { inner })
}

#[pymodule]
fn jointattack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("JointAttackError", m.py().get_type::<JointAttackError>())?;
    m.add_class::<Oracle>()?;
    m.add_class::<MeanRewardEstimate>()?;
    m.add_class::<SearchOutcome>()?;
    m.add_function(wrap_pyfunction!(clip_inf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(apply_perturbation, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mean_reward, m)?)?;
    m.add_function(wrap_pyfunction!(random_search, m)?)?;
    m.add_function(wrap_pyfunction!(de_search, m)?)?;
    m.add_function(wrap_pyfunction!(ngd_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
