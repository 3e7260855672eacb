//! Black-box searchers minimizing the empirical mean cumulative reward over
//! the ε-ball.
//!
//! All three drivers share an [`Evaluator`] that owns the budget, the
//! best-so-far record and the convergence trace. One evaluation is one
//! `episodes`-episode mean estimate.

mod de;
mod ngd;
mod random;

use std::time::{Duration, Instant};

use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AttackError, Result};
use crate::oracle::{estimate_mean_reward, OracleSpec, RolloutOracle, DEFAULT_EPISODES};
use crate::perturbation::TorquePerturbation;
use crate::rng::derive_seed;

pub use de::{de_search, DEConfig};
pub use ngd::{forward_difference_gradient, ngd_search, NGDConfig, MAX_CONSECUTIVE_STALLS};
pub use random::{random_search, random_search_with, CandidateSource, ShuffledGrid, UniformCandidates};

/// Domain label separating evaluation seeds from other derived seeds.
const EVAL_SEED_DOMAIN: u64 = 0x6576_616c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    De,
    Ngd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::De => "de",
            Method::Ngd => "ngd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" | "rs" => Ok(Method::Random),
            "de" => Ok(Method::De),
            "ngd" | "gd" => Ok(Method::Ngd),
            other => Err(AttackError::Config(format!(
                "unknown method {other:?} (expected random, de or ngd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_evaluations: Option<u64>,
    pub wall_clock_limit: Option<Duration>,
}

impl SearchBudget {
    pub fn evaluations(n: u64) -> Self {
        Self {
            max_evaluations: Some(n),
            wall_clock_limit: None,
        }
    }

    pub fn wall_clock(limit: Duration) -> Self {
        Self {
            max_evaluations: None,
            wall_clock_limit: Some(limit),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_evaluations, self.wall_clock_limit) {
            (None, None) => Err(AttackError::arg("search budget needs an evaluation or time limit")),
            (Some(0), _) => Err(AttackError::arg("evaluation budget must be positive")),
            (_, Some(d)) if d.is_zero() => Err(AttackError::arg("time budget must be positive")),
            _ => Ok(()),
        }
    }
}

/// When trace points are appended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceInterval {
    Evaluations(u64),
    Seconds(f64),
}

impl Default for TraceInterval {
    fn default() -> Self {
        TraceInterval::Evaluations(10)
    }
}

/// Settings shared by every searcher.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    pub eps: f64,
    /// Episodes per evaluation (`M`).
    pub episodes: usize,
    pub budget: SearchBudget,
    pub seed: u64,
    /// Reuse one evaluation seed for every candidate instead of a fresh one.
    pub common_random_numbers: bool,
    pub trace_interval: TraceInterval,
    /// Record wall-clock seconds in the trace. Forced on by wall-clock
    /// budgets and wall-clock trace intervals; otherwise the seconds column
    /// is 0 so that outcomes are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl SearchSettings {
    pub fn new(eps: f64, budget: SearchBudget, seed: u64) -> Self {
        Self {
            eps,
            episodes: DEFAULT_EPISODES,
            budget,
            seed,
            common_random_numbers: false,
            trace_interval: TraceInterval::default(),
            record_wall_time: false,
        }
    }

    pub fn with_episodes(mut self, episodes: usize) -> Self {
        self.episodes = episodes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(AttackError::arg(format!(
                "eps must be finite and >= 0, got {}",
                self.eps
            )));
        }
        if self.episodes == 0 {
            return Err(AttackError::arg("episodes must be at least 1"));
        }
        match self.trace_interval {
            TraceInterval::Evaluations(0) => return Err(AttackError::arg("trace interval must be positive")),
            TraceInterval::Seconds(s) if !(s > 0.0) => return Err(AttackError::arg("trace interval must be positive")),
            _ => {}
        }
        self.budget.validate()
    }
}

/// `(elapsed seconds, evaluations, best-so-far mean)`; serialized as a
/// three-element array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub seconds: f64,
    pub evaluations: u64,
    pub best_mean: f64,
}

impl Serialize for TracePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(3)?;
        t.serialize_element(&self.seconds)?;
        t.serialize_element(&self.evaluations)?;
        t.serialize_element(&self.best_mean)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for TracePoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (seconds, evaluations, best_mean) = <(f64, u64, f64)>::deserialize(d)?;
        Ok(Self {
            seconds,
            evaluations,
            best_mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub delta: TorquePerturbation,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub method: Method,
    pub eps: f64,
    pub episodes: usize,
    pub seed: u64,
    pub best_pert: TorquePerturbation,
    pub best_mean_reward: f64,
    pub evaluations_used: u64,
    pub trace: Vec<TracePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_population: Option<Vec<Individual>>,
    /// Set when the search stopped early on an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl SearchOutcome {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AttackError::Io(e.to_string()))
    }

    /// Parses an outcome document and re-checks its invariants against the
    /// recorded `eps`.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut out: SearchOutcome =
            serde_json::from_str(text).map_err(|e| AttackError::Config(format!("outcome JSON: {e}")))?;
        out.best_pert = out.best_pert.with_bound(out.eps)?;
        if let Some(pop) = out.final_population.as_mut() {
            for ind in pop.iter_mut() {
                ind.delta = ind.delta.with_bound(out.eps)?;
            }
        }
        out.check_invariants()?;
        Ok(out)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(AttackError::State(m));
        if self.best_pert.inf_norm() > self.eps {
            return bad(format!("best_pert leaves the ball of radius {}", self.eps));
        }
        if self.trace.windows(2).any(|w| w[1].best_mean > w[0].best_mean) {
            return bad("trace best-so-far increases".into());
        }
        match self.trace.last() {
            Some(p) if p.best_mean == self.best_mean_reward => {}
            _ => return bad("last trace point differs from best_mean_reward".into()),
        }
        if self.final_population.is_some() != (self.method == Method::De) {
            return bad("final_population must be present exactly for DE outcomes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Clock {
    Wall(Instant),
    Off(Instant),
}

impl Clock {
    fn start(record: bool) -> Self {
        if record {
            Clock::Wall(Instant::now())
        } else {
            Clock::Off(Instant::now())
        }
    }

    fn started(&self) -> Instant {
        match self {
            Clock::Wall(t) | Clock::Off(t) => *t,
        }
    }

    fn trace_seconds(&self) -> f64 {
        match self {
            Clock::Wall(t) => t.elapsed().as_secs_f64(),
            Clock::Off(_) => 0.0,
        }
    }
}

/// Budget, best-so-far and trace bookkeeping shared by the searchers.
pub(crate) struct Evaluator<'a, O: RolloutOracle + ?Sized> {
    oracle: &'a O,
    spec: OracleSpec,
    settings: &'a SearchSettings,
    evaluations: u64,
    best: Option<(TorquePerturbation, f64)>,
    trace: Vec<TracePoint>,
    clock: Clock,
    next_mark: f64,
}

impl<'a, O: RolloutOracle + ?Sized> Evaluator<'a, O> {
    pub(crate) fn new(oracle: &'a O, settings: &'a SearchSettings) -> Result<Self> {
        settings.validate()?;
        let spec = oracle.spec();
        spec.validate()?;
        let record = settings.record_wall_time
            || settings.budget.wall_clock_limit.is_some()
            || matches!(settings.trace_interval, TraceInterval::Seconds(_));
        let next_mark = match settings.trace_interval {
            TraceInterval::Seconds(s) => s,
            TraceInterval::Evaluations(_) => 0.0,
        };
        Ok(Self {
            oracle,
            spec,
            settings,
            evaluations: 0,
            best: None,
            trace: Vec::new(),
            clock: Clock::start(record),
            next_mark,
        })
    }

    pub(crate) fn n(&self) -> usize {
        self.spec.n_actuators
    }

    pub(crate) fn remaining(&self) -> u64 {
        if let Some(limit) = self.settings.budget.wall_clock_limit {
            if self.clock.started().elapsed() >= limit {
                return 0;
            }
        }
        match self.settings.budget.max_evaluations {
            Some(max) => max.saturating_sub(self.evaluations),
            None => u64::MAX,
        }
    }

    pub(crate) fn has_budget(&self) -> bool {
        self.remaining() > 0
    }

    pub(crate) fn best_delta(&self) -> Option<&TorquePerturbation> {
        self.best.as_ref().map(|(d, _)| d)
    }

    /// Seed for the evaluation `offset` places after the ones already used.
    pub(crate) fn seed_for(&self, offset: u64) -> u64 {
        self.seed_for_label(self.evaluations + offset)
    }

    pub(crate) fn seed_for_label(&self, label: u64) -> u64 {
        let base = derive_seed(self.settings.seed, EVAL_SEED_DOMAIN);
        if self.settings.common_random_numbers {
            base
        } else {
            derive_seed(base, label)
        }
    }

    /// Mean reward of `pert` under `seed`; does not touch the bookkeeping.
    pub(crate) fn measure(&self, pert: &TorquePerturbation, seed: u64) -> Result<f64> {
        self.measure_with(pert, seed, self.settings.episodes)
    }

    pub(crate) fn measure_with(&self, pert: &TorquePerturbation, seed: u64, episodes: usize) -> Result<f64> {
        if pert.inf_norm() > self.settings.eps {
            return Err(AttackError::State(format!(
                "searcher produced a perturbation outside the ball of radius {}",
                self.settings.eps
            )));
        }
        Ok(estimate_mean_reward(self.oracle, pert, episodes, seed)?.mean)
    }

    /// Books one finished evaluation. `offer` marks values eligible to
    /// replace the best (strict improvement only).
    pub(crate) fn record(&mut self, pert: &TorquePerturbation, value: f64, offer: bool) {
        self.evaluations += 1;
        if offer && self.best.as_ref().is_none_or(|(_, b)| value < *b) {
            self.best = Some((pert.clone(), value));
        }
        let Some((_, best)) = &self.best else { return };
        let due = match self.settings.trace_interval {
            TraceInterval::Evaluations(k) => self.evaluations.is_multiple_of(k),
            TraceInterval::Seconds(step) => {
                let now = self.clock.trace_seconds();
                if now >= self.next_mark {
                    while self.next_mark <= now {
                        self.next_mark += step;
                    }
                    true
                } else {
                    false
                }
            }
        };
        if due {
            self.push_point(*best);
        }
    }

    fn push_point(&mut self, best_mean: f64) {
        self.trace.push(TracePoint {
            seconds: self.clock.trace_seconds(),
            evaluations: self.evaluations,
            best_mean,
        });
    }

    pub(crate) fn finish(
        mut self,
        method: Method,
        final_population: Option<Vec<Individual>>,
        error: Option<AttackError>,
    ) -> Result<SearchOutcome> {
        let Some((best_pert, best_mean)) = self.best.clone() else {
            return Err(
                error.unwrap_or_else(|| AttackError::State("search ended before any evaluation completed".into()))
            );
        };
        if self.trace.last().is_none_or(|p| p.evaluations != self.evaluations) {
            self.push_point(best_mean);
        }
        Ok(SearchOutcome {
            method,
            eps: self.settings.eps,
            episodes: self.settings.episodes,
            seed: self.settings.seed,
            best_pert,
            best_mean_reward: best_mean,
            evaluations_used: self.evaluations,
            trace: self.trace,
            final_population,
            aborted: error.map(|e| e.to_string()),
        })
    }
}

/// Runs the chosen searcher with default method settings where `de`/`ngd`
/// are not supplied.
pub fn run_search<O: RolloutOracle + ?Sized>(
    oracle: &O,
    method: Method,
    settings: &SearchSettings,
    de: &DEConfig,
    ngd: &NGDConfig,
) -> Result<SearchOutcome> {
    match method {
        Method::Random => random_search(oracle, settings),
        Method::De => de_search(oracle, de, settings),
        Method::Ngd => ngd_search(oracle, ngd, settings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearOracle;

    #[test]
    fn budget_validation() {
        assert!(SearchBudget::evaluations(1).validate().is_ok());
        assert!(SearchBudget::evaluations(0).validate().is_err());
        assert!(SearchBudget {
            max_evaluations: None,
            wall_clock_limit: None
        }
        .validate()
        .is_err());
        assert!(SearchBudget::wall_clock(Duration::ZERO).validate().is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("DE".parse::<Method>().unwrap(), Method::De);
        assert_eq!("random".parse::<Method>().unwrap(), Method::Random);
        assert!("cmaes".parse::<Method>().is_err());
    }

    #[test]
    fn trace_points_serialize_as_triples() {
        let p = TracePoint {
            seconds: 0.0,
            evaluations: 10,
            best_mean: -1.5,
        };
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.0,10,-1.5]");
        let back: TracePoint = serde_json::from_str("[0.0,10,-1.5]").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn outcome_json_round_trip() {
        let o = LinearOracle::new(vec![1.0, -1.0, 2.0], 0.0).unwrap();
        let s = SearchSettings::new(0.4, SearchBudget::evaluations(50), 3).with_episodes(1);
        let out = de_search(
            &o,
            &DEConfig {
                population_size: 8,
                ..Default::default()
            },
            &s,
        )
        .unwrap();
        let text = out.to_json().unwrap();
        let back = SearchOutcome::from_json(&text).unwrap();
        assert_eq!(back.best_pert.as_slice(), out.best_pert.as_slice());
        assert_eq!(back.best_pert.eps(), 0.4);
        assert_eq!(back.trace, out.trace);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn tampered_outcome_is_rejected() {
        let o = LinearOracle::new(vec![1.0, -1.0], 0.0).unwrap();
        let s = SearchSettings::new(0.4, SearchBudget::evaluations(20), 3).with_episodes(1);
        let mut out = random_search(&o, &s).unwrap();
        out.best_mean_reward += 1.0;
        assert!(SearchOutcome::from_json(&out.to_json().unwrap()).is_err());
    }
}
