use rand::seq::SliceRandom;

use super::{Evaluator, Method, SearchOutcome, SearchSettings};
use crate::error::{AttackError, Result};
use crate::oracle::RolloutOracle;
use crate::perturbation::{clip_inf, sample_uniform, TorquePerturbation};
use crate::rng::SeededRng;

/// Supplies random-search candidates. `None` ends the search early.
pub trait CandidateSource {
    fn next_candidate(&mut self, rng: &mut SeededRng, eps: f64, n: usize) -> Result<Option<TorquePerturbation>>;
}

/// i.i.d. draws from `U([-ε, ε]^n)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformCandidates;

impl CandidateSource for UniformCandidates {
    fn next_candidate(&mut self, rng: &mut SeededRng, eps: f64, n: usize) -> Result<Option<TorquePerturbation>> {
        sample_uniform(rng, eps, n).map(Some)
    }
}

/// Visits the points of a regular grid over the ball in a random order,
/// each exactly once.
#[derive(Debug, Clone)]
pub struct ShuffledGrid {
    points_per_axis: usize,
    order: Option<Vec<usize>>,
    cursor: usize,
}

impl ShuffledGrid {
    pub fn new(points_per_axis: usize) -> Result<Self> {
        if points_per_axis < 2 {
            return Err(AttackError::arg("a grid needs at least two points per axis"));
        }
        Ok(Self {
            points_per_axis,
            order: None,
            cursor: 0,
        })
    }

    /// Coordinate value of grid index `k` on one axis.
    pub fn axis_value(&self, k: usize, eps: f64) -> f64 {
        -eps + 2.0 * eps * k as f64 / (self.points_per_axis - 1) as f64
    }
}

impl CandidateSource for ShuffledGrid {
    fn next_candidate(&mut self, rng: &mut SeededRng, eps: f64, n: usize) -> Result<Option<TorquePerturbation>> {
        let p = self.points_per_axis;
        let order = match &mut self.order {
            Some(order) => order,
            None => {
                let total = u32::try_from(n)
                    .ok()
                    .and_then(|n| p.checked_pow(n))
                    .filter(|&t| t <= 1 << 24)
                    .ok_or_else(|| AttackError::arg("grid too large to enumerate"))?;
                let mut order: Vec<usize> = (0..total).collect();
                order.shuffle(rng);
                self.order.insert(order)
            }
        };
        let Some(&flat) = order.get(self.cursor) else {
            return Ok(None);
        };
        self.cursor += 1;
        let mut rest = flat;
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            raw.push(self.axis_value(rest % p, eps));
            rest /= p;
        }
        clip_inf(&raw, eps).map(Some)
    }
}

/// Random search: sample, evaluate, keep the argmin.
pub fn random_search<O: RolloutOracle + ?Sized>(oracle: &O, settings: &SearchSettings) -> Result<SearchOutcome> {
    random_search_with(oracle, settings, &mut UniformCandidates)
}

/// Random search over an arbitrary candidate source.
pub fn random_search_with<O: RolloutOracle + ?Sized, C: CandidateSource + ?Sized>(
    oracle: &O,
    settings: &SearchSettings,
    source: &mut C,
) -> Result<SearchOutcome> {
    let mut ev = Evaluator::new(oracle, settings)?;
    let mut rng = SeededRng::new(settings.seed, 0);
    let mut error = None;
    while ev.has_budget() {
        let candidate = match source.next_candidate(&mut rng, settings.eps, ev.n()) {
            Ok(Some(c)) => c,
            Ok(None) => break,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        match ev.measure(&candidate, ev.seed_for(0)) {
            Ok(v) => ev.record(&candidate, v, true),
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    ev.finish(Method::Random, None, error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{estimate_mean_reward, ConstantOracle, LinearOracle};
    use crate::search::SearchBudget;

    fn settings(eps: f64, evals: u64, seed: u64) -> SearchSettings {
        SearchSettings::new(eps, SearchBudget::evaluations(evals), seed).with_episodes(1)
    }

    #[test]
    fn single_evaluation_keeps_the_only_sample() {
        let o = LinearOracle::new(vec![1.0, 2.0, 3.0], 0.0).unwrap();
        let out = random_search(&o, &settings(0.3, 1, 5)).unwrap();
        let expected = sample_uniform(&mut SeededRng::new(5, 0), 0.3, 3).unwrap();
        assert_eq!(out.best_pert, expected);
        assert_eq!(out.evaluations_used, 1);
        assert_eq!(out.best_mean_reward, o.value(expected.as_slice()));
    }

    #[test]
    fn zero_ball_returns_zero() {
        let o = LinearOracle::new(vec![1.0, -2.0], 0.5).unwrap();
        let s = SearchSettings::new(0.0, SearchBudget::evaluations(5), 1).with_episodes(4);
        let out = random_search(&o, &s).unwrap();
        assert_eq!(out.best_pert.as_slice(), &[0.0, 0.0]);
        assert!(out.best_mean_reward.is_finite());
        let zero = TorquePerturbation::zeros(2, 0.0).unwrap();
        // The best of five C̄(0) estimates under different seeds.
        let min = (0..5)
            .map(|k| {
                let ev = Evaluator::new(&o, &s).unwrap();
                estimate_mean_reward(&o, &zero, 4, ev.seed_for_label(k)).unwrap().mean
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_mean_reward, min);
    }

    #[test]
    fn ties_keep_the_first_candidate() {
        let o = ConstantOracle {
            n_actuators: 2,
            reward: 1.0,
        };
        let out = random_search(&o, &settings(0.5, 30, 2)).unwrap();
        let first = sample_uniform(&mut SeededRng::new(2, 0), 0.5, 2).unwrap();
        assert_eq!(out.best_pert, first);
    }

    #[test]
    fn grid_visits_each_point_once() {
        let mut grid = ShuffledGrid::new(5).unwrap();
        let mut rng = SeededRng::new(0, 0);
        let mut seen = std::collections::HashSet::new();
        while let Some(p) = grid.next_candidate(&mut rng, 1.0, 2).unwrap() {
            assert!(p.inf_norm() <= 1.0);
            seen.insert(p.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 25);
        assert!(ShuffledGrid::new(1).is_err());
    }

    #[test]
    fn grid_exhaustion_stops_early() {
        let o = LinearOracle::new(vec![1.0, 1.0], 0.0).unwrap();
        let out = random_search_with(&o, &settings(0.5, 100, 0), &mut ShuffledGrid::new(3).unwrap()).unwrap();
        assert_eq!(out.evaluations_used, 9);
        assert_eq!(out.best_pert.as_slice(), &[-0.5, -0.5]);
    }
}
