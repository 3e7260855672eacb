//! Differential evolution with best/1 mutation and binomial crossover.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Evaluator, Individual, Method, SearchOutcome, SearchSettings};
use crate::error::{AttackError, Result};
use crate::oracle::RolloutOracle;
use crate::perturbation::{clip_inf, sample_uniform, TorquePerturbation};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DEConfig {
    /// `NP`.
    pub population_size: usize,
    /// `CR`.
    pub crossover_rate: f64,
    /// `F` is drawn from `(f_low, f_high]` once per mutant.
    pub f_low: f64,
    pub f_high: f64,
    /// Re-estimate the target's fitness every generation instead of reusing
    /// the value from the evaluation that produced it.
    pub reevaluate_targets: bool,
    /// Evaluate the trials of one generation on worker threads. Results are
    /// merged in individual order, so the outcome does not change.
    pub parallel_trials: bool,
}

impl Default for DEConfig {
    fn default() -> Self {
        Self {
            population_size: 120,
            crossover_rate: 0.7,
            f_low: 0.5,
            f_high: 1.0,
            reevaluate_targets: false,
            parallel_trials: false,
        }
    }
}

impl DEConfig {
    /// Population size used for 8-actuator (quadruped) targets.
    pub const NP_QUADRUPED: usize = 120;
    /// Population size used for 17-actuator (biped) targets.
    pub const NP_BIPED: usize = 255;

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(AttackError::arg("DE needs a population of at least 4"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(AttackError::arg("crossover_rate must lie in [0, 1]"));
        }
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high.is_finite()) {
            return Err(AttackError::arg("need 0 < f_low < f_high"));
        }
        Ok(())
    }
}

/// Builds the trial vector for `target` (before clipping is applied by the
/// caller through `clip_inf`).
pub(crate) fn make_trial(
    rng: &mut SeededRng,
    cfg: &DEConfig,
    population: &[Vec<f64>],
    best: &[f64],
    target: usize,
) -> Vec<f64> {
    let np = population.len();
    let n = best.len();
    // Two distinct donors, both different from the target.
    let picks = index::sample(rng, np - 1, 2);
    let skip = |k: usize| if k >= target { k + 1 } else { k };
    let (r1, r2) = (skip(picks.index(0)), skip(picks.index(1)));
    let f = cfg.f_high - rng.random::<f64>() * (cfg.f_high - cfg.f_low);
    let forced = rng.random_range(0..n);
    (0..n)
        .map(|j| {
            let r: f64 = rng.random();
            if r <= cfg.crossover_rate || j == forced {
                best[j] + f * (population[r1][j] - population[r2][j])
            } else {
                population[target][j]
            }
        })
        .collect()
}

/// Differential evolution (best/1/bin) minimizing the mean reward.
///
/// Generation 0 is evaluated in full and seeds `δ_best`. Mutants in a
/// generation all use the `δ_best` held when that generation started.
/// A trial replaces its target when its fitness is `<=` the target's.
pub fn de_search<O: RolloutOracle + ?Sized>(
    oracle: &O,
    cfg: &DEConfig,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut ev = Evaluator::new(oracle, settings)?;
    let eps = settings.eps;
    let n = ev.n();
    let np = cfg.population_size;
    let mut rng = SeededRng::new(settings.seed, 0);

    let mut population: Vec<TorquePerturbation> = Vec::with_capacity(np);
    let mut fitness: Vec<f64> = Vec::with_capacity(np);
    let initial: Vec<TorquePerturbation> = (0..np)
        .map(|_| sample_uniform(&mut rng, eps, n))
        .collect::<Result<_>>()?;
    let (values, error) = evaluate_batch(&ev, &initial, cfg.parallel_trials);
    for (p, v) in initial.into_iter().zip(values) {
        ev.record(&p, v, true);
        population.push(p);
        fitness.push(v);
    }
    if let Some(e) = error {
        return finish(ev, population, fitness, Some(e));
    }
    if population.len() < np {
        return finish(ev, population, fitness, None);
    }

    let mut error = None;
    while ev.has_budget() && error.is_none() {
        let best = ev.best_delta().expect("generation 0 was evaluated").to_vec();
        let raw: Vec<Vec<f64>> = population.iter().map(|p| p.to_vec()).collect();
        let trials: Vec<TorquePerturbation> = (0..np)
            .map(|i| clip_inf(&make_trial(&mut rng, cfg, &raw, &best, i), eps))
            .collect::<Result<_>>()?;

        if cfg.reevaluate_targets {
            // Target then trial, individual by individual.
            for i in 0..np {
                if ev.remaining() < 2 {
                    break;
                }
                let target = match ev.measure(&population[i], ev.seed_for(0)) {
                    Ok(v) => v,
                    Err(e) => {
                        error = Some(e);
                        break;
                    }
                };
                ev.record(&population[i], target, false);
                fitness[i] = target;
                match ev.measure(&trials[i], ev.seed_for(0)) {
                    Ok(v) => select(&mut ev, &mut population, &mut fitness, i, &trials[i], v),
                    Err(e) => {
                        error = Some(e);
                        break;
                    }
                }
            }
            if ev.remaining() < 2 {
                break;
            }
            continue;
        }

        let affordable = usize::try_from(ev.remaining()).unwrap_or(usize::MAX).min(np);
        let (values, err) = evaluate_batch(&ev, &trials[..affordable], cfg.parallel_trials);
        for (i, v) in values.into_iter().enumerate() {
            select(&mut ev, &mut population, &mut fitness, i, &trials[i], v);
        }
        error = err;
        if affordable < np {
            break;
        }
    }
    finish(ev, population, fitness, error)
}

fn select<O: RolloutOracle + ?Sized>(
    ev: &mut Evaluator<'_, O>,
    population: &mut [TorquePerturbation],
    fitness: &mut [f64],
    i: usize,
    trial: &TorquePerturbation,
    value: f64,
) {
    let accept = value <= fitness[i];
    ev.record(trial, value, accept);
    if accept {
        population[i] = trial.clone();
        fitness[i] = value;
    }
}

/// Measures candidates with consecutive evaluation seeds. Returns the values
/// up to the first failure, and that failure.
fn evaluate_batch<O: RolloutOracle + ?Sized>(
    ev: &Evaluator<'_, O>,
    candidates: &[TorquePerturbation],
    parallel: bool,
) -> (Vec<f64>, Option<AttackError>) {
    let budget = usize::try_from(ev.remaining()).unwrap_or(usize::MAX);
    let candidates = &candidates[..candidates.len().min(budget)];
    let measure = |(k, p): (usize, &TorquePerturbation)| ev.measure(p, ev.seed_for(k as u64));
    let results: Vec<Result<f64>> = if parallel {
        candidates.par_iter().enumerate().map(measure).collect()
    } else {
        let mut out = Vec::with_capacity(candidates.len());
        for item in candidates.iter().enumerate() {
            let r = measure(item);
            let failed = r.is_err();
            out.push(r);
            if failed || !ev.has_budget() {
                break;
            }
        }
        out
    };
    let mut values = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(e) => return (values, Some(e)),
        }
    }
    (values, None)
}

fn finish<O: RolloutOracle + ?Sized>(
    ev: Evaluator<'_, O>,
    population: Vec<TorquePerturbation>,
    fitness: Vec<f64>,
    error: Option<AttackError>,
) -> Result<SearchOutcome> {
    let pop = population
        .into_iter()
        .zip(fitness)
        .map(|(delta, fitness)| Individual { delta, fitness })
        .collect();
    ev.finish(Method::De, Some(pop), error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{LinearOracle, QuadraticOracle};
    use crate::search::SearchBudget;

    fn settings(eps: f64, evals: u64, seed: u64) -> SearchSettings {
        SearchSettings::new(eps, SearchBudget::evaluations(evals), seed).with_episodes(1)
    }

    #[test]
    fn config_validation() {
        assert!(DEConfig::default().validate().is_ok());
        assert!(DEConfig {
            population_size: 3,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DEConfig {
            crossover_rate: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DEConfig {
            f_low: 1.0,
            f_high: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(DEConfig::NP_QUADRUPED, 120);
        assert_eq!(DEConfig::NP_BIPED, 255);
    }

    #[test]
    fn full_crossover_takes_the_mutant() {
        let cfg = DEConfig {
            crossover_rate: 1.0,
            population_size: 5,
            ..Default::default()
        };
        let pop: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64, -0.05 * i as f64, 0.02]).collect();
        let best = vec![0.3, 0.3, 0.3];
        for seed in 0..50 {
            let trial = make_trial(&mut SeededRng::new(seed, 0), &cfg, &pop, &best, 2);
            // Every coordinate is best + F·(x_r1 − x_r2) with one common F.
            let diffs: Vec<f64> = trial.iter().zip(&best).map(|(t, b)| t - b).collect();
            let pairs: Vec<(usize, usize)> = (0..5)
                .flat_map(|a| (0..5).map(move |b| (a, b)))
                .filter(|&(a, b)| a != b && a != 2 && b != 2)
                .collect();
            let found = pairs.iter().any(|&(a, b)| {
                let f = diffs[0] / (pop[a][0] - pop[b][0]);
                f > 0.5 && f <= 1.0 && (0..3).all(|j| (best[j] + f * (pop[a][j] - pop[b][j]) - trial[j]).abs() < 1e-12)
            });
            assert!(found, "seed {seed}: {trial:?}");
        }
    }

    #[test]
    fn zero_crossover_changes_one_coordinate() {
        let cfg = DEConfig {
            crossover_rate: 0.0,
            population_size: 6,
            ..Default::default()
        };
        let pop: Vec<Vec<f64>> = (0..6).map(|i| vec![0.01 * i as f64; 5]).collect();
        let best = vec![0.4; 5];
        for seed in 0..20 {
            let trial = make_trial(&mut SeededRng::new(seed, 0), &cfg, &pop, &best, 0);
            let changed = trial.iter().zip(&pop[0]).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn converges_on_linear_corner() {
        let w = vec![2.0, -3.0, 1.0, -1.5, 0.5, -2.5, 1.2, -0.7];
        let o = LinearOracle::new(w, 0.0).unwrap();
        let cfg = DEConfig {
            population_size: 40,
            ..Default::default()
        };
        let out = de_search(&o, &cfg, &settings(0.5, 40 * 200, 11)).unwrap();
        for (got, want) in out.best_pert.as_slice().iter().zip(o.minimizer(0.5)) {
            assert!((got - want).abs() <= 1e-2, "{got} vs {want}");
        }
        assert!((out.best_mean_reward - o.minimum(0.5)).abs() <= 0.01 * o.minimum(0.5).abs());
    }

    #[test]
    fn population_stays_in_ball_and_fitness_never_worsens() {
        let o = QuadraticOracle::new(vec![0.9, -0.9, 0.0, 0.3], 1.0, 0.0).unwrap();
        let cfg = DEConfig {
            population_size: 10,
            ..Default::default()
        };
        let short = de_search(&o, &cfg, &settings(0.5, 30, 4)).unwrap();
        let long = de_search(&o, &cfg, &settings(0.5, 200, 4)).unwrap();
        let a = short.final_population.unwrap();
        let b = long.final_population.unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(y.fitness <= x.fitness);
            assert!(y.delta.inf_norm() <= 0.5);
        }
    }

    #[test]
    fn parallel_trials_match_serial() {
        let o = QuadraticOracle::new(vec![0.2, -0.1, 0.4], 2.0, 0.3).unwrap();
        let serial = DEConfig {
            population_size: 12,
            ..Default::default()
        };
        let parallel = DEConfig {
            parallel_trials: true,
            ..serial.clone()
        };
        let s = settings(0.5, 150, 9).with_episodes(5);
        assert_eq!(
            de_search(&o, &serial, &s).unwrap(),
            de_search(&o, &parallel, &s).unwrap()
        );
    }

    #[test]
    fn reevaluation_mode_respects_budget() {
        let o = QuadraticOracle::new(vec![0.2, -0.1], 1.0, 0.2).unwrap();
        let cfg = DEConfig {
            population_size: 6,
            reevaluate_targets: true,
            ..Default::default()
        };
        let out = de_search(&o, &cfg, &settings(0.5, 41, 1).with_episodes(3)).unwrap();
        assert!(out.evaluations_used <= 41);
        out.check_invariants().unwrap();
    }

    #[test]
    fn budget_smaller_than_population() {
        let o = LinearOracle::new(vec![1.0, 1.0], 0.0).unwrap();
        let cfg = DEConfig {
            population_size: 10,
            ..Default::default()
        };
        let out = de_search(&o, &cfg, &settings(0.5, 4, 0)).unwrap();
        assert_eq!(out.evaluations_used, 4);
        assert_eq!(out.final_population.unwrap().len(), 4);
    }
}
