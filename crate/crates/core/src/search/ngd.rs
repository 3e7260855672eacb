//! Numerical gradient descent with forward differences.

use serde::{Deserialize, Serialize};

use super::{Evaluator, Method, SearchOutcome, SearchSettings};
use crate::error::{AttackError, Result};
use crate::oracle::{estimate_mean_reward, RolloutOracle};
use crate::perturbation::{clip_inf, inf_norm, TorquePerturbation};

/// Consecutive zero-gradient iterations tolerated before giving up.
pub const MAX_CONSECUTIVE_STALLS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGDConfig {
    /// Finite-difference step `h`.
    pub finite_difference: f64,
    /// Step size `α` applied to the inf-normalized gradient.
    pub step_size: f64,
    /// Episodes per gradient probe; `None` uses the evaluation episode count.
    pub gradient_episodes: Option<usize>,
}

impl Default for NGDConfig {
    fn default() -> Self {
        Self {
            finite_difference: 0.01,
            step_size: 0.05,
            gradient_episodes: None,
        }
    }
}

impl NGDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.finite_difference > 0.0) || !(self.step_size > 0.0) {
            return Err(AttackError::arg("finite_difference and step_size must be positive"));
        }
        if self.gradient_episodes == Some(0) {
            return Err(AttackError::arg("gradient_episodes must be at least 1"));
        }
        Ok(())
    }
}

/// Probe for coordinate `i`: `δ + h·e_i`, or `δ − h·e_i` when the forward
/// point would leave the ball. Returns the probe and its signed step, or
/// `None` when no step fits (a zero-radius ball).
fn probe(delta: &[f64], i: usize, h: f64, eps: f64) -> Option<(Vec<f64>, f64)> {
    let x = delta[i];
    let step = if x + h <= eps {
        h
    } else if x - h >= -eps {
        -h
    } else {
        let up = eps - x;
        let down = -eps - x;
        if up >= -down {
            up
        } else {
            down
        }
    };
    if step == 0.0 {
        return None;
    }
    let mut p = delta.to_vec();
    p[i] = (x + step).clamp(-eps, eps);
    Some((p, step))
}

/// Forward-difference gradient of the mean reward at `delta`.
///
/// The base point and every probe share `seed`, so stochastic oracles see
/// the same episode streams on both sides of each difference.
pub fn forward_difference_gradient<O: RolloutOracle + ?Sized>(
    oracle: &O,
    delta: &TorquePerturbation,
    h: f64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(AttackError::arg("finite difference must be positive"));
    }
    let eps = delta.eps();
    let base = estimate_mean_reward(oracle, delta, episodes, seed)?.mean;
    (0..delta.len())
        .map(|i| match probe(delta.as_slice(), i, h, eps) {
            None => Ok(0.0),
            Some((p, step)) => {
                let p = TorquePerturbation::new(p, eps)?;
                Ok((estimate_mean_reward(oracle, &p, episodes, seed)?.mean - base) / step)
            }
        })
        .collect()
}

/// Gradient descent from `δ = 0` using forward-difference gradients,
/// normalized by their inf-norm and clipped back into the ball.
///
/// Only the iterate itself competes for `δ_best`; probes count against the
/// budget but are not candidates. A zero gradient skips the update and the
/// next iteration re-probes under a fresh seed; after
/// [`MAX_CONSECUTIVE_STALLS`] in a row the search stops with an abort mark.
/// A zero-radius ball is evaluated once.
pub fn ngd_search<O: RolloutOracle + ?Sized>(
    oracle: &O,
    cfg: &NGDConfig,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut ev = Evaluator::new(oracle, settings)?;
    let eps = settings.eps;
    let n = ev.n();
    let probe_episodes = cfg.gradient_episodes.unwrap_or(settings.episodes);
    let mut delta = TorquePerturbation::zeros(n, eps)?;
    let mut iteration: u64 = 0;
    let mut total_stalls: u64 = 0;
    let mut stalls = 0usize;
    let mut error = None;

    'search: while ev.has_budget() {
        let label = if settings.common_random_numbers {
            total_stalls
        } else {
            iteration
        };
        let seed = ev.seed_for_label(label);
        iteration += 1;

        let base = match ev.measure(&delta, seed) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        ev.record(&delta, base, true);
        if eps == 0.0 {
            break;
        }

        let mut grad = vec![0.0; n];
        for (i, g) in grad.iter_mut().enumerate() {
            let Some((p, step)) = probe(delta.as_slice(), i, cfg.finite_difference, eps) else {
                continue;
            };
            if !ev.has_budget() {
                break 'search;
            }
            let p = TorquePerturbation::new(p, eps)?;
            match ev.measure_with(&p, seed, probe_episodes) {
                Ok(v) => {
                    ev.record(&p, v, false);
                    *g = (v - base) / step;
                }
                Err(e) => {
                    error = Some(e);
                    break 'search;
                }
            }
        }

        let norm = inf_norm(&grad);
        if norm == 0.0 || !norm.is_finite() {
            stalls += 1;
            total_stalls += 1;
            if stalls >= MAX_CONSECUTIVE_STALLS {
                error = Some(AttackError::Oracle(format!(
                    "gradient stalled for {stalls} consecutive iterations"
                )));
                break;
            }
            continue;
        }
        stalls = 0;
        let stepped: Vec<f64> = delta
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(d, g)| d - cfg.step_size * g / norm)
            .collect();
        delta = clip_inf(&stepped, eps)?;
    }
    ev.finish(Method::Ngd, None, error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConstantOracle, LinearOracle, QuadraticOracle};
    use crate::search::SearchBudget;

    fn settings(eps: f64, evals: u64) -> SearchSettings {
        SearchSettings::new(eps, SearchBudget::evaluations(evals), 0).with_episodes(1)
    }

    #[test]
    fn probe_stays_in_ball() {
        assert_eq!(probe(&[0.0, 0.5], 1, 0.1, 0.5), Some((vec![0.0, 0.4], -0.1)));
        assert_eq!(probe(&[0.0, 0.5], 0, 0.1, 0.5), Some((vec![0.1, 0.5], 0.1)));
        let (p, step) = probe(&[0.02], 0, 0.1, 0.05).unwrap();
        assert!((p[0] - -0.05).abs() < 1e-15 && (step - -0.07).abs() < 1e-15);
        assert_eq!(probe(&[0.0], 0, 0.1, 0.0), None);
    }

    #[test]
    fn gradient_matches_closed_form_at_origin() {
        let center = vec![0.2, -0.1, 0.0, 0.0];
        let o = QuadraticOracle::new(center, 1.0, 0.0).unwrap();
        let zero = TorquePerturbation::zeros(4, 0.5).unwrap();
        let g = forward_difference_gradient(&o, &zero, 1e-3, 1, 0).unwrap();
        let exact = o.gradient(zero.as_slice());
        let err = g.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err / inf_norm(&exact) <= 0.05, "{g:?} vs {exact:?}");
    }

    #[test]
    fn first_step_on_linear_oracle() {
        let w = vec![2.0, -1.0, 0.5];
        let o = LinearOracle::new(w.clone(), 0.0).unwrap();
        let cfg = NGDConfig {
            step_size: 0.05,
            finite_difference: 0.01,
            gradient_episodes: None,
        };
        // Iteration 1 spends 4 evaluations; the 5th evaluates the new iterate.
        let out = ngd_search(&o, &cfg, &settings(0.5, 5)).unwrap();
        let wmax = 2.0;
        for (d, wi) in out.best_pert.as_slice().iter().zip(&w) {
            let expected = -0.05 * wi / wmax;
            assert!((d - expected).abs() < 1e-9, "{d} vs {expected}");
        }
    }

    #[test]
    fn starts_at_zero() {
        let o = LinearOracle::new(vec![1.0, 1.0], 0.0).unwrap();
        let out = ngd_search(&o, &NGDConfig::default(), &settings(0.5, 1)).unwrap();
        assert_eq!(out.best_pert.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn flat_objective_stalls_out() {
        let o = ConstantOracle {
            n_actuators: 3,
            reward: 2.0,
        };
        let out = ngd_search(&o, &NGDConfig::default(), &settings(0.5, 10_000)).unwrap();
        assert!(out.aborted.as_deref().unwrap().contains("stalled"));
        assert_eq!(out.evaluations_used, (MAX_CONSECUTIVE_STALLS * 4) as u64);
        assert_eq!(out.best_mean_reward, 2.0);
    }

    #[test]
    fn zero_ball_evaluates_once() {
        let o = LinearOracle::new(vec![1.0, -1.0], 0.0).unwrap();
        let out = ngd_search(&o, &NGDConfig::default(), &settings(0.0, 100)).unwrap();
        assert_eq!(out.evaluations_used, 1);
        assert!(out.aborted.is_none());
    }

    #[test]
    fn descends_quadratic_bowl() {
        let o = QuadraticOracle::new(vec![0.3, -0.2, 0.1], 1.0, 0.0).unwrap();
        let cfg = NGDConfig {
            step_size: 0.01,
            ..Default::default()
        };
        let out = ngd_search(&o, &cfg, &settings(0.5, 400)).unwrap();
        assert!(out.best_mean_reward < 0.01, "{}", out.best_mean_reward);
    }
}
