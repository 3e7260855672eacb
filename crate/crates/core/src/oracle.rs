//! Black-box rollout oracles and the Monte-Carlo mean-reward estimator.
//!
//! An oracle only exposes its [`OracleSpec`] and a `rollout` call. Whatever
//! produces the actions (a trained policy, an open-loop controller, a remote
//! simulator) stays sealed behind it.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};
use crate::perturbation::TorquePerturbation;
use crate::rng::SeededRng;

/// Episodes per evaluation when the caller does not say otherwise.
pub const DEFAULT_EPISODES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub n_actuators: usize,
    pub horizon: usize,
    pub deterministic: bool,
    pub supports_concurrent_rollouts: bool,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_actuators == 0 || self.horizon == 0 {
            return Err(AttackError::arg("oracle spec needs n_actuators >= 1 and horizon >= 1"));
        }
        Ok(())
    }
}

/// Per-episode cumulative rewards and lengths of one rollout batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub cumulative_rewards: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl RolloutResult {
    pub fn episodes(&self) -> usize {
        self.cumulative_rewards.len()
    }

    fn check(&self, episodes: usize, horizon: usize) -> Result<()> {
        if self.cumulative_rewards.len() != episodes || self.episode_lengths.len() != episodes {
            return Err(AttackError::Oracle(format!(
                "oracle returned {} rewards and {} lengths for {episodes} episodes",
                self.cumulative_rewards.len(),
                self.episode_lengths.len()
            )));
        }
        if let Some(&len) = self.episode_lengths.iter().find(|&&l| l > horizon) {
            return Err(AttackError::Oracle(format!(
                "episode length {len} exceeds horizon {horizon}"
            )));
        }
        if self.cumulative_rewards.iter().any(|r| !r.is_finite()) {
            return Err(AttackError::Oracle("non-finite cumulative reward".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRewardEstimate {
    pub mean: f64,
    pub sample_std: f64,
    pub episodes: usize,
}

impl MeanRewardEstimate {
    /// Arithmetic mean and unbiased sample standard deviation.
    ///
    /// Accumulates offsets from the first reward, so identical episodes
    /// give back that reward exactly and a zero deviation.
    pub fn from_rewards(rewards: &[f64]) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(AttackError::arg("cannot average zero episodes"));
        }
        let shift = rewards[0];
        let mean = shift + rewards.iter().map(|r| r - shift).sum::<f64>() / n as f64;
        let sample_std = if n == 1 {
            0.0
        } else {
            let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Ok(Self {
            mean,
            sample_std,
            episodes: n,
        })
    }
}

/// A black-box evaluator of time-fixed torque perturbations.
///
/// Episode `m` of a call with master `seed` must draw its randomness from
/// `SeededRng::for_episode(seed, m)`, so a batch can be split across workers
/// without changing its result.
pub trait RolloutOracle: Send + Sync {
    fn spec(&self) -> OracleSpec;

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult>;
}

impl<O: RolloutOracle + ?Sized> RolloutOracle for &O {
    fn spec(&self) -> OracleSpec {
        (**self).spec()
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        (**self).rollout(pert, episodes, seed)
    }
}

impl<O: RolloutOracle + ?Sized> RolloutOracle for Box<O> {
    fn spec(&self) -> OracleSpec {
        (**self).spec()
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        (**self).rollout(pert, episodes, seed)
    }
}

impl<O: RolloutOracle + ?Sized> RolloutOracle for std::sync::Arc<O> {
    fn spec(&self) -> OracleSpec {
        (**self).spec()
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        (**self).rollout(pert, episodes, seed)
    }
}

/// Checked rollout: validates the request and the oracle's answer.
pub fn rollout<O: RolloutOracle + ?Sized>(
    oracle: &O,
    pert: &TorquePerturbation,
    episodes: usize,
    seed: u64,
) -> Result<RolloutResult> {
    let spec = oracle.spec();
    if pert.len() != spec.n_actuators {
        return Err(AttackError::Dimension {
            expected: spec.n_actuators,
            got: pert.len(),
        });
    }
    if episodes == 0 {
        return Err(AttackError::arg("episodes must be at least 1"));
    }
    let result = oracle.rollout(pert, episodes, seed)?;
    result.check(episodes, spec.horizon)?;
    Ok(result)
}

/// Empirical mean cumulative reward over `episodes` fresh rollouts.
pub fn estimate_mean_reward<O: RolloutOracle + ?Sized>(
    oracle: &O,
    pert: &TorquePerturbation,
    episodes: usize,
    seed: u64,
) -> Result<MeanRewardEstimate> {
    let result = rollout(oracle, pert, episodes, seed)?;
    MeanRewardEstimate::from_rewards(&result.cumulative_rewards)
}

/// Runs `episode` for indices `0..episodes`, each with its own stream, and
/// gathers the results in index order.
pub fn run_episodes<F>(episodes: usize, seed: u64, concurrent: bool, episode: F) -> Result<RolloutResult>
where
    F: Fn(&mut SeededRng) -> Result<(f64, usize)> + Send + Sync,
{
    let run = |m: usize| episode(&mut SeededRng::for_episode(seed, m));
    let outcomes: Vec<Result<(f64, usize)>> = if concurrent && episodes > 1 {
        (0..episodes).into_par_iter().map(run).collect()
    } else {
        (0..episodes).map(run).collect()
    };
    let mut cumulative_rewards = Vec::with_capacity(episodes);
    let mut episode_lengths = Vec::with_capacity(episodes);
    for o in outcomes {
        let (r, len) = o?;
        cumulative_rewards.push(r);
        episode_lengths.push(len);
    }
    Ok(RolloutResult {
        cumulative_rewards,
        episode_lengths,
    })
}

fn gaussian(rng: &mut SeededRng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std)
        .expect("noise std validated at construction")
        .sample(rng)
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(AttackError::arg(format!("{name} must be finite")));
    }
    Ok(())
}

fn check_noise(noise_std: f64) -> Result<()> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(AttackError::arg("noise_std must be finite and nonnegative"));
    }
    Ok(())
}

fn check_len(expected: usize, pert: &TorquePerturbation) -> Result<()> {
    if pert.len() != expected {
        return Err(AttackError::Dimension {
            expected,
            got: pert.len(),
        });
    }
    Ok(())
}

/// Single-step oracle with reward `w·δ + η`, `η ~ N(0, noise_std²)`.
///
/// Over the ε-ball its minimizer is the corner `-ε·sign(w)`.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    weights: Vec<f64>,
    noise_std: f64,
}

impl LinearOracle {
    pub fn new(weights: Vec<f64>, noise_std: f64) -> Result<Self> {
        check_finite("weights", &weights)?;
        check_noise(noise_std)?;
        if weights.is_empty() {
            return Err(AttackError::arg("weights must be nonempty"));
        }
        Ok(Self { weights, noise_std })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn value(&self, delta: &[f64]) -> f64 {
        self.weights.iter().zip(delta).map(|(w, d)| w * d).sum()
    }

    /// Analytic minimizer over the ε-ball (zero where `w_i = 0`).
    pub fn minimizer(&self, eps: f64) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| if *w == 0.0 { 0.0 } else { -eps * w.signum() })
            .collect()
    }

    /// Analytic minimum `-ε·Σ|w_i|`.
    pub fn minimum(&self, eps: f64) -> f64 {
        -eps * self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }
}

/// Convenience wrapper matching the operation name.
pub fn make_linear_oracle(w: Vec<f64>, noise_std: f64) -> Result<LinearOracle> {
    LinearOracle::new(w, noise_std)
}

impl RolloutOracle for LinearOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec {
            n_actuators: self.weights.len(),
            horizon: 1,
            deterministic: self.noise_std == 0.0,
            supports_concurrent_rollouts: false,
        }
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        check_len(self.weights.len(), pert)?;
        let base = self.value(pert.as_slice());
        run_episodes(episodes, seed, false, |rng| {
            Ok((base + gaussian(rng, self.noise_std), 1))
        })
    }
}

/// Single-step oracle with reward `scale·‖δ − center‖² + η`.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    center: Vec<f64>,
    scale: f64,
    noise_std: f64,
}

impl QuadraticOracle {
    pub fn new(center: Vec<f64>, scale: f64, noise_std: f64) -> Result<Self> {
        check_finite("center", &center)?;
        check_noise(noise_std)?;
        if center.is_empty() {
            return Err(AttackError::arg("center must be nonempty"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(AttackError::arg("scale must be positive"));
        }
        Ok(Self {
            center,
            scale,
            noise_std,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn value(&self, delta: &[f64]) -> f64 {
        self.scale
            * delta
                .iter()
                .zip(&self.center)
                .map(|(d, c)| (d - c) * (d - c))
                .sum::<f64>()
    }

    /// Closed-form gradient `2·scale·(δ − center)`.
    pub fn gradient(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .iter()
            .zip(&self.center)
            .map(|(d, c)| 2.0 * self.scale * (d - c))
            .collect()
    }
}

pub fn make_quadratic_oracle(center: Vec<f64>, scale: f64, noise_std: f64) -> Result<QuadraticOracle> {
    QuadraticOracle::new(center, scale, noise_std)
}

impl RolloutOracle for QuadraticOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec {
            n_actuators: self.center.len(),
            horizon: 1,
            deterministic: self.noise_std == 0.0,
            supports_concurrent_rollouts: false,
        }
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        check_len(self.center.len(), pert)?;
        let base = self.value(pert.as_slice());
        run_episodes(episodes, seed, false, |rng| {
            Ok((base + gaussian(rng, self.noise_std), 1))
        })
    }
}

/// Returns the same reward for every episode regardless of the perturbation.
#[derive(Debug, Clone)]
pub struct ConstantOracle {
    pub n_actuators: usize,
    pub reward: f64,
}

impl RolloutOracle for ConstantOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec {
            n_actuators: self.n_actuators,
            horizon: 1,
            deterministic: true,
            supports_concurrent_rollouts: false,
        }
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        check_len(self.n_actuators, pert)?;
        run_episodes(episodes, seed, false, |_| Ok((self.reward, 1)))
    }
}

/// Each episode yields `+1` or `-1` with equal probability.
#[derive(Debug, Clone)]
pub struct CoinFlipOracle {
    pub n_actuators: usize,
}

impl RolloutOracle for CoinFlipOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec {
            n_actuators: self.n_actuators,
            horizon: 1,
            deterministic: false,
            supports_concurrent_rollouts: false,
        }
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        use rand::Rng;
        check_len(self.n_actuators, pert)?;
        run_episodes(episodes, seed, false, |rng| {
            Ok((if rng.random::<bool>() { 1.0 } else { -1.0 }, 1))
        })
    }
}
