//! Surrogate legged walker.
//!
//! An open-loop oscillator gait with `n_legs` legs of `joints_per_leg`
//! joints each. Reward per step is forward velocity minus a torque cost plus
//! an alive bonus. The walker falls once per-leg effort stays unbalanced for
//! `fall_patience` consecutive steps, which ends the episode early.
//!
//! Per-leg effort `I_l` is the mean of `|d_l|` over the last gait cycle
//! (`period` steps), where `d_l` is the weighted sum of the leg's joint
//! torques. A full-cycle mean is the same for every leg under a uniform
//! perturbation whatever its phase, so only genuinely asymmetric scaling
//! registers as imbalance. Imbalance is not assessed until the first cycle
//! has been observed.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};
use crate::oracle::{run_episodes, OracleSpec, RolloutOracle, RolloutResult};
use crate::perturbation::{apply_perturbation, ActionVector, TorquePerturbation};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkerConfig {
    pub n_legs: usize,
    pub joints_per_leg: usize,
    pub horizon: usize,
    pub amplitude: f64,
    /// Gait period in steps.
    pub period: usize,
    /// Weight of each joint within a leg (hip first).
    pub joint_weights: Vec<f64>,
    pub v_gain: f64,
    /// `λ` in `balance = exp(-λ · var_l(I_l))`.
    pub imbalance_sensitivity: f64,
    pub ctrl_cost: f64,
    pub alive_bonus: f64,
    /// Effort variance above which a step counts as imbalanced.
    pub fall_threshold: f64,
    pub fall_patience: usize,
    pub torque_noise_std: f64,
    /// Phase slot of each leg; leg `l` defaults to slot `l`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leg_phase_slots: Option<Vec<usize>>,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            n_legs: 4,
            joints_per_leg: 2,
            horizon: 1000,
            amplitude: 1.0,
            period: 50,
            joint_weights: vec![1.0, 0.5],
            v_gain: 1.0,
            imbalance_sensitivity: 4.0,
            ctrl_cost: 0.005,
            alive_bonus: 0.05,
            fall_threshold: 0.04,
            fall_patience: 25,
            torque_noise_std: 0.0,
            leg_phase_slots: None,
        }
    }
}

impl WalkerConfig {
    pub fn n_actuators(&self) -> usize {
        self.n_legs * self.joints_per_leg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AttackError::Config(format!("walker: {m}")));
        if self.n_legs == 0 || self.joints_per_leg == 0 || self.horizon == 0 || self.period == 0 {
            return bad("n_legs, joints_per_leg, horizon and period must be >= 1");
        }
        if self.fall_patience == 0 {
            return bad("fall_patience must be >= 1");
        }
        if self.joint_weights.len() != self.joints_per_leg {
            return bad("joint_weights needs one entry per joint of a leg");
        }
        let reals = [
            self.amplitude,
            self.v_gain,
            self.imbalance_sensitivity,
            self.ctrl_cost,
            self.alive_bonus,
            self.fall_threshold,
            self.torque_noise_std,
        ];
        if reals.iter().chain(&self.joint_weights).any(|x| !x.is_finite()) {
            return bad("all real parameters must be finite");
        }
        if self.imbalance_sensitivity < 0.0 || self.v_gain < 0.0 || self.fall_threshold < 0.0 {
            return bad("imbalance_sensitivity, v_gain and fall_threshold must be >= 0");
        }
        if self.torque_noise_std < 0.0 {
            return bad("torque_noise_std must be >= 0");
        }
        if let Some(slots) = &self.leg_phase_slots {
            let mut seen = vec![false; self.n_legs];
            if slots.len() != self.n_legs {
                return bad("leg_phase_slots must list one slot per leg");
            }
            for &s in slots {
                if s >= self.n_legs || seen[s] {
                    return bad("leg_phase_slots must be a permutation of 0..n_legs");
                }
                seen[s] = true;
            }
        }
        Ok(())
    }

    fn phase_slot(&self, leg: usize) -> usize {
        self.leg_phase_slots.as_ref().map_or(leg, |s| s[leg])
    }

    /// Labels in the `hipK`/`ankleK` convention for two-joint legs,
    /// `legK_jJ` otherwise.
    pub fn actuator_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_actuators());
        for leg in 1..=self.n_legs {
            for j in 0..self.joints_per_leg {
                labels.push(match (self.joints_per_leg, j) {
                    (2, 0) => format!("hip{leg}"),
                    (2, _) => format!("ankle{leg}"),
                    _ => format!("leg{leg}_j{}", j + 1),
                });
            }
        }
        labels
    }
}

/// Open-loop controller output at step `t`.
///
/// Leg `l` in phase slot `s` outputs `amplitude · sin(2π t/period − 2π s/n_legs)`
/// on every one of its joints, so leg `l` at `t` repeats leg `l+1` at
/// `t + period/n_legs`. The phase is reduced with integer arithmetic first,
/// which makes that shift exact whenever `period` is divisible by `n_legs`.
pub fn nominal_action(config: &WalkerConfig, t: usize) -> ActionVector {
    let n = config.n_legs as u128;
    let p = config.period as u128;
    let cycle = n * p;
    let mut out = Vec::with_capacity(config.n_actuators());
    for leg in 0..config.n_legs {
        let slot = config.phase_slot(leg) as u128;
        let num = (t as u128 * n + (n - slot) * p) % cycle;
        let value = config.amplitude * (TAU * (num as f64 / cycle as f64)).sin();
        out.extend(std::iter::repeat_n(value, config.joints_per_leg));
    }
    ActionVector::from_raw(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerState {
    t: usize,
    /// Ring buffer of `|d_l|`, `period` entries per leg.
    windows: Vec<Vec<f64>>,
    effort: Vec<f64>,
    imbalance: f64,
    consecutive_imbalanced: usize,
    fallen: bool,
    terminated: bool,
}

/// What one step produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub fallen: bool,
}

impl WalkerState {
    pub fn reset(config: &WalkerConfig) -> Self {
        Self {
            t: 0,
            windows: vec![Vec::with_capacity(config.period); config.n_legs],
            effort: vec![0.0; config.n_legs],
            imbalance: 0.0,
            consecutive_imbalanced: 0,
            fallen: false,
            terminated: false,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Per-leg effort `I_l`.
    pub fn effort(&self) -> &[f64] {
        &self.effort
    }

    /// Population variance of the per-leg efforts at the last step (zero
    /// during the first gait cycle).
    pub fn imbalance(&self) -> f64 {
        self.imbalance
    }

    pub fn consecutive_imbalanced(&self) -> usize {
        self.consecutive_imbalanced
    }

    pub fn fallen(&self) -> bool {
        self.fallen
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Advances one step under the (already perturbed) action.
    pub fn step(&mut self, config: &WalkerConfig, action: &ActionVector, rng: &mut SeededRng) -> Result<StepOutcome> {
        if self.terminated {
            return Err(AttackError::State(format!(
                "walker episode already ended at step {}",
                self.t
            )));
        }
        if action.len() != config.n_actuators() {
            return Err(AttackError::Dimension {
                expected: config.n_actuators(),
                got: action.len(),
            });
        }

        let torques: Vec<f64> = if config.torque_noise_std > 0.0 {
            use rand_distr::{Distribution, Normal};
            let noise = Normal::new(0.0, config.torque_noise_std).map_err(|e| AttackError::Config(e.to_string()))?;
            action.as_slice().iter().map(|a| a + noise.sample(rng)).collect()
        } else {
            action.as_slice().to_vec()
        };

        let jpl = config.joints_per_leg;
        let drives: Vec<f64> = torques
            .chunks(jpl)
            .map(|leg| leg.iter().zip(&config.joint_weights).map(|(a, w)| w * a).sum())
            .collect();

        let slot = self.t % config.period;
        for (window, d) in self.windows.iter_mut().zip(&drives) {
            if window.len() < config.period {
                window.push(d.abs());
            } else {
                window[slot] = d.abs();
            }
        }
        for (e, window) in self.effort.iter_mut().zip(&self.windows) {
            *e = window.iter().sum::<f64>() / window.len() as f64;
        }
        let cycle_seen = self.t + 1 >= config.period;
        self.imbalance = if cycle_seen { variance(&self.effort) } else { 0.0 };

        let balance = (-config.imbalance_sensitivity * self.imbalance).exp();
        let push = drives.iter().map(|d| d.max(0.0)).sum::<f64>() / drives.len() as f64;
        let v_fwd = config.v_gain * push * balance;
        let ctrl: f64 = torques.iter().map(|a| a * a).sum();
        let reward = v_fwd - config.ctrl_cost * ctrl + config.alive_bonus;

        if self.imbalance > config.fall_threshold {
            self.consecutive_imbalanced += 1;
        } else {
            self.consecutive_imbalanced = 0;
        }
        self.fallen = self.consecutive_imbalanced >= config.fall_patience;
        self.t += 1;
        self.terminated = self.fallen || self.t >= config.horizon;

        Ok(StepOutcome {
            reward,
            done: self.terminated,
            fallen: self.fallen,
        })
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Functional form of [`WalkerState::step`].
pub fn walker_step(
    state: &WalkerState,
    config: &WalkerConfig,
    perturbed_action: &ActionVector,
    rng: &mut SeededRng,
) -> Result<(WalkerState, f64, bool)> {
    let mut next = state.clone();
    let out = next.step(config, perturbed_action, rng)?;
    Ok((next, out.reward, out.done))
}

/// One episode from a reset state: returns `(cumulative_reward, steps)`.
pub fn walker_rollout(config: &WalkerConfig, pert: &TorquePerturbation, rng: &mut SeededRng) -> Result<(f64, usize)> {
    if pert.len() != config.n_actuators() {
        return Err(AttackError::Dimension {
            expected: config.n_actuators(),
            got: pert.len(),
        });
    }
    let mut state = WalkerState::reset(config);
    let mut total = 0.0;
    loop {
        let action = apply_perturbation(&nominal_action(config, state.t), pert)?;
        let out = state.step(config, &action, rng)?;
        total += out.reward;
        if out.done {
            return Ok((total, state.t));
        }
    }
}

/// The surrogate walker as a [`RolloutOracle`].
#[derive(Debug, Clone)]
pub struct SurrogateWalker {
    config: WalkerConfig,
    concurrent: bool,
}

impl SurrogateWalker {
    pub fn new(config: WalkerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            concurrent: true,
        })
    }

    /// Enables or disables fanning episodes out to worker threads.
    pub fn with_concurrency(mut self, concurrent: bool) -> Self {
        self.concurrent = concurrent;
        self
    }

    pub fn config(&self) -> &WalkerConfig {
        &self.config
    }
}

impl RolloutOracle for SurrogateWalker {
    fn spec(&self) -> OracleSpec {
        OracleSpec {
            n_actuators: self.config.n_actuators(),
            horizon: self.config.horizon,
            deterministic: self.config.torque_noise_std == 0.0,
            supports_concurrent_rollouts: true,
        }
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        if self.config.torque_noise_std == 0.0 {
            // Noise-free episodes never touch their stream: simulate once.
            let (r, len) = walker_rollout(&self.config, pert, &mut SeededRng::for_episode(seed, 0))?;
            return Ok(RolloutResult {
                cumulative_rewards: vec![r; episodes],
                episode_lengths: vec![len; episodes],
            });
        }
        run_episodes(episodes, seed, self.concurrent, |rng| {
            walker_rollout(&self.config, pert, rng)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pert(v: Vec<f64>, eps: f64) -> TorquePerturbation {
        TorquePerturbation::new(v, eps).unwrap()
    }

    fn three_leg_boost() -> TorquePerturbation {
        pert(vec![0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.5)
    }

    #[test]
    fn nominal_action_examples() {
        let cfg = WalkerConfig::default();
        let a = nominal_action(&cfg, 0);
        assert_eq!(&a.as_slice()[..2], &[0.0, 0.0]);
        let peak = (0..cfg.period)
            .flat_map(|t| nominal_action(&cfg, t).into_inner())
            .fold(f64::MIN, f64::max);
        assert!((peak - cfg.amplitude).abs() < 1e-12);
    }

    #[test]
    fn nominal_phase_shift_is_exact() {
        let cfg = WalkerConfig {
            period: 48,
            ..Default::default()
        };
        let shift = cfg.period / cfg.n_legs;
        let jpl = cfg.joints_per_leg;
        for t in 0..200 {
            let now = nominal_action(&cfg, t);
            let later = nominal_action(&cfg, t + shift);
            for leg in 0..cfg.n_legs {
                let next = (leg + 1) % cfg.n_legs;
                assert_eq!(
                    now.as_slice()[leg * jpl..(leg + 1) * jpl],
                    later.as_slice()[next * jpl..(next + 1) * jpl]
                );
            }
        }
    }

    #[test]
    fn zero_action_earns_alive_bonus() {
        let cfg = WalkerConfig::default();
        let mut s = WalkerState::reset(&cfg);
        let zero = ActionVector::new(vec![0.0; 8]).unwrap();
        let out = s.step(&cfg, &zero, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(out.reward, cfg.alive_bonus);
    }

    #[test]
    fn unperturbed_gait_stays_balanced() {
        let cfg = WalkerConfig::default();
        let zero = TorquePerturbation::zeros(8, 0.0).unwrap();
        let mut s = WalkerState::reset(&cfg);
        let mut rng = SeededRng::new(0, 0);
        for t in 0..cfg.horizon {
            let a = apply_perturbation(&nominal_action(&cfg, t), &zero).unwrap();
            let out = s.step(&cfg, &a, &mut rng).unwrap();
            assert!(s.imbalance() < 1e-6, "t={t} imbalance={}", s.imbalance());
            assert!(!out.fallen);
        }
        assert!(s.terminated());
        assert_eq!(s.t(), cfg.horizon);
    }

    #[test]
    fn stepping_after_termination_is_state_error() {
        let cfg = WalkerConfig {
            horizon: 1,
            ..Default::default()
        };
        let mut s = WalkerState::reset(&cfg);
        let a = nominal_action(&cfg, 0);
        let mut rng = SeededRng::new(0, 0);
        assert!(s.step(&cfg, &a, &mut rng).unwrap().done);
        assert!(matches!(s.step(&cfg, &a, &mut rng), Err(AttackError::State(_))));
        let (_, _, done) = walker_step(&WalkerState::reset(&cfg), &cfg, &a, &mut rng).unwrap();
        assert!(done);
    }

    #[test]
    fn three_leg_boost_falls_early() {
        let cfg = WalkerConfig::default();
        let (base, base_len) = walker_rollout(
            &cfg,
            &TorquePerturbation::zeros(8, 0.5).unwrap(),
            &mut SeededRng::new(1, 0),
        )
        .unwrap();
        let (hit, hit_len) = walker_rollout(&cfg, &three_leg_boost(), &mut SeededRng::new(1, 0)).unwrap();
        assert_eq!(base_len, cfg.horizon);
        assert!(hit_len < cfg.horizon);
        assert!(hit < base);
    }

    #[test]
    fn uniform_scaling_runs_full_horizon() {
        let cfg = WalkerConfig::default();
        for c in [-0.5, -0.2, 0.3, 0.5] {
            let (_, len) = walker_rollout(&cfg, &pert(vec![c; 8], 0.5), &mut SeededRng::new(3, 0)).unwrap();
            assert_eq!(len, cfg.horizon, "c={c}");
        }
    }

    #[test]
    fn noise_free_rollout_ignores_seed() {
        let w = SurrogateWalker::new(WalkerConfig::default()).unwrap();
        let p = TorquePerturbation::zeros(8, 0.5).unwrap();
        let a = w.rollout(&p, 3, 1).unwrap();
        let b = w.rollout(&p, 3, 999).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_rollout_is_schedule_independent() {
        let cfg = WalkerConfig {
            torque_noise_std: 0.05,
            horizon: 200,
            ..Default::default()
        };
        let p = three_leg_boost();
        let par = SurrogateWalker::new(cfg.clone()).unwrap().rollout(&p, 8, 42).unwrap();
        let ser = SurrogateWalker::new(cfg)
            .unwrap()
            .with_concurrency(false)
            .rollout(&p, 8, 42)
            .unwrap();
        assert_eq!(par, ser);
        assert!(par.cumulative_rewards.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(WalkerConfig::default().validate().is_ok());
        let bad = WalkerConfig {
            joint_weights: vec![1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WalkerConfig {
            leg_phase_slots: Some(vec![0, 0, 1, 2]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WalkerConfig {
            fall_threshold: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn labels_follow_hip_ankle_convention() {
        let labels = WalkerConfig::default().actuator_labels();
        assert_eq!(labels[0], "hip1");
        assert_eq!(labels[7], "ankle4");
    }
}
