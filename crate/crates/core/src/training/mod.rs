//! PPO with generalized advantage estimation on the energy-relaxation reward.

mod ppo;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, CheckpointError, DEFAULT_HIDDEN};
use crate::energetics::EnergeticsError;
use crate::lattice::LatticeError;
use crate::reweight::ReweightError;

pub use ppo::{ppo_loss_grad, ppo_update, Adam, LossParts, UpdateStats};
pub use trainer::{
    collect_rollout, latest_checkpoint, read_training_log, train, EpisodeLog, RolloutBuffer, TrainOutcome, Trainer,
    Transition, LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} rewards but {1} values")]
    LengthMismatch(usize, usize),
    #[error("rollout buffer is full ({0} rows)")]
    BufferFull(usize),
    #[error("non-finite loss at epoch {epoch}, minibatch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Energetics(#[from] EnergeticsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// PPO hyperparameters and the training environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub epochs_per_update: usize,
    pub clip: f64,
    /// Global gradient-norm clip over actor and critic.
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub episode_length: usize,
    pub train_lattice: [usize; 3],
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 5e-4,
            minibatch: 256,
            epochs_per_update: 10,
            clip: 0.2,
            max_grad_norm: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            episode_length: 2048,
            train_lattice: [10, 10, 10],
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_string());
            }
        };
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must be in (0, 1]");
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda must be in [0, 1]");
        check(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite(), "entropy_coef must be >= 0");
        check(self.value_coef > 0.0 && self.value_coef.is_finite(), "value_coef must be > 0");
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be > 0");
        check(self.minibatch >= 1, "minibatch must be >= 1");
        check(self.epochs_per_update >= 1, "epochs_per_update must be >= 1");
        check(self.clip > 0.0 && self.clip < 1.0, "clip must be in (0, 1)");
        check(self.max_grad_norm > 0.0 && self.max_grad_norm.is_finite(), "max_grad_norm must be > 0");
        check((0.0..1.0).contains(&self.adam_beta1), "adam_beta1 must be in [0, 1)");
        check((0.0..1.0).contains(&self.adam_beta2), "adam_beta2 must be in [0, 1)");
        check(self.adam_eps > 0.0, "adam_eps must be > 0");
        check(self.episode_length >= 1, "episode_length must be >= 1");
        check(self.train_lattice.iter().all(|&n| n >= 2), "train_lattice extents must be >= 2");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(bad.join("; ")))
        }
    }
}

/// Full training run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub episodes: u64,
    pub cu_fraction: f64,
    /// Exact Cu count; overrides `cu_fraction` when set.
    pub cu_atoms: Option<usize>,
    pub vacancies: usize,
    /// Overrides the potential file's temperature, K.
    pub temperature: Option<f64>,
    pub potential: Option<std::path::PathBuf>,
    pub hidden: Vec<usize>,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoConfig::default(),
            episodes: 5000,
            cu_fraction: 0.0134,
            cu_atoms: None,
            vacancies: 10,
            temperature: None,
            potential: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.ppo.validate()?;
        let mut bad = Vec::new();
        if self.episodes == 0 {
            bad.push("episodes must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.cu_fraction) {
            bad.push("cu_fraction must be in [0, 1)".to_string());
        }
        if self.vacancies == 0 {
            bad.push("vacancies must be >= 1".to_string());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            bad.push("hidden must list at least one non-zero width".to_string());
        }
        if self.checkpoint_every == 0 {
            bad.push("checkpoint_every must be >= 1".to_string());
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                bad.push("temperature must be positive".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(bad.join("; ")))
        }
    }
}

/// `r_t = -(E_{t+1} - E_t)`.
#[inline]
pub fn reward(prev_energy: f64, new_energy: f64) -> f64 {
    -(new_energy - prev_energy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    config: &PpoConfig,
) -> Result<AdvantageEstimate, TrainError> {
    compute_gae_with(rewards, values, bootstrap_value, config.gamma, config.gae_lambda)
}

/// Backward recursion `A_t = delta_t + gamma lambda A_{t+1}`.
pub fn compute_gae_with(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate, TrainError> {
    if rewards.len() != values.len() {
        return Err(TrainError::LengthMismatch(rewards.len(), values.len()));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate { advantages, returns })
}

/// Zero mean, unit variance (population); constant input maps to zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for a in adv.iter_mut() {
        *a = if sd > 1e-12 { (*a - mean) / sd } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_sign() {
        assert_eq!(reward(1.0, 0.7), 1.0 - 0.7);
        assert_eq!(reward(2.0, 2.0), 0.0);
        assert_eq!(reward(0.0, 0.5) + reward(0.5, 0.0), 0.0);
    }

    #[test]
    fn gae_small_cases() {
        let e = compute_gae_with(&[1.0], &[0.0], 0.0, 0.99, 0.95).unwrap();
        assert_eq!(e.advantages, vec![1.0]);
        let r = [0.3, -0.1, 0.2];
        let v = [0.5, 0.1, -0.4];
        let e = compute_gae_with(&r, &v, 0.7, 0.9, 0.0).unwrap();
        let deltas = [0.3 + 0.9 * 0.1 - 0.5, -0.1 + 0.9 * -0.4 - 0.1, 0.2 + 0.9 * 0.7 + 0.4];
        for t in 0..3 {
            assert!((e.advantages[t] - deltas[t]).abs() < 1e-15);
            assert!((e.returns[t] - (deltas[t] + v[t])).abs() < 1e-15);
        }
        assert!(compute_gae_with(&r, &v[..2], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = PpoConfig::default();
        c.clip = 0.0;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let json = r#"{"ppo": {"clip": 0.3}, "episodes": 10}"#;
        let t: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(t.ppo.clip, 0.3);
        assert_eq!(t.ppo.gamma, 0.99);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3}"#).is_err());
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0];
        normalize_advantages(&mut a);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        assert!((a.iter().map(|x| x * x).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        let mut c = vec![5.0; 4];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 4]);
    }
}
