//! Agent hyperparameters.

use serde::{Deserialize, Serialize};

use super::mlp::Activation;
use crate::error::{Error, Result};
use crate::single_critic::SoftValueMode;

/// Function-approximator family and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ApproxSpec {
    /// Multilinear table over the state box with `nodes` points per axis.
    Tabular { nodes: usize },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
}

impl ApproxSpec {
    pub fn mlp_default() -> Self {
        ApproxSpec::Mlp { hidden: vec![64, 64], activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Flow step of the critic target.
    pub tau: f64,
    /// Entropy temperature; zero selects the hard maximum.
    pub alpha: f64,
    pub batch_size: usize,
    /// Adam rate for networks; per-sample SGD rate for tables.
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Environment steps between update events.
    pub train_freq: usize,
    /// Gradient steps per update event, all against one frozen target snapshot.
    pub gradient_steps: usize,
    /// Polyak rate of target networks.
    pub target_rate: f64,
    /// CT-SAC only: keep a polyak target critic instead of snapshotting the live one.
    pub target_network: bool,
    /// Steps of uniformly random actions before the policy takes over.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Per-sample cap on `tau / u`.
    pub max_tau_over_u: f64,
    pub s_mode: SoftValueMode,
    /// Use the midpoint-extrapolated critic target.
    pub richardson: bool,
    pub critic: ApproxSpec,
    /// Continuous-action actor network.
    pub actor: ApproxSpec,
    /// CT-TD3 behaviour noise, in units of the action half-width.
    pub expl_std: f64,
    /// CT-TD3 target smoothing noise, in units of the action half-width.
    pub target_noise_std: f64,
    /// CT-TD3 target noise clip, in units of the action half-width.
    pub noise_clip: f64,
    /// CT-TD3 critic updates per actor update.
    pub actor_delay: usize,
    /// Abort when a critic value exceeds this in magnitude.
    pub divergence_guard: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.05,
            batch_size: 64,
            lr_critic: 1e-3,
            lr_actor: 1e-3,
            train_freq: 1,
            gradient_steps: 1,
            target_rate: 0.005,
            target_network: false,
            warmup_steps: 1000,
            buffer_capacity: 100_000,
            eval_every: 2000,
            eval_episodes: 10,
            max_tau_over_u: 2.0,
            s_mode: SoftValueMode::CriticBoltzmann,
            richardson: false,
            critic: ApproxSpec::mlp_default(),
            actor: ApproxSpec::mlp_default(),
            expl_std: 0.1,
            target_noise_std: 0.2,
            noise_clip: 0.5,
            actor_delay: 2,
            divergence_guard: 1e6,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tau", self.tau),
            ("lr_critic", self.lr_critic),
            ("lr_actor", self.lr_actor),
            ("target_rate", self.target_rate),
            ("max_tau_over_u", self.max_tau_over_u),
            ("divergence_guard", self.divergence_guard),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let nonneg = [
            ("alpha", self.alpha),
            ("expl_std", self.expl_std),
            ("target_noise_std", self.target_noise_std),
            ("noise_clip", self.noise_clip),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0 and finite, got {v}")));
            }
        }
        if self.target_rate > 1.0 {
            return Err(Error::Config(format!("target_rate must be <= 1, got {}", self.target_rate)));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("train_freq", self.train_freq),
            ("gradient_steps", self.gradient_steps),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("actor_delay", self.actor_delay),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for spec in [&self.critic, &self.actor] {
            match spec {
                ApproxSpec::Tabular { nodes } if *nodes < 3 => {
                    return Err(Error::Config(format!("tabular approximator needs >= 3 nodes per axis, got {nodes}")))
                }
                ApproxSpec::Mlp { hidden, .. } if hidden.contains(&0) => {
                    return Err(Error::Config("MLP hidden sizes must be nonzero".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_fail() {
        AgentConfig::default().validate().unwrap();
        let bad = AgentConfig { actor_delay: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { lr_critic: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { critic: ApproxSpec::Tabular { nodes: 2 }, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
