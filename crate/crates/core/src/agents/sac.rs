//! Continuous-time soft actor-critic on the single critic `Q = V + q`.
//!
//! Finite action sets read the actor off the critic as its Boltzmann policy.
//! Box action sets fit a squashed Gaussian actor to that Boltzmann policy by
//! minimising the KL divergence over the box quadrature grid.

use rand::{Rng, RngCore};

use super::approx::{CriticModel, GaussianActor};
use super::buffer::ReplayBuffer;
use super::checkpoint::{Approximator, Checkpoint};
use super::config::{AgentConfig, ApproxSpec};
use super::env::Env;
use super::eval::evaluate_policy_seeded;
use super::metrics::{MetricsLog, MetricsRow};
use super::mlp::Adam;
use crate::dynamics::{Action, ActionSet, ActionSetKind, Policy, Transition};
use crate::error::{Error, Result};
use crate::hamiltonian::{argmax, boltzmann_policy, sample_index, soft_aggregate, soft_value_of_policy};
use crate::single_critic::{richardson_from_parts, target_from_parts, Critic, SoftValueMode};

/// Policy read from a trained agent.
#[derive(Debug, Clone)]
pub struct SacPolicy {
    critic: CriticModel,
    actor: Option<GaussianActor>,
    actions: ActionSet,
    alpha: f64,
    greedy: bool,
}

impl SacPolicy {
    pub fn critic(&self) -> &CriticModel {
        &self.critic
    }

    /// Action distribution over the action set at `x`.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        match &self.actor {
            Some(a) => a.probs(x),
            None => {
                let mut row = vec![0.0; self.actions.len()];
                self.critic.row(x, &mut row);
                boltzmann_policy(&row, self.actions.weights(), self.alpha)
            }
        }
    }
}

impl Policy for SacPolicy {
    fn act(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        match (&self.actor, self.greedy) {
            (Some(a), true) => Ok(a.mean_action(x)),
            (Some(a), false) => Ok(a.sample(x, rng)),
            (None, true) => {
                let mut row = vec![0.0; self.actions.len()];
                self.critic.row(x, &mut row);
                Ok(self.actions.indexed(argmax(&row)))
            }
            (None, false) => Ok(self.actions.indexed(sample_index(&self.probs(x), rng))),
        }
    }
}

pub struct SacAgent {
    cfg: AgentConfig,
    actions: ActionSet,
    beta: f64,
    critic: CriticModel,
    target: Option<CriticModel>,
    actor: Option<GaussianActor>,
    critic_opt: Option<Adam>,
    actor_opt: Option<Adam>,
    clamp_warned: bool,
    updates: u64,
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct SacOutcome {
    pub critic: CriticModel,
    pub policy: SacPolicy,
    pub log: MetricsLog,
}

impl SacAgent {
    pub fn new(env: &Env, cfg: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        if cfg.richardson && !env.record_midpoint {
            return Err(Error::Config("Richardson critic targets need transitions with midpoints".into()));
        }
        let model = &env.model;
        let critic = CriticModel::build(&cfg.critic, model, rng)?;
        let actor = match (model.actions().kind(), &cfg.actor) {
            (ActionSetKind::Box { .. }, ApproxSpec::Mlp { hidden, activation }) => {
                Some(GaussianActor::new(hidden, *activation, model.state_dim(), model.actions(), rng)?)
            }
            (ActionSetKind::Box { .. }, ApproxSpec::Tabular { .. }) => {
                return Err(Error::Config("the continuous-action actor must be an MLP".into()))
            }
            (ActionSetKind::Finite, _) => None,
        };
        let critic_opt = matches!(critic, CriticModel::Mlp(_)).then(|| Adam::new(critic.n_params(), cfg.lr_critic));
        let actor_opt = actor.as_ref().map(|a| Adam::new(a.net().n_params(), cfg.lr_actor));
        let target = cfg.target_network.then(|| critic.clone());
        Ok(Self {
            actions: model.actions().clone(),
            beta: model.beta(),
            critic,
            target,
            actor,
            critic_opt,
            actor_opt,
            clamp_warned: false,
            updates: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn critic(&self) -> &CriticModel {
        &self.critic
    }

    pub fn actor(&self) -> Option<&GaussianActor> {
        self.actor.as_ref()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn policy(&self, greedy: bool) -> SacPolicy {
        SacPolicy {
            critic: self.critic.clone(),
            actor: self.actor.clone(),
            actions: self.actions.clone(),
            alpha: self.cfg.alpha,
            greedy,
        }
    }

    /// Deterministic evaluation policy: greedy row maximiser, or the
    /// squashed Gaussian mean.
    pub fn greedy_policy(&self) -> SacPolicy {
        self.policy(true)
    }

    pub fn behaviour_policy(&self) -> SacPolicy {
        self.policy(false)
    }

    fn behaviour_action(&self, x: &[f64], step: usize, rng: &mut dyn RngCore) -> Result<Action> {
        if step <= self.cfg.warmup_steps {
            return Ok(match self.actions.kind() {
                ActionSetKind::Finite => self.actions.indexed(rng.random_range(0..self.actions.len())),
                ActionSetKind::Box { lo, hi, .. } => {
                    Action::continuous(lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..*h)).collect())
                }
            });
        }
        match &self.actor {
            Some(a) => Ok(a.sample(x, rng)),
            None => {
                let mut row = vec![0.0; self.actions.len()];
                self.critic.row(x, &mut row);
                let p = boltzmann_policy(&row, self.actions.weights(), self.cfg.alpha);
                Ok(self.actions.indexed(sample_index(&p, rng)))
            }
        }
    }

    /// `S(x)` from the frozen critic `q` under the configured mode.
    fn soft_value(&self, q: &CriticModel, x: &[f64], row: &mut [f64]) -> f64 {
        q.row(x, row);
        match (self.cfg.s_mode, &self.actor) {
            (SoftValueMode::ActorPolicy, Some(actor)) => {
                soft_value_of_policy(row, self.actions.weights(), &actor.probs(x), self.cfg.alpha)
            }
            _ => soft_aggregate(row, self.actions.weights(), self.cfg.alpha),
        }
    }

    fn effective_tau(&mut self, u: f64) -> f64 {
        let cap = self.cfg.max_tau_over_u * u;
        if self.cfg.tau > cap {
            if !self.clamp_warned {
                log::warn!("tau/u = {:.3} exceeds {}; clamping per sample", self.cfg.tau / u, self.cfg.max_tau_over_u);
                self.clamp_warned = true;
            }
            cap
        } else {
            self.cfg.tau
        }
    }

    /// Critic target of one transition against the frozen critic `q`.
    pub fn target(&mut self, q: &CriticModel, t: &Transition) -> Result<f64> {
        if !(t.u > 0.0) {
            return Err(Error::Input(format!("transition holding time must be > 0, got {}", t.u)));
        }
        let tau = self.effective_tau(t.u);
        let mut row = vec![0.0; self.actions.len()];
        let s_x = self.soft_value(q, &t.x, &mut row);
        let s_next = self.soft_value(q, &t.x_next, &mut row);
        let q_xa = q.value(&t.x, &t.a);
        Ok(if self.cfg.richardson {
            let mid = t.x_mid.as_ref().ok_or_else(|| Error::Input("transition lacks its midpoint".into()))?;
            let s_mid = self.soft_value(q, mid, &mut row);
            richardson_from_parts(q_xa, t.r, s_x, s_mid, s_next, t.u, tau, self.beta)
        } else {
            target_from_parts(q_xa, t.r, s_x, s_next, t.u, tau, self.beta)
        })
    }

    /// One update event: snapshot targets, `gradient_steps` critic steps,
    /// then the actor step. Returns the mean critic loss.
    pub fn update(&mut self, buffer: &ReplayBuffer, step: usize, rng: &mut dyn RngCore) -> Result<f64> {
        let frozen = self.target.clone().unwrap_or_else(|| self.critic.clone());
        let mut loss_sum = 0.0;
        let mut grad = vec![0.0; self.critic.n_params()];
        for _ in 0..self.cfg.gradient_steps {
            let batch = buffer.sample(self.cfg.batch_size, rng);
            let mut pairs = Vec::with_capacity(batch.len());
            for t in batch {
                let y = self.target(&frozen, t)?;
                if !y.is_finite() || y.abs() > self.cfg.divergence_guard {
                    return Err(Error::TrainingAbort { step, cause: format!("critic target {y:e} out of range") });
                }
                pairs.push((t, y));
            }
            let loss = match &mut self.critic {
                CriticModel::Tabular(c) => CriticModel::tabular_sgd(c, &pairs, self.cfg.lr_critic),
                critic @ CriticModel::Mlp(_) => {
                    let loss = critic.loss_gradient(&pairs, &mut grad);
                    if let (CriticModel::Mlp(c), Some(opt)) = (critic, self.critic_opt.as_mut()) {
                        opt.step(c.net_mut().params_mut(), &grad);
                    }
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::TrainingAbort { step, cause: "critic loss is NaN".into() });
            }
            loss_sum += loss;
        }
        if self.critic.max_abs_param() > self.cfg.divergence_guard {
            return Err(Error::TrainingAbort { step, cause: "critic parameters exceed the divergence guard".into() });
        }
        self.actor_step(buffer, step, rng)?;
        if let Some(t) = self.target.as_mut() {
            t.polyak_from(&self.critic, self.cfg.target_rate);
        }
        self.updates += 1;
        Ok(loss_sum / self.cfg.gradient_steps as f64)
    }

    fn actor_step(&mut self, buffer: &ReplayBuffer, step: usize, rng: &mut dyn RngCore) -> Result<()> {
        let (Some(actor), Some(opt)) = (self.actor.as_mut(), self.actor_opt.as_mut()) else {
            return Ok(());
        };
        let batch = buffer.sample(self.cfg.batch_size, rng);
        let mut grad = vec![0.0; actor.net().n_params()];
        let mut row = vec![0.0; self.actions.len()];
        let w = self.actions.weights();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut kl = 0.0;
        for t in &batch {
            self.critic.row(&t.x, &mut row);
            let log_b = log_boltzmann(&row, w, self.cfg.alpha);
            kl += actor.kl_gradient(&t.x, &log_b, scale, &mut grad) * scale;
        }
        if !kl.is_finite() {
            return Err(Error::TrainingAbort { step, cause: "actor KL is NaN".into() });
        }
        opt.step(actor.net_mut().params_mut(), &grad);
        Ok(())
    }

    /// Alternate environment steps and update events for `steps` steps,
    /// evaluating the greedy policy every `eval_every` steps.
    pub fn train(
        &mut self,
        env: &Env,
        buffer: &mut ReplayBuffer,
        steps: usize,
        rng: &mut dyn RngCore,
        log: &mut MetricsLog,
    ) -> Result<()> {
        let eval_seed = rng.next_u64();
        let mut x = env.reset(rng);
        let mut t_ep = 0.0;
        let mut last_loss = None;
        for step in 1..=steps {
            let a = self.behaviour_action(&x, step, rng)?;
            let tr = env.step(&x, &a, rng)?;
            t_ep += tr.u;
            x.clone_from(&tr.x_next);
            buffer.push(tr);
            if t_ep >= env.horizon * (1.0 - 1e-12) {
                x = env.reset(rng);
                t_ep = 0.0;
            }
            if step % self.cfg.train_freq == 0 && buffer.len() >= self.cfg.batch_size {
                last_loss = Some(self.update(buffer, step, rng)?);
            }
            if step % self.cfg.eval_every == 0 || step == steps {
                let stats =
                    evaluate_policy_seeded(env, &self.greedy_policy(), self.cfg.eval_episodes, &env.holding, eval_seed)?;
                log.push(MetricsRow {
                    eval_return_mean: Some(stats.mean),
                    eval_return_std: Some(stats.std),
                    loss: last_loss,
                    ..MetricsRow::at(step as u64)
                })?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self, config_hash: &str, step: u64) -> Checkpoint {
        let critic = match &self.critic {
            CriticModel::Tabular(c) => Approximator::Tabular(c.clone()),
            CriticModel::Mlp(c) => Approximator::Mlp(c.net().clone()),
        };
        let mut ck = Checkpoint::new("ct-sac", config_hash, step).with("critic", critic);
        if let Some(a) = &self.actor {
            ck = ck.with("actor", Approximator::Mlp(a.net().clone()));
        }
        ck
    }

    /// Restore parameters saved by [`SacAgent::checkpoint`].
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        match (&mut self.critic, ck.part("critic")?) {
            (CriticModel::Tabular(c), Approximator::Tabular(s)) => *c = s.clone(),
            (CriticModel::Mlp(c), Approximator::Mlp(s)) => *c.net_mut() = s.clone(),
            _ => return Err(Error::Input("checkpoint critic kind does not match the config".into())),
        }
        if let Some(actor) = self.actor.as_mut() {
            match ck.part("actor")? {
                Approximator::Mlp(s) => *actor.net_mut() = s.clone(),
                _ => return Err(Error::Input("checkpoint actor must be an MLP".into())),
            }
        }
        Ok(())
    }
}

/// `log` of the Boltzmann weights `w exp(q / alpha)`, normalised; at
/// `alpha = 0` the maximiser gets probability one.
pub fn log_boltzmann(q: &[f64], w: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        let i = argmax(q);
        return (0..q.len()).map(|j| if j == i { 0.0 } else { f64::NEG_INFINITY }).collect();
    }
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = q.iter().zip(w).map(|(v, wi)| (v - m) / alpha + wi.ln()).collect();
    let zm = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = zm + z.iter().map(|v| (v - zm).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Train CT-SAC from scratch with an in-memory log.
pub fn ct_sac_train(
    env: &Env,
    cfg: &AgentConfig,
    buffer: &mut ReplayBuffer,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<SacOutcome> {
    let mut agent = SacAgent::new(env, cfg.clone(), rng)?;
    let mut log = MetricsLog::in_memory();
    agent.train(env, buffer, steps, rng, &mut log)?;
    Ok(SacOutcome { critic: agent.critic.clone(), policy: agent.greedy_policy(), log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{drift_chain, ChainParams, HoldingTimeSpec, StartState};

    #[test]
    fn log_boltzmann_normalises() {
        let lb = log_boltzmann(&[1.0, 2.0, 0.5], &[0.2, 0.3, 0.5], 0.7);
        assert!((lb.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-14);
        let p = boltzmann_policy(&[1.0, 2.0, 0.5], &[0.2, 0.3, 0.5], 0.7);
        for (a, b) in lb.iter().zip(&p) {
            assert!((a.exp() - b).abs() < 1e-14);
        }
    }

    #[test]
    fn richardson_requires_midpoints() {
        let m = drift_chain(&ChainParams::default()).unwrap();
        let env = Env::new(m, HoldingTimeSpec::fixed(0.1).unwrap(), StartState::Fixed(vec![0.0]), 1.0).unwrap();
        let cfg = AgentConfig { richardson: true, critic: ApproxSpec::Tabular { nodes: 9 }, ..Default::default() };
        assert!(SacAgent::new(&env, cfg, &mut crate::rng::stream(0, 0)).is_err());
    }
}
