//! Continuous-time TD3: twin critics, clipped target smoothing, delayed
//! deterministic actor and polyak target networks.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::approx::MlpCritic;
use super::buffer::ReplayBuffer;
use super::checkpoint::{Approximator, Checkpoint};
use super::config::{AgentConfig, ApproxSpec};
use super::env::Env;
use super::eval::evaluate_policy_seeded;
use super::metrics::{MetricsLog, MetricsRow};
use super::mlp::{Adam, Mlp};
use crate::dynamics::{Action, ActionSetKind, Policy, Transition};
use crate::error::{Error, Result};

/// Deterministic actor `mu(x) = c + h tanh(net(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicActor {
    net: Mlp,
    center: Vec<f64>,
    half: Vec<f64>,
}

impl DeterministicActor {
    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn act_values(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x).iter().enumerate().map(|(k, z)| self.center[k] + self.half[k] * z.tanh()).collect()
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.center.iter().zip(&self.half).map(|(c, h)| c - h).collect();
        let hi = self.center.iter().zip(&self.half).map(|(c, h)| c + h).collect();
        (lo, hi)
    }
}

impl Policy for DeterministicActor {
    fn act(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::continuous(self.act_values(x)))
    }
}

/// Critic target of CT-TD3 from its ingredients:
/// `(1 - tau) q_i + tau s + tau r + tau (gamma s_next - s) / u`, where
/// `s = min_j Qbar_j(x, mubar(x))` and `s_next = min_j Qbar_j(x', a~')`.
pub fn td3_target_from_parts(q_i: f64, r: f64, s: f64, s_next: f64, u: f64, tau: f64, beta: f64) -> f64 {
    let gamma = (-beta * u).exp();
    (1.0 - tau) * q_i + tau * s + tau * r + tau * (gamma * s_next - s) / u
}

pub struct Td3Agent {
    cfg: AgentConfig,
    beta: f64,
    actor: DeterministicActor,
    actor_target: DeterministicActor,
    critics: [MlpCritic; 2],
    targets: [MlpCritic; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    clamp_warned: bool,
    updates: u64,
}

#[derive(Debug)]
pub struct Td3Outcome {
    pub critics: [MlpCritic; 2],
    pub actor: DeterministicActor,
    pub log: MetricsLog,
}

impl Td3Agent {
    pub fn new(env: &Env, cfg: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let model = &env.model;
        let ActionSetKind::Box { lo, hi, .. } = model.actions().kind() else {
            return Err(Error::Config("CT-TD3 needs a continuous (box) action set".into()));
        };
        let (ApproxSpec::Mlp { hidden: ch, activation: ca }, ApproxSpec::Mlp { hidden: ah, activation: aa }) =
            (&cfg.critic, &cfg.actor)
        else {
            return Err(Error::Config("CT-TD3 needs MLP critic and actor".into()));
        };
        let d = lo.len();
        let mut sizes = vec![model.state_dim()];
        sizes.extend_from_slice(ah);
        sizes.push(d);
        let actor = DeterministicActor {
            net: Mlp::new(&sizes, *aa, rng)?,
            center: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect(),
        };
        let c1 = MlpCritic::new(ch, *ca, model.state_dim(), model.actions(), rng)?;
        let c2 = MlpCritic::new(ch, *ca, model.state_dim(), model.actions(), rng)?;
        let np = c1.net().n_params();
        Ok(Self {
            beta: model.beta(),
            actor_target: actor.clone(),
            actor_opt: Adam::new(actor.net.n_params(), cfg.lr_actor),
            actor,
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            critic_opts: [Adam::new(np, cfg.lr_critic), Adam::new(np, cfg.lr_critic)],
            clamp_warned: false,
            updates: 0,
            cfg,
        })
    }

    pub fn actor(&self) -> &DeterministicActor {
        &self.actor
    }

    pub fn critics(&self) -> &[MlpCritic; 2] {
        &self.critics
    }

    /// Make the second critic (and its target) a copy of the first.
    pub fn mirror_critics(&mut self) {
        self.critics[1] = self.critics[0].clone();
        self.targets[1] = self.targets[0].clone();
    }

    fn clip(&self, a: &mut [f64]) {
        let (lo, hi) = self.actor.bounds();
        for k in 0..a.len() {
            a[k] = a[k].clamp(lo[k], hi[k]);
        }
    }

    fn behaviour_action(&self, x: &[f64], step: usize, rng: &mut dyn RngCore) -> Action {
        let (lo, hi) = self.actor.bounds();
        if step <= self.cfg.warmup_steps {
            return Action::continuous(lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect());
        }
        let mut a = self.actor.act_values(x);
        for (k, v) in a.iter_mut().enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            *v += self.cfg.expl_std * self.actor.half[k] * xi;
        }
        self.clip(&mut a);
        Action::continuous(a)
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

    /// Twin targets `(y_1, y_2)` of one transition.
    pub fn targets_for(&mut self, t: &Transition, rng: &mut dyn RngCore) -> Result<[f64; 2]> {
        if !(t.u > 0.0) {
            return Err(Error::Input(format!("transition holding time must be > 0, got {}", t.u)));
        }
        let tau = self.effective_tau(t.u);
        let mut a_next = self.actor_target.act_values(&t.x_next);
        for (k, v) in a_next.iter_mut().enumerate() {
            let h = self.actor.half[k];
            let xi: f64 = rng.sample(StandardNormal);
            let c = self.cfg.noise_clip * h;
            *v += (self.cfg.target_noise_std * h * xi).clamp(-c, c);
        }
        self.clip(&mut a_next);
        let a_bar = self.actor_target.act_values(&t.x);
        let next = [self.targets[0].q(&t.x_next, &a_next), self.targets[1].q(&t.x_next, &a_next)];
        let here = [self.targets[0].q(&t.x, &a_bar), self.targets[1].q(&t.x, &a_bar)];
        let s_next = next[0].min(next[1]);
        let s = here[0].min(here[1]);
        debug_assert!(s_next <= next[0] && s_next <= next[1] && s <= here[0] && s <= here[1]);
        let q_i = [self.targets[0].q(&t.x, &t.a.value), self.targets[1].q(&t.x, &t.a.value)];
        Ok([0, 1].map(|i| td3_target_from_parts(q_i[i], t.r, s, s_next, t.u, tau, self.beta)))
    }

    /// One update event; returns the mean twin-critic loss.
    pub fn update(&mut self, buffer: &ReplayBuffer, step: usize, rng: &mut dyn RngCore) -> Result<f64> {
        let mut loss_sum = 0.0;
        for _ in 0..self.cfg.gradient_steps {
            let batch = buffer.sample(self.cfg.batch_size, rng);
            let mut ys = Vec::with_capacity(batch.len());
            for t in &batch {
                let y = self.targets_for(t, rng)?;
                if y.iter().any(|v| !v.is_finite() || v.abs() > self.cfg.divergence_guard) {
                    return Err(Error::TrainingAbort { step, cause: format!("critic target {y:?} out of range") });
                }
                ys.push(y);
            }
            let inv = 1.0 / batch.len() as f64;
            for i in 0..2 {
                let mut grad = vec![0.0; self.critics[i].net().n_params()];
                let mut loss = 0.0;
                for (t, y) in batch.iter().zip(&ys) {
                    let q = self.critics[i].q(&t.x, &t.a.value);
                    loss += 0.5 * (q - y[i]).powi(2) * inv;
                    self.critics[i].backprop(&t.x, &t.a.value, (q - y[i]) * inv, &mut grad);
                }
                if !loss.is_finite() {
                    return Err(Error::TrainingAbort { step, cause: "critic loss is NaN".into() });
                }
                self.critic_opts[i].step(self.critics[i].net_mut().params_mut(), &grad);
                loss_sum += 0.5 * loss;
            }
            self.updates += 1;
            if self.updates.is_multiple_of(self.cfg.actor_delay as u64) {
                self.actor_step(&batch);
                let rate = self.cfg.target_rate;
                self.actor_target.net.polyak_from(&self.actor.net, rate);
                for i in 0..2 {
                    self.targets[i].net_mut().polyak_from(self.critics[i].net(), rate);
                }
            }
        }
        Ok(loss_sum / self.cfg.gradient_steps as f64)
    }

    /// Ascend `mean Q_1(x, mu(x))` over the batch states.
    fn actor_step(&mut self, batch: &[&Transition]) {
        let mut grad = vec![0.0; self.actor.net.n_params()];
        let mut scratch = vec![0.0; self.critics[0].net().n_params()];
        let inv = 1.0 / batch.len() as f64;
        for t in batch {
            let cache = self.actor.net.forward_cached(&t.x);
            let z = cache.output().to_vec();
            let a: Vec<f64> = z.iter().enumerate().map(|(k, v)| self.actor.center[k] + self.actor.half[k] * v.tanh()).collect();
            let (_, dq_da) = self.critics[0].backprop(&t.x, &a, 1.0, &mut scratch);
            let dout: Vec<f64> =
                (0..z.len()).map(|k| -inv * dq_da[k] * self.actor.half[k] * (1.0 - z[k].tanh().powi(2))).collect();
            self.actor.net.backward(&cache, &dout, &mut grad);
        }
        self.actor_opt.step(self.actor.net.params_mut(), &grad);
    }

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
            let a = self.behaviour_action(&x, step, rng);
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
                let stats = evaluate_policy_seeded(env, &self.actor, self.cfg.eval_episodes, &env.holding, eval_seed)?;
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
        Checkpoint::new("ct-td3", config_hash, step)
            .with("actor", Approximator::Mlp(self.actor.net.clone()))
            .with("critic1", Approximator::Mlp(self.critics[0].net().clone()))
            .with("critic2", Approximator::Mlp(self.critics[1].net().clone()))
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let net = |name: &str| match ck.part(name)? {
            Approximator::Mlp(m) => Ok(m.clone()),
            _ => Err(Error::Input(format!("checkpoint part `{name}` must be an MLP"))),
        };
        self.actor.net = net("actor")?;
        *self.critics[0].net_mut() = net("critic1")?;
        *self.critics[1].net_mut() = net("critic2")?;
        Ok(())
    }
}

/// Least-squares slope of the actor's action (first component) over `xs`.
pub fn actor_slope(actor: &DeterministicActor, xs: &[f64]) -> f64 {
    let ys: Vec<f64> = xs.iter().map(|&x| actor.act_values(&[x])[0]).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn ct_td3_train(
    env: &Env,
    cfg: &AgentConfig,
    buffer: &mut ReplayBuffer,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Td3Outcome> {
    let mut agent = Td3Agent::new(env, cfg.clone(), rng)?;
    let mut log = MetricsLog::in_memory();
    agent.train(env, buffer, steps, rng, &mut log)?;
    Ok(Td3Outcome { critics: agent.critics.clone(), actor: agent.actor.clone(), log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_step_reduces_to_discrete_td3_target() {
        let (r, s, s_next, beta) = (0.3, 1.7, -0.4, 0.5f64);
        let y = td3_target_from_parts(9.0, r, s, s_next, 1.0, 1.0, beta);
        assert!((y - (r + (-beta).exp() * s_next)).abs() < 1e-15);
    }
}
