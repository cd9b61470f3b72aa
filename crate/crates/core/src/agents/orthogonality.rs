//! Coupled `(V, q)` baseline driven by the martingale orthogonality residual
//! `delta = V(x') - V(x) + (r - q(x,a) - beta V(x)) u`.

use rand::RngCore;

use super::buffer::ReplayBuffer;
use super::approx::state_grid;
use super::config::AgentConfig;
use super::env::Env;
use super::eval::evaluate_policy_seeded;
use super::metrics::{MetricsLog, MetricsRow};
use crate::dynamics::{Action, ActionSet, Policy, Transition};
use crate::error::{Error, Result};
use crate::field::TabularField;
use crate::hamiltonian::{argmax, boltzmann_policy, sample_index};
use crate::single_critic::{Critic, TabularCritic};

/// Residual of one transition for given `V` and `q` values.
pub fn orthogonality_residual(v_x: f64, v_next: f64, q_xa: f64, r: f64, u: f64, beta: f64) -> f64 {
    v_next - v_x + (r - q_xa - beta * v_x) * u
}

#[derive(Debug, Clone)]
pub struct OrthPolicy {
    pub q: TabularCritic,
    pub actions: ActionSet,
    pub alpha: f64,
    pub greedy: bool,
}

impl Policy for OrthPolicy {
    fn act(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        let mut row = vec![0.0; self.actions.len()];
        self.q.row(x, &mut row);
        if self.greedy {
            Ok(self.actions.indexed(argmax(&row)))
        } else {
            Ok(self.actions.indexed(sample_index(&boltzmann_policy(&row, self.actions.weights(), self.alpha), rng)))
        }
    }
}

/// On-policy semi-gradient updates on tabular `V` and `q`:
/// `V += lr_critic grad V(x) delta`, `q += lr_actor grad q(x,a) delta`.
/// Behaviour is the Boltzmann policy of `q` (uniform during warm-up).
/// Transitions are also stored in `buffer` for inspection.
pub fn martingale_orthogonality_train(
    env: &Env,
    cfg: &AgentConfig,
    nodes: usize,
    buffer: &mut ReplayBuffer,
    steps: usize,
    rng: &mut dyn RngCore,
    log: &mut MetricsLog,
) -> Result<(TabularField, TabularCritic)> {
    cfg.validate()?;
    let model = &env.model;
    let acts = model.actions().clone();
    let grid = state_grid(model, nodes)?;
    let mut v = TabularField::constant(grid.clone(), 0.0);
    let mut q = TabularCritic::constant(grid.clone(), &acts, 0.0);
    let beta = model.beta();
    let eval_seed = rng.next_u64();
    let mut x = env.reset(rng);
    let mut t_ep = 0.0;
    let (mut st, mut st_next, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    let mut sq_sum = 0.0;
    let mut sq_n = 0usize;
    for step in 1..=steps {
        let behaviour = OrthPolicy { q: q.clone(), actions: acts.clone(), alpha: cfg.alpha, greedy: false };
        let a = if step <= cfg.warmup_steps {
            acts.indexed((rng.next_u64() % acts.len() as u64) as usize)
        } else {
            behaviour.act(&x, rng)?
        };
        let tr: Transition = env.step(&x, &a, rng)?;
        grid.stencil(&tr.x, &mut st);
        grid.stencil(&tr.x_next, &mut st_next);
        q.cell_stencil(&tr.x, &tr.a, &mut cells);
        let vx: f64 = st.iter().map(|&(j, w)| w * v.values()[j]).sum();
        let vn: f64 = st_next.iter().map(|&(j, w)| w * v.values()[j]).sum();
        let qxa: f64 = cells.iter().map(|&(k, w)| w * q.values()[k]).sum();
        let delta = orthogonality_residual(vx, vn, qxa, tr.r, tr.u, beta);
        if !delta.is_finite() {
            return Err(Error::TrainingAbort { step, cause: "orthogonality residual is NaN".into() });
        }
        sq_sum += delta * delta;
        sq_n += 1;
        for &(j, w) in &st {
            v.values_mut()[j] += cfg.lr_critic * w * delta;
        }
        for &(k, w) in &cells {
            q.values_mut()[k] += cfg.lr_actor * w * delta;
        }
        if v.sup_norm() > cfg.divergence_guard {
            return Err(Error::TrainingAbort { step, cause: "value table exceeds the divergence guard".into() });
        }
        t_ep += tr.u;
        x.clone_from(&tr.x_next);
        buffer.push(tr);
        if t_ep >= env.horizon * (1.0 - 1e-12) {
            x = env.reset(rng);
            t_ep = 0.0;
        }
        if step % cfg.eval_every == 0 || step == steps {
            let greedy = OrthPolicy { q: q.clone(), actions: acts.clone(), alpha: cfg.alpha, greedy: true };
            let stats = evaluate_policy_seeded(env, &greedy, cfg.eval_episodes, &env.holding, eval_seed)?;
            log.push(MetricsRow {
                eval_return_mean: Some(stats.mean),
                eval_return_std: Some(stats.std),
                loss: Some(sq_sum / sq_n.max(1) as f64),
                ..MetricsRow::at(step as u64)
            })?;
            sq_sum = 0.0;
            sq_n = 0;
        }
    }
    Ok((v, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_formula() {
        assert_eq!(orthogonality_residual(1.0, 2.0, 0.5, 3.0, 0.1, 2.0), 1.0 + (3.0 - 0.5 - 2.0) * 0.1);
    }
}
