//! Policy evaluation by discounted Monte Carlo returns.

use rand::RngCore;
use serde::Serialize;

use super::env::Env;
use crate::dynamics::{sample_holding_time, HoldingTimeSpec, Policy};
use crate::error::{Error, Result};

/// RNG purpose tag of evaluation episodes.
const EVAL_PURPOSE: u32 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Sample standard deviation across episodes (zero for one episode).
    pub std: f64,
    pub episodes: usize,
}

/// Discounted return `sum_i exp(-beta t_i) r_i u_i` of one episode.
pub fn episode_return(env: &Env, policy: &dyn Policy, spec: &HoldingTimeSpec, rng: &mut dyn RngCore) -> Result<f64> {
    let beta = env.beta();
    let mut x = env.reset(rng);
    let (mut t, mut g) = (0.0, 0.0);
    while t < env.horizon * (1.0 - 1e-12) {
        let u = sample_holding_time(spec, rng);
        let a = policy.act(&x, rng)?;
        let tr = env.step_for(&x, &a, u, spec, rng)?;
        g += (-beta * t).exp() * tr.r * u;
        t += u;
        x = tr.x_next;
    }
    Ok(g)
}

/// Episode `e` runs on its own stream derived from `seed`, so two policies
/// evaluated with the same seed see the same start states, holding times
/// and noise draws wherever their actions agree.
pub fn evaluate_policy_seeded(
    env: &Env,
    policy: &dyn Policy,
    episodes: usize,
    spec: &HoldingTimeSpec,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .map(|e| episode_return(env, policy, spec, &mut crate::rng::substream(seed, EVAL_PURPOSE, e as u32)))
        .collect::<Result<Vec<_>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = if returns.len() > 1 {
        (returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalStats { mean, std, episodes })
}

pub fn evaluate_policy(
    env: &Env,
    policy: &dyn Policy,
    episodes: usize,
    spec: &HoldingTimeSpec,
    rng: &mut dyn RngCore,
) -> Result<EvalStats> {
    evaluate_policy_seeded(env, policy, episodes, spec, rng.next_u64())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{Action, ActionSet, DiffusionModel, FnDynamics, FnPolicy, StartState};

    #[test]
    fn zero_reward_env_returns_zero() {
        let dynamics = FnDynamics::new(|_x, _a, b| b[0] = 0.0, |_x, _a, s| s[0] = 1.0, |_x, _a| 0.0);
        let acts = ActionSet::finite_uniform(vec![vec![0.0]]).unwrap();
        let m = DiffusionModel::new("zero", 1, 1.0, vec![(-1.0, 1.0)], acts, Arc::new(dynamics)).unwrap();
        let env = Env::new(m, HoldingTimeSpec::fixed(0.1).unwrap(), StartState::Fixed(vec![0.0]), 1.0).unwrap();
        let pi = FnPolicy(|_x: &[f64]| Action::indexed(0, vec![0.0]));
        let s = evaluate_policy(&env, &pi, 10, &env.holding, &mut crate::rng::stream(0, 0)).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));
    }

    #[test]
    fn constant_reward_matches_riemann_sum() {
        let dynamics = FnDynamics::new(|_x, _a, b| b[0] = 0.0, |_x, _a, s| s[0] = 0.0, |_x, _a| 1.0);
        let acts = ActionSet::finite_uniform(vec![vec![0.0]]).unwrap();
        let m = DiffusionModel::new("const", 1, 1.0, vec![(-1.0, 1.0)], acts, Arc::new(dynamics)).unwrap();
        let env = Env::new(m, HoldingTimeSpec::fixed(0.5).unwrap(), StartState::Fixed(vec![0.0]), 1.0).unwrap();
        let pi = FnPolicy(|_x: &[f64]| Action::indexed(0, vec![0.0]));
        let s = evaluate_policy_seeded(&env, &pi, 1, &env.holding, 3).unwrap();
        assert!((s.mean - (0.5 + 0.5 * (-0.5f64).exp())).abs() < 1e-14);
    }
}
