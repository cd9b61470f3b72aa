use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::holding::{sample_holding_time, HoldingTimeSpec};
use super::model::{Action, DiffusionModel};
use crate::error::{Error, Result};

/// One decision: state, action held for `u`, reward rate at `(x, a)`, next state.
/// `x_mid` is the state at `u/2` on the same path, when recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub x_next: Vec<f64>,
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_mid: Option<Vec<f64>>,
}

/// Maps a state to an action, possibly at random.
pub trait Policy: Send + Sync {
    fn act(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Action>;
}

/// Deterministic policy from a closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[f64]) -> Action + Send + Sync,
{
    fn act(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<Action> {
        Ok((self.0)(x))
    }
}

/// Episode start: a fixed state or uniform over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartState {
    Fixed(Vec<f64>),
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl StartState {
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            StartState::Fixed(x) => x.clone(),
            StartState::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| {
                    let s: f64 = rng.random();
                    l + s * (h - l)
                })
                .collect(),
        }
    }
}

/// Default integration substep `min(u/4, 0.005 u_nom)`.
pub fn default_substep(u: f64, u_nom: f64) -> f64 {
    (u / 4.0).min(0.005 * u_nom)
}

/// Euler–Maruyama step driven by a given standard-normal vector `xi`
/// (length `noise_dim`); the result is clamped to the state bounds.
pub fn em_step_with_noise(model: &DiffusionModel, x: &[f64], a: &[f64], dt: f64, xi: &[f64]) -> Result<Vec<f64>> {
    let d = model.state_dim();
    let m = model.noise_dim();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    model.drift(x, a, &mut b);
    model.diffusion(x, a, &mut s);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain { what: "drift".into(), x: x.to_vec(), a: a.to_vec() });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain { what: "diffusion".into(), x: x.to_vec(), a: a.to_vec() });
    }
    let sq = dt.sqrt();
    let mut out = x.to_vec();
    for i in 0..d {
        let noise: f64 = (0..m).map(|j| s[i * m + j] * xi[j]).sum();
        out[i] += b[i] * dt + noise * sq;
    }
    model.clamp(&mut out);
    Ok(out)
}

/// One Euler–Maruyama step of length `dt` with fresh Gaussian noise.
pub fn em_step<R: RngCore + ?Sized>(model: &DiffusionModel, x: &[f64], a: &[f64], dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be > 0, got {dt}")));
    }
    let xi: Vec<f64> = (0..model.noise_dim()).map(|_| rng.sample(StandardNormal)).collect();
    em_step_with_noise(model, x, a, dt, &xi)
}

fn substep_count(u: f64, substep: f64) -> Result<usize> {
    if !(substep > 0.0 && u > 0.0) {
        return Err(Error::Config(format!("need 0 < substep <= u, got substep={substep}, u={u}")));
    }
    // The tolerance keeps u = k * substep from rounding up to k + 1.
    Ok(((u / substep) - 1e-9).ceil().max(1.0) as usize)
}

/// Hold `a` for `u`, integrating with `ceil(u / substep)` equal Euler–Maruyama
/// substeps. The reward field is the rate `r(x, a)`.
pub fn env_transition<R: RngCore + ?Sized>(
    model: &DiffusionModel,
    x: &[f64],
    a: &Action,
    u: f64,
    substep: f64,
    rng: &mut R,
) -> Result<Transition> {
    let n = substep_count(u, substep)?;
    let dt = u / n as f64;
    let mut y = x.to_vec();
    for _ in 0..n {
        y = em_step(model, &y, &a.value, dt, rng)?;
    }
    let r = crate::error::check_finite("reward", model.reward(x, &a.value), x, &a.value)?;
    Ok(Transition { x: x.to_vec(), a: a.clone(), r, x_next: y, u, x_mid: None })
}

/// As [`env_transition`] but with an even number of substeps, recording the
/// state reached at `u/2`.
pub fn env_transition_with_midpoint<R: RngCore + ?Sized>(
    model: &DiffusionModel,
    x: &[f64],
    a: &Action,
    u: f64,
    substep: f64,
    rng: &mut R,
) -> Result<Transition> {
    let mut n = substep_count(u, substep)?;
    n += n % 2;
    let dt = u / n as f64;
    let mut y = x.to_vec();
    let mut mid = None;
    for k in 0..n {
        y = em_step(model, &y, &a.value, dt, rng)?;
        if k + 1 == n / 2 {
            mid = Some(y.clone());
        }
    }
    let r = crate::error::check_finite("reward", model.reward(x, &a.value), x, &a.value)?;
    Ok(Transition { x: x.to_vec(), a: a.clone(), r, x_next: y, u, x_mid: mid })
}

/// Simulate from `x0` until the elapsed time reaches `horizon`, drawing a
/// holding time and an action at each decision.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: RngCore>(
    model: &DiffusionModel,
    policy: &dyn Policy,
    spec: &HoldingTimeSpec,
    horizon: f64,
    substep: f64,
    x0: &[f64],
    rng: &mut R,
) -> Result<Vec<Transition>> {
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
    }
    let mut out = Vec::new();
    let mut x = x0.to_vec();
    model.clamp(&mut x);
    let mut t = 0.0;
    while t < horizon * (1.0 - 1e-12) {
        let u = sample_holding_time(spec, rng);
        let a = policy.act(&x, rng)?;
        let tr = env_transition(model, &x, &a, u, substep.min(u), rng)?;
        t += u;
        x.clone_from(&tr.x_next);
        out.push(tr);
    }
    Ok(out)
}

/// `sum_i r_i u_i exp(-beta t_i)` with `t_i` the decision times.
pub fn discounted_return(transitions: &[Transition], beta: f64) -> f64 {
    let mut t = 0.0;
    let mut g = 0.0;
    for tr in transitions {
        g += tr.r * tr.u * (-beta * t).exp();
        t += tr.u;
    }
    g
}
