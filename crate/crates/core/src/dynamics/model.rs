use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift, diffusion and reward of a controlled diffusion.
///
/// `diffusion` writes a row-major `state_dim x noise_dim` matrix.
pub trait Dynamics: Send + Sync {
    fn drift(&self, x: &[f64], a: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]);
    fn reward(&self, x: &[f64], a: &[f64]) -> f64;
}

type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type RewardFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Dynamics assembled from closures; handy for ad-hoc models.
#[derive(Clone)]
pub struct FnDynamics {
    drift: Arc<DriftFn>,
    diffusion: Arc<DriftFn>,
    reward: Arc<RewardFn>,
}

impl FnDynamics {
    pub fn new(
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { drift: Arc::new(drift), diffusion: Arc::new(diffusion), reward: Arc::new(reward) }
    }
}

impl Dynamics for FnDynamics {
    fn drift(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.drift)(x, a, out)
    }
    fn diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, a, out)
    }
    fn reward(&self, x: &[f64], a: &[f64]) -> f64 {
        (self.reward)(x, a)
    }
}

/// An action: its vector value and, for finite sets, its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub index: Option<usize>,
    pub value: Vec<f64>,
}

impl Action {
    pub fn indexed(index: usize, value: Vec<f64>) -> Self {
        Self { index: Some(index), value }
    }

    pub fn continuous(value: Vec<f64>) -> Self {
        Self { index: None, value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSetKind {
    Finite,
    /// Uniform box; the finite points are a tensor quadrature grid over it.
    Box { lo: Vec<f64>, hi: Vec<f64>, points_per_dim: usize },
}

/// Finite action list with reference-measure weights. Box action spaces carry
/// their quadrature grid here, so every action integral is a weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    kind: ActionSetKind,
    actions: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ActionSet {
    pub fn finite(actions: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Config("action set is empty".into()));
        }
        if actions.len() != weights.len() {
            return Err(Error::Shape(format!("{} actions but {} weights", actions.len(), weights.len())));
        }
        let d = actions[0].len();
        if d == 0 || actions.iter().any(|a| a.len() != d) {
            return Err(Error::Shape("actions must share one nonzero dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("action weights must be strictly positive".into()));
        }
        Ok(Self { kind: ActionSetKind::Finite, actions, weights })
    }

    /// Finite set with uniform weights summing to one.
    pub fn finite_uniform(actions: Vec<Vec<f64>>) -> Result<Self> {
        let n = actions.len().max(1);
        Self::finite(actions, vec![1.0 / n as f64; n])
    }

    /// Box `[lo, hi]` with a tensor grid of `points_per_dim` points per axis
    /// (endpoints included) and uniform weights summing to one.
    pub fn box_grid(lo: Vec<f64>, hi: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Config("box bounds must satisfy lo < hi".into()));
        }
        if points_per_dim < 2 {
            return Err(Error::Config("box quadrature needs at least 2 points per axis".into()));
        }
        let d = lo.len();
        let total = points_per_dim.pow(d as u32);
        let mut actions = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut a = vec![0.0; d];
            for k in (0..d).rev() {
                let i = rem % points_per_dim;
                rem /= points_per_dim;
                a[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (points_per_dim - 1) as f64;
            }
            actions.push(a);
        }
        let w = 1.0 / total as f64;
        Ok(Self { kind: ActionSetKind::Box { lo, hi, points_per_dim }, actions, weights: vec![w; total] })
    }

    pub fn kind(&self) -> &ActionSetKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i]
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn indexed(&self, i: usize) -> Action {
        Action::indexed(i, self.actions[i].clone())
    }

    /// Box bounds (componentwise min/max over the listed actions for finite sets).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            ActionSetKind::Box { lo, hi, .. } => (lo.clone(), hi.clone()),
            ActionSetKind::Finite => {
                let d = self.dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for a in &self.actions {
                    for k in 0..d {
                        lo[k] = lo[k].min(a[k]);
                        hi[k] = hi[k].max(a[k]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// The controlled SDE `dX = b(X,a)dt + sigma(X,a)dW`, reward rate `r(X,a)`,
/// discount rate `beta`, and the box the state is clamped to.
#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    beta: f64,
    bounds: Vec<(f64, f64)>,
    actions: ActionSet,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("beta", &self.beta)
            .field("bounds", &self.bounds)
            .field("actions", &self.actions.len())
            .finish()
    }
}

/// Probe points per axis used to check finiteness and boundedness of the reward.
const REWARD_PROBES: usize = 9;

impl DiffusionModel {
    pub fn new(
        name: impl Into<String>,
        noise_dim: usize,
        beta: f64,
        bounds: Vec<(f64, f64)>,
        actions: ActionSet,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        if bounds.is_empty() || bounds.iter().any(|(l, h)| !(l.is_finite() && h.is_finite() && h > l)) {
            return Err(Error::Config("state bounds must be finite intervals with lo < hi".into()));
        }
        if noise_dim == 0 {
            return Err(Error::Config("noise_dim must be >= 1".into()));
        }
        let model = Self {
            name: name.into(),
            state_dim: bounds.len(),
            noise_dim,
            beta,
            bounds,
            actions,
            dynamics,
        };
        model.reward_sup_estimate()?;
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    /// Copy of the model with a different discount rate.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.name.clone(), self.noise_dim, beta, self.bounds.clone(), self.actions.clone(), self.dynamics.clone())
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn reward(&self, x: &[f64], a: &[f64]) -> f64 {
        self.dynamics.reward(x, a)
    }

    pub fn drift(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        self.dynamics.drift(x, a, out)
    }

    pub fn diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        self.dynamics.diffusion(x, a, out)
    }

    /// `max |r|` over a probe lattice of the state box times the action set.
    /// Errors if any probe is non-finite.
    pub fn reward_sup_estimate(&self) -> Result<f64> {
        let d = self.state_dim;
        let total = REWARD_PROBES.pow(d as u32);
        let mut x = vec![0.0; d];
        let mut sup: f64 = 0.0;
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..d).rev() {
                let i = rem % REWARD_PROBES;
                rem /= REWARD_PROBES;
                let (lo, hi) = self.bounds[k];
                x[k] = lo + (hi - lo) * i as f64 / (REWARD_PROBES - 1) as f64;
            }
            for a in self.actions.actions() {
                let r = self.reward(&x, a);
                if !r.is_finite() {
                    return Err(Error::NumericDomain { what: "reward".into(), x: x.clone(), a: a.clone() });
                }
                sup = sup.max(r.abs());
            }
        }
        Ok(sup)
    }
}
