//! Built-in models, each built from a small serde-friendly parameter block.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{ActionSet, DiffusionModel, FnDynamics};
use crate::error::Result;

/// Scalar linear-quadratic problem: `dX = a dt + sigma dW`, `r = -x^2 - a^2`.
/// Actions live in `[-a_bound, a_bound]`, represented by `action_points`
/// equally spaced quadrature points; the drift clips out-of-box actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub beta: f64,
    pub sigma: f64,
    pub x_bound: f64,
    pub a_bound: f64,
    pub action_points: usize,
}

impl Default for LqParams {
    fn default() -> Self {
        Self { beta: 1.0, sigma: 1.0, x_bound: 3.0, a_bound: 3.0, action_points: 61 }
    }
}

pub fn lq1d(p: &LqParams) -> Result<DiffusionModel> {
    let (ab, sigma) = (p.a_bound, p.sigma);
    let dynamics = FnDynamics::new(
        move |_, a, b| b[0] = a[0].clamp(-ab, ab),
        move |_, _, s| s[0] = sigma,
        move |x, a| {
            let a = a[0].clamp(-ab, ab);
            -x[0] * x[0] - a * a
        },
    );
    let actions = ActionSet::box_grid(vec![-ab], vec![ab], p.action_points)?;
    DiffusionModel::new("lq1d", 1, p.beta, vec![(-p.x_bound, p.x_bound)], actions, Arc::new(dynamics))
}

/// Ornstein–Uhlenbeck diagnostic: `dX = -theta X dt + sigma dW`, `r = -x^2`,
/// a single do-nothing action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
    pub beta: f64,
    pub x_bound: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { theta: 1.0, sigma: 0.5, beta: 1.0, x_bound: 10.0 }
    }
}

pub fn ou(p: &OuParams) -> Result<DiffusionModel> {
    let (theta, sigma) = (p.theta, p.sigma);
    let dynamics = FnDynamics::new(
        move |x, _, b| b[0] = -theta * x[0],
        move |_, _, s| s[0] = sigma,
        |x, _| -x[0] * x[0],
    );
    let actions = ActionSet::finite_uniform(vec![vec![0.0]])?;
    DiffusionModel::new("ou", 1, p.beta, vec![(-p.x_bound, p.x_bound)], actions, Arc::new(dynamics))
}

/// 1-D drift chain: actions `{-s, 0, +s}` set the drift directly,
/// `dX = a dt + sigma dW`, `r = -x^2 - cost * a^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    pub beta: f64,
    pub sigma: f64,
    pub x_bound: f64,
    pub action_scale: f64,
    pub action_cost: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self { beta: 1.0, sigma: 0.5, x_bound: 2.0, action_scale: 1.0, action_cost: 0.1 }
    }
}

pub fn drift_chain(p: &ChainParams) -> Result<DiffusionModel> {
    let (sigma, cost) = (p.sigma, p.action_cost);
    let dynamics = FnDynamics::new(
        |_, a, b| b[0] = a[0],
        move |_, _, s| s[0] = sigma,
        move |x, a| -x[0] * x[0] - cost * a[0] * a[0],
    );
    let s = p.action_scale;
    let actions = ActionSet::finite_uniform(vec![vec![-s], vec![0.0], vec![s]])?;
    DiffusionModel::new("drift-chain", 1, p.beta, vec![(-p.x_bound, p.x_bound)], actions, Arc::new(dynamics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_construct_with_defaults() {
        let lq = lq1d(&LqParams::default()).unwrap();
        assert_eq!(lq.actions().len(), 61);
        assert!((lq.reward_sup_estimate().unwrap() - 18.0).abs() < 1e-12);
        assert_eq!(drift_chain(&ChainParams::default()).unwrap().actions().len(), 3);
        assert_eq!(ou(&OuParams::default()).unwrap().state_dim(), 1);
    }

    #[test]
    fn rejects_nonpositive_beta() {
        let p = ChainParams { beta: 0.0, ..Default::default() };
        assert!(drift_chain(&p).is_err());
    }
}
