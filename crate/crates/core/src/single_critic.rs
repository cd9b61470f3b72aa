//! Single critic `Q = V + q` and its closed-form update targets.
//!
//! With `S(x)` the soft state value of the critic row at `x` and
//! `gamma = e^{-beta u}` from the transition's own holding time,
//!
//! ```text
//! target = (1 - tau) Q(x,a) + tau S(x) + tau r + tau (gamma S(x') - S(x)) / u
//! ```
//!
//! The Richardson variant also uses the path midpoint `x_mid` at `u/2`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, ActionSet, ActionSetKind, DiffusionModel, Transition};
use crate::error::{Error, Result};
use crate::field::{TabularField, ValueField};
use crate::grid::{Axis, Grid};
use crate::hamiltonian::{boltzmann_policy, soft_aggregate, soft_value_of_policy};
use crate::q_estimation::{QEstimator, QEstimatorConfig};

/// A scalar function of (state, action) over a finite action set.
pub trait Critic: Send + Sync {
    /// Reference weights of the action set.
    fn weights(&self) -> &[f64];
    /// `Q(x, a_i)` for every action.
    fn row(&self, x: &[f64], out: &mut [f64]);
    fn value(&self, x: &[f64], a: &Action) -> f64;

    fn n_actions(&self) -> usize {
        self.weights().len()
    }
}

/// How `S(x)` is formed from the critic row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftValueMode {
    /// Expectation under the Boltzmann policy of the critic itself.
    #[default]
    CriticBoltzmann,
    /// Expectation under the current actor.
    ActorPolicy,
}

/// Tabular critic: one value per (grid node, action), node-major; rows at
/// off-grid states are multilinear interpolations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCritic {
    grid: Grid,
    actions: Vec<Vec<f64>>,
    weights: Vec<f64>,
    values: Vec<f64>,
    /// Grid over a box action set, so continuous actions interpolate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action_grid: Option<Grid>,
}

impl TabularCritic {
    pub fn new(grid: Grid, actions: &ActionSet, values: Vec<f64>) -> Result<Self> {
        let n = grid.len() * actions.len();
        if values.len() != n {
            return Err(Error::Shape(format!("tabular critic needs {n} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("tabular critic has non-finite cells".into()));
        }
        Ok(Self {
            grid,
            actions: actions.actions().to_vec(),
            weights: actions.weights().to_vec(),
            values,
            action_grid: action_grid(actions),
        })
    }

    pub fn constant(grid: Grid, actions: &ActionSet, c: f64) -> Self {
        let n = grid.len() * actions.len();
        Self {
            grid,
            actions: actions.actions().to_vec(),
            weights: actions.weights().to_vec(),
            values: vec![c; n],
            action_grid: action_grid(actions),
        }
    }

    pub fn from_fn(grid: Grid, actions: &ActionSet, f: impl Fn(&[f64], usize) -> f64) -> Result<Self> {
        let na = actions.len();
        let values = (0..grid.len() * na).map(|k| f(&grid.node(k / na), k % na)).collect();
        Self::new(grid, actions, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, node: usize, a: usize) -> f64 {
        self.values[node * self.actions.len() + a]
    }

    pub fn node_row(&self, node: usize) -> &[f64] {
        let na = self.actions.len();
        &self.values[node * na..(node + 1) * na]
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    /// `(cell, weight)` pairs with `Q(x, a) = sum w * values[cell]`. Indexed
    /// actions use their own column; a continuous action interpolates over a
    /// box action grid, or snaps to the nearest listed action otherwise.
    pub fn cell_stencil(&self, x: &[f64], a: &Action, out: &mut Vec<(usize, f64)>) {
        let na = self.actions.len();
        let mut xs = Vec::with_capacity(1 << self.grid.dim());
        self.grid.stencil(x, &mut xs);
        let mut acols = Vec::with_capacity(2);
        match (a.index, &self.action_grid) {
            (Some(i), _) => acols.push((i, 1.0)),
            (None, Some(g)) => g.stencil(&a.value, &mut acols),
            (None, None) => {
                let dist = |b: &Vec<f64>| b.iter().zip(&a.value).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                let i = (0..na).min_by(|&i, &j| dist(&self.actions[i]).total_cmp(&dist(&self.actions[j]))).unwrap_or(0);
                acols.push((i, 1.0));
            }
        }
        out.clear();
        for &(j, wx) in &xs {
            for &(i, wa) in &acols {
                out.push((j * na + i, wx * wa));
            }
        }
    }

    /// Interpolation stencil of `x`, exposed so callers can scatter gradients.
    pub fn stencil(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        self.grid.stencil(x, out)
    }

    /// Node values of `S` (critic-Boltzmann soft value per node).
    pub fn node_soft_values(&self, alpha: f64) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| soft_aggregate(self.node_row(i), &self.weights, alpha))
            .collect()
    }
}

impl Critic for TabularCritic {
    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn row(&self, x: &[f64], out: &mut [f64]) {
        let na = self.actions.len();
        let mut st = Vec::with_capacity(1 << self.grid.dim());
        self.grid.stencil(x, &mut st);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, w) in st {
            for (a, o) in out.iter_mut().enumerate() {
                *o += w * self.values[j * na + a];
            }
        }
    }

    fn value(&self, x: &[f64], a: &Action) -> f64 {
        let mut st = Vec::with_capacity(4);
        self.cell_stencil(x, a, &mut st);
        st.iter().map(|&(c, w)| w * self.values[c]).sum()
    }
}

fn action_grid(actions: &ActionSet) -> Option<Grid> {
    match actions.kind() {
        ActionSetKind::Box { lo, hi, points_per_dim } => {
            let axes = lo.iter().zip(hi).map(|(&l, &h)| Axis::new(l, h, *points_per_dim)).collect::<Result<Vec<_>>>().ok()?;
            Grid::new(axes).ok()
        }
        ActionSetKind::Finite => None,
    }
}

/// `E_{pi_Q}[Q(x,a) - alpha log(pi_Q(a|x)/w_a)]` with `pi_Q` the Boltzmann
/// policy of the row; equals `soft_aggregate` of the row (hard max at `alpha = 0`).
pub fn soft_state_value(q: &dyn Critic, x: &[f64], alpha: f64) -> f64 {
    let mut row = vec![0.0; q.n_actions()];
    q.row(x, &mut row);
    soft_aggregate(&row, q.weights(), alpha)
}

/// The same expectation written out term by term under the Boltzmann policy.
pub fn soft_state_value_explicit(q: &dyn Critic, x: &[f64], alpha: f64) -> f64 {
    let mut row = vec![0.0; q.n_actions()];
    q.row(x, &mut row);
    let p = boltzmann_policy(&row, q.weights(), alpha);
    soft_value_of_policy(&row, q.weights(), &p, alpha)
}

/// Soft value under an arbitrary actor distribution `pi` over the action set.
pub fn soft_state_value_under(q: &dyn Critic, x: &[f64], pi: &[f64], alpha: f64) -> f64 {
    let mut row = vec![0.0; q.n_actions()];
    q.row(x, &mut row);
    soft_value_of_policy(&row, q.weights(), pi, alpha)
}

/// Critic target from its ingredients: `q_xa = Q(x,a)`, `s_x = S(x)`,
/// `s_next = S(x')` (or its expectation; the target is affine in it).
pub fn target_from_parts(q_xa: f64, r: f64, s_x: f64, s_next: f64, u: f64, tau: f64, beta: f64) -> f64 {
    let gamma = (-beta * u).exp();
    (1.0 - tau) * q_xa + tau * s_x + tau * r + tau * (gamma * s_next - s_x) / u
}

/// Fast-form target: `tau * (r + S + (gamma S' - S)/u) + (1 - tau) Q`.
pub fn fast_form_from_parts(q_xa: f64, r: f64, s_x: f64, s_next: f64, u: f64, tau: f64, beta: f64) -> f64 {
    let gamma = (-beta * u).exp();
    let fast = r + s_x + (gamma * s_next - s_x) / u;
    tau * fast + (1.0 - tau) * q_xa
}

/// Richardson target from ingredients; `s_mid = S(x_mid)` at `u/2`.
#[allow(clippy::too_many_arguments)]
pub fn richardson_from_parts(q_xa: f64, r: f64, s_x: f64, s_mid: f64, s_next: f64, u: f64, tau: f64, beta: f64) -> f64 {
    let gamma = (-beta * u).exp();
    let gamma_half = (-0.5 * beta * u).exp();
    (1.0 - tau) * q_xa + tau * r + tau * s_x + (tau / u) * (4.0 * gamma_half * s_mid - gamma * s_next - 3.0 * s_x)
}

fn checked(v: f64, what: &str, t: &Transition) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain { what: format!("{what} (u={}, r={})", t.u, t.r), x: t.x.clone(), a: t.a.value.clone() })
    }
}

fn check_u(t: &Transition) -> Result<()> {
    if t.u > 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("transition holding time must be > 0, got {}", t.u)))
    }
}

pub fn critic_target(q: &dyn Critic, t: &Transition, tau: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_u(t)?;
    let s_x = soft_state_value(q, &t.x, alpha);
    let s_next = soft_state_value(q, &t.x_next, alpha);
    let v = target_from_parts(q.value(&t.x, &t.a), t.r, s_x, s_next, t.u, tau, beta);
    checked(v, "critic target", t)
}

pub fn fast_form_target(q: &dyn Critic, t: &Transition, tau: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_u(t)?;
    let s_x = soft_state_value(q, &t.x, alpha);
    let s_next = soft_state_value(q, &t.x_next, alpha);
    let v = fast_form_from_parts(q.value(&t.x, &t.a), t.r, s_x, s_next, t.u, tau, beta);
    checked(v, "fast-form target", t)
}

pub fn richardson_critic_target(q: &dyn Critic, t: &Transition, tau: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_u(t)?;
    let mid = t.x_mid.as_ref().ok_or_else(|| Error::Input("Richardson target needs the transition midpoint".into()))?;
    let s_x = soft_state_value(q, &t.x, alpha);
    let s_mid = soft_state_value(q, mid, alpha);
    let s_next = soft_state_value(q, &t.x_next, alpha);
    let v = richardson_from_parts(q.value(&t.x, &t.a), t.r, s_x, s_mid, s_next, t.u, tau, beta);
    checked(v, "Richardson critic target", t)
}

/// Run the decoupled iteration (`V_{k+1} = V_k + tau E_pi[q_k - alpha log pi]`,
/// `q_{k+1}` re-estimated from `V_{k+1}`) beside the single-critic recursion
/// started at `Q_0 = V_0 + q_0`, and return `max_k max_cells |Q_k - (V_k + q_k)|`.
///
/// Estimates use quadrature mode. On the critic side the expectation of
/// `S(x')` is the transition stencil applied to node values of `S`, the
/// same linear operator the estimator applies to `V`.
pub fn decomposition_audit(
    model: &DiffusionModel,
    v0: &TabularField,
    tau: f64,
    u: f64,
    alpha: f64,
    k_max: usize,
    richardson: bool,
) -> Result<f64> {
    let grid = v0.grid().clone();
    let acts = model.actions();
    let na = acts.len();
    let n = grid.len();
    let beta = model.beta();
    let est = QEstimator::new(&QEstimatorConfig::quadrature(u).with_richardson(richardson), model.noise_dim())?;
    let mut rng = crate::rng::stream(0, 0);

    let q_rows = |v: &TabularField, rng: &mut crate::rng::Rng| -> Result<Vec<Vec<f64>>> {
        let field = ValueField::Tabular(v.clone());
        (0..n).map(|i| Ok(est.row(&field, model, &grid.node(i), rng)?.q)).collect()
    };
    let stencils = |h: f64| -> Result<Vec<Vec<(usize, f64)>>> {
        let mut out = Vec::with_capacity(n * na);
        for i in 0..n {
            let x = grid.node(i);
            for a in acts.actions() {
                out.push(est.transition_stencil(model, &grid, &x, a, h)?);
            }
        }
        Ok(out)
    };
    let p_full = stencils(u)?;
    let p_half = if richardson { stencils(0.5 * u)? } else { Vec::new() };
    let apply = |p: &[(usize, f64)], s: &[f64]| p.iter().map(|&(j, w)| w * s[j]).sum::<f64>();

    let mut v = v0.clone();
    let mut q = q_rows(&v, &mut rng)?;
    let mut big_q: Vec<f64> = (0..n * na).map(|k| v.values()[k / na] + q[k / na][k % na]).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..k_max {
        // Decoupled side.
        let next_v: Vec<f64> = (0..n)
            .map(|i| {
                let p = boltzmann_policy(&q[i], acts.weights(), alpha);
                v.values()[i] + tau * soft_value_of_policy(&q[i], acts.weights(), &p, alpha)
            })
            .collect();
        v = v.with_values(next_v)?;
        q = q_rows(&v, &mut rng)?;

        // Single-critic side.
        let s: Vec<f64> = (0..n).map(|i| soft_aggregate(&big_q[i * na..(i + 1) * na], acts.weights(), alpha)).collect();
        let mut next_q = vec![0.0; n * na];
        for i in 0..n {
            let x = grid.node(i);
            for a in 0..na {
                let k = i * na + a;
                let r = model.reward(&x, acts.action(a));
                let s_next = apply(&p_full[k], &s);
                next_q[k] = if richardson {
                    richardson_from_parts(big_q[k], r, s[i], apply(&p_half[k], &s), s_next, u, tau, beta)
                } else {
                    target_from_parts(big_q[k], r, s[i], s_next, u, tau, beta)
                };
            }
        }
        big_q = next_q;

        for k in 0..n * na {
            worst = worst.max((big_q[k] - (v.values()[k / na] + q[k / na][k % na])).abs());
        }
    }
    Ok(worst)
}
