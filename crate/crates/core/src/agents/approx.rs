//! Critics and actors built on tables or networks.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ApproxSpec;
use super::mlp::{Activation, Mlp};
use crate::dynamics::{Action, ActionSet, ActionSetKind, DiffusionModel, Transition};
use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::single_critic::{Critic, TabularCritic};

/// Network `Q(x, a)` with input `[x, a]`, evaluated over a finite action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCritic {
    net: Mlp,
    state_dim: usize,
    actions: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl MlpCritic {
    pub fn new(
        hidden: &[usize],
        activation: Activation,
        state_dim: usize,
        actions: &ActionSet,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + actions.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, activation, rng)?,
            state_dim,
            actions: actions.actions().to_vec(),
            weights: actions.weights().to_vec(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input(x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + a.len());
        v.extend_from_slice(x);
        v.extend_from_slice(a);
        v
    }

    pub fn q(&self, x: &[f64], a: &[f64]) -> f64 {
        self.net.forward(&Self::input(x, a))[0]
    }

    /// Add `dq * dQ/dtheta` into `grad` and return `(Q, dQ/da)`.
    pub fn backprop(&self, x: &[f64], a: &[f64], dq: f64, grad: &mut [f64]) -> (f64, Vec<f64>) {
        let cache = self.net.forward_cached(&Self::input(x, a));
        let q = cache.output()[0];
        let din = self.net.backward(&cache, &[dq], grad);
        (q, din[self.state_dim..].to_vec())
    }
}

impl Critic for MlpCritic {
    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn row(&self, x: &[f64], out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.actions) {
            *o = self.q(x, a);
        }
    }

    fn value(&self, x: &[f64], a: &Action) -> f64 {
        self.q(x, &a.value)
    }
}

/// Critic of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriticModel {
    Tabular(TabularCritic),
    Mlp(MlpCritic),
}

/// Grid over the model's state box with `nodes` points per axis.
pub fn state_grid(model: &DiffusionModel, nodes: usize) -> Result<Grid> {
    Grid::new(model.bounds().iter().map(|&(lo, hi)| Axis::new(lo, hi, nodes)).collect::<Result<Vec<_>>>()?)
}

impl CriticModel {
    /// Tables start at zero; networks at Xavier initialisation.
    pub fn build(spec: &ApproxSpec, model: &DiffusionModel, rng: &mut dyn RngCore) -> Result<Self> {
        match spec {
            ApproxSpec::Tabular { nodes } => {
                Ok(CriticModel::Tabular(TabularCritic::constant(state_grid(model, *nodes)?, model.actions(), 0.0)))
            }
            ApproxSpec::Mlp { hidden, activation } => {
                Ok(CriticModel::Mlp(MlpCritic::new(hidden, *activation, model.state_dim(), model.actions(), rng)?))
            }
        }
    }

    pub fn as_critic(&self) -> &dyn Critic {
        match self {
            CriticModel::Tabular(c) => c,
            CriticModel::Mlp(c) => c,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            CriticModel::Tabular(c) => c.values().len(),
            CriticModel::Mlp(c) => c.net().n_params(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            CriticModel::Tabular(c) => c.values(),
            CriticModel::Mlp(c) => c.net().params(),
        }
    }

    /// Gradient of `0.5 mean (Q - y)^2`; returns the loss.
    pub fn loss_gradient(&self, batch: &[(&Transition, f64)], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        match self {
            CriticModel::Tabular(c) => {
                let mut st = Vec::with_capacity(4);
                for (t, y) in batch {
                    c.cell_stencil(&t.x, &t.a, &mut st);
                    let q: f64 = st.iter().map(|&(k, w)| w * c.values()[k]).sum();
                    loss += 0.5 * (q - y).powi(2) * inv;
                    for &(k, w) in &st {
                        grad[k] += (q - y) * w * inv;
                    }
                }
            }
            CriticModel::Mlp(c) => {
                for (t, y) in batch {
                    let q = c.q(&t.x, &t.a.value);
                    loss += 0.5 * (q - y).powi(2) * inv;
                    c.backprop(&t.x, &t.a.value, (q - y) * inv, grad);
                }
            }
        }
        loss
    }

    /// Per-sample SGD on a table: each sample moves its cells by
    /// `lr * w * (y - Q)`. Returns the mean pre-update loss.
    pub fn tabular_sgd(c: &mut TabularCritic, batch: &[(&Transition, f64)], lr: f64) -> f64 {
        let mut st = Vec::with_capacity(4);
        let mut loss = 0.0;
        for (t, y) in batch {
            c.cell_stencil(&t.x, &t.a, &mut st);
            let q: f64 = st.iter().map(|&(k, w)| w * c.values()[k]).sum();
            loss += 0.5 * (q - y).powi(2);
            let vals = c.values_mut();
            for &(k, w) in &st {
                vals[k] += lr * w * (y - q);
            }
        }
        loss / batch.len().max(1) as f64
    }

    pub fn polyak_from(&mut self, source: &CriticModel, rate: f64) {
        match (self, source) {
            (CriticModel::Tabular(t), CriticModel::Tabular(s)) => {
                for (a, b) in t.values_mut().iter_mut().zip(s.values()) {
                    *a = (1.0 - rate) * *a + rate * b;
                }
            }
            (CriticModel::Mlp(t), CriticModel::Mlp(s)) => t.net.polyak_from(&s.net, rate),
            _ => {}
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Critic for CriticModel {
    fn weights(&self) -> &[f64] {
        self.as_critic().weights()
    }
    fn row(&self, x: &[f64], out: &mut [f64]) {
        self.as_critic().row(x, out)
    }
    fn value(&self, x: &[f64], a: &Action) -> f64 {
        self.as_critic().value(x, a)
    }
}

/// `Phi` via the complementary error function.
fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `Phi(hi) - Phi(lo)`, taken from the upper tail when both are positive.
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

/// Diagonal Gaussian in pre-squash coordinates, pushed through
/// `a = c + h tanh(z)` onto the action box. On the box quadrature grid its
/// distribution is the exact probability of each grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianActor {
    net: Mlp,
    center: Vec<f64>,
    half: Vec<f64>,
    points_per_dim: usize,
    /// Pre-squash cell boundaries per axis (`points + 1`, infinite ends).
    cuts: Vec<Vec<f64>>,
}

impl GaussianActor {
    pub fn new(
        hidden: &[usize],
        activation: Activation,
        state_dim: usize,
        actions: &ActionSet,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let ActionSetKind::Box { lo, hi, points_per_dim } = actions.kind() else {
            return Err(Error::Config("Gaussian actor needs a box action set".into()));
        };
        let d = lo.len();
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * d);
        let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let half: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let n = *points_per_dim;
        let cuts = (0..d)
            .map(|_| {
                let y = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let mut c = vec![f64::NEG_INFINITY];
                c.extend((1..n).map(|i| (0.5 * (y(i - 1) + y(i))).atanh()));
                c.push(f64::INFINITY);
                c
            })
            .collect();
        Ok(Self { net: Mlp::new(&sizes, activation, rng)?, center, half, points_per_dim: n, cuts })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    /// Mean and log standard deviation in pre-squash coordinates.
    pub fn gaussian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.net.forward(x);
        let d = self.dim();
        (out[..d].to_vec(), out[d..].iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect())
    }

    pub fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Action {
        let (m, s) = self.gaussian(x);
        let a = (0..self.dim())
            .map(|k| {
                let xi: f64 = rng.sample(StandardNormal);
                self.center[k] + self.half[k] * (m[k] + s[k].exp() * xi).tanh()
            })
            .collect();
        Action::continuous(a)
    }

    /// Squashed mean action.
    pub fn mean_action(&self, x: &[f64]) -> Action {
        let (m, _) = self.gaussian(x);
        Action::continuous((0..self.dim()).map(|k| self.center[k] + self.half[k] * m[k].tanh()).collect())
    }

    /// Per-axis cell masses and their derivatives in `(m, log sigma)`.
    fn axis_masses(&self, m: &[f64], s: &[f64]) -> Vec<Vec<(f64, f64, f64)>> {
        (0..self.dim())
            .map(|k| {
                let sig = s[k].exp();
                let z: Vec<f64> = self.cuts[k].iter().map(|c| (c - m[k]) / sig).collect();
                z.windows(2)
                    .map(|w| {
                        let (lo, hi) = (w[0], w[1]);
                        let (plo, phi) = (norm_pdf(lo), norm_pdf(hi));
                        let zp = |z: f64, p: f64| if z.is_infinite() { 0.0 } else { z * p };
                        (interval_mass(lo, hi), (plo - phi) / sig, zp(lo, plo) - zp(hi, phi))
                    })
                    .collect()
            })
            .collect()
    }

    fn grid_index(&self, flat: usize, out: &mut [usize]) {
        let mut rem = flat;
        for k in (0..out.len()).rev() {
            out[k] = rem % self.points_per_dim;
            rem /= self.points_per_dim;
        }
    }

    /// Probability of every box grid point (tensor order of the action set).
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let (m, s) = self.gaussian(x);
        let masses = self.axis_masses(&m, &s);
        let total = self.points_per_dim.pow(self.dim() as u32);
        let mut idx = vec![0; self.dim()];
        (0..total)
            .map(|i| {
                self.grid_index(i, &mut idx);
                idx.iter().enumerate().map(|(k, &j)| masses[k][j].0).product()
            })
            .collect()
    }

    /// `KL(pi(.|x) || b)` for target log-probabilities `log_b`; adds its
    /// parameter gradient times `scale` into `grad`.
    pub fn kl_gradient(&self, x: &[f64], log_b: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let d = self.dim();
        let cache = self.net.forward_cached(x);
        let out = cache.output();
        let m = &out[..d];
        let s_raw = &out[d..];
        let s: Vec<f64> = s_raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let masses = self.axis_masses(m, &s);
        let mut idx = vec![0; d];
        let mut kl = 0.0;
        let mut dout = vec![0.0; 2 * d];
        for (i, lb) in log_b.iter().enumerate() {
            self.grid_index(i, &mut idx);
            let p: f64 = idx.iter().enumerate().map(|(k, &j)| masses[k][j].0).product();
            if p < 1e-300 {
                continue;
            }
            let g = p.ln() - lb;
            kl += p * g;
            for k in 0..d {
                let others: f64 =
                    idx.iter().enumerate().filter(|&(kk, _)| kk != k).map(|(kk, &j)| masses[kk][j].0).product();
                let (_, dm, ds) = masses[k][idx[k]];
                dout[k] += g * others * dm;
                dout[d + k] += g * others * ds;
            }
        }
        for k in 0..d {
            if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&s_raw[k]) {
                dout[d + k] = 0.0;
            }
        }
        dout.iter_mut().for_each(|v| *v *= scale);
        self.net.backward(&cache, &dout, grad);
        kl
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_actor(n: usize) -> (GaussianActor, ActionSet) {
        let acts = ActionSet::box_grid(vec![-2.0], vec![2.0], n).unwrap();
        let actor = GaussianActor::new(&[6], Activation::Tanh, 1, &acts, &mut crate::rng::stream(3, 0)).unwrap();
        (actor, acts)
    }

    #[test]
    fn gaussian_cell_masses_sum_to_one() {
        let (actor, _) = box_actor(11);
        for x in [-1.0, 0.0, 2.5] {
            let p = actor.probs(&[x]);
            assert_eq!(p.len(), 11);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let (actor, _) = box_actor(9);
        let log_b: Vec<f64> = {
            let q: Vec<f64> = (0..9).map(|i| -((i as f64) - 3.0).powi(2) * 0.3).collect();
            let lse = q.iter().map(|v| v.exp()).sum::<f64>().ln();
            q.iter().map(|v| v - lse).collect()
        };
        let x = [0.4];
        let mut grad = vec![0.0; actor.net().n_params()];
        actor.kl_gradient(&x, &log_b, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..actor.net().n_params() {
            let mut up = actor.clone();
            up.net_mut().params_mut()[i] += h;
            let mut dn = actor.clone();
            dn.net_mut().params_mut()[i] -= h;
            let mut scratch = vec![0.0; grad.len()];
            let fd = (up.kl_gradient(&x, &log_b, 1.0, &mut scratch) - dn.kl_gradient(&x, &log_b, 1.0, &mut scratch))
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn tabular_loss_gradient_matches_sgd_direction() {
        let acts = ActionSet::finite_uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let g = Grid::uniform_1d(0.0, 1.0, 3).unwrap();
        let c = CriticModel::Tabular(TabularCritic::constant(g, &acts, 1.0));
        let t = Transition { x: vec![0.25], a: acts.indexed(1), r: 0.0, x_next: vec![0.0], u: 0.1, x_mid: None };
        let mut grad = vec![0.0; c.n_params()];
        let loss = c.loss_gradient(&[(&t, 3.0)], &mut grad);
        assert_eq!(loss, 2.0);
        assert_eq!(grad[1], -1.0);
        assert_eq!(grad[3], -1.0);
    }
}
