//! Generator, advantage rates, soft/hard aggregation over actions, and
//! Boltzmann policies.
//!
//! A *q row* is the vector `q(x, a_i)` aligned with an [`ActionSet`], together
//! with that set's reference weights. Everything here is pure.

use rand::{Rng, RngCore};

use crate::dynamics::{ActionSet, DiffusionModel};
use crate::error::{check_finite, Error, Result};
use crate::field::{TabularField, ValueField};

/// Per-action values at one state plus the reference weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QRow {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
}

impl QRow {
    pub fn new(q: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if q.len() != w.len() || q.is_empty() {
            return Err(Error::Shape(format!("q row of length {} with {} weights", q.len(), w.len())));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("q row has non-finite entries".into()));
        }
        Ok(Self { q, w })
    }

    pub fn for_actions(q: Vec<f64>, actions: &ActionSet) -> Result<Self> {
        Self::new(q, actions.weights().to_vec())
    }

    pub fn soft_aggregate(&self, alpha: f64) -> f64 {
        soft_aggregate(&self.q, &self.w, alpha)
    }

    pub fn boltzmann(&self, alpha: f64) -> Vec<f64> {
        boltzmann_policy(&self.q, &self.w, alpha)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// `alpha * log sum_i w_i exp(q_i / alpha)` for `alpha > 0`, `max_i q_i` for
/// `alpha == 0` (weights ignored).
pub fn soft_aggregate(q: &[f64], w: &[f64], alpha: f64) -> f64 {
    let m = q[argmax(q)];
    if alpha == 0.0 {
        return m;
    }
    let s: f64 = q.iter().zip(w).map(|(qi, wi)| wi * ((qi - m) / alpha).exp()).sum();
    m + alpha * s.ln()
}

/// `p_i = w_i exp(q_i/alpha) / sum_j w_j exp(q_j/alpha)`. With `alpha == 0`
/// this is the point mass on [`argmax`].
pub fn boltzmann_policy(q: &[f64], w: &[f64], alpha: f64) -> Vec<f64> {
    let k = argmax(q);
    if alpha == 0.0 {
        let mut p = vec![0.0; q.len()];
        p[k] = 1.0;
        return p;
    }
    let m = q[k];
    let mut p: Vec<f64> = q.iter().zip(w).map(|(qi, wi)| wi * ((qi - m) / alpha).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `E_p[q - alpha log(p / w)]`; atoms with `p_i = 0` contribute nothing.
pub fn soft_value_of_policy(q: &[f64], w: &[f64], p: &[f64], alpha: f64) -> f64 {
    q.iter()
        .zip(w)
        .zip(p)
        .filter(|(_, pi)| **pi > 0.0)
        .map(|((qi, wi), pi)| {
            if alpha == 0.0 {
                pi * qi
            } else {
                pi * (qi - alpha * (pi / wi).ln())
            }
        })
        .sum()
}

/// Shannon entropy of a finite distribution (natural log).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Draw an index from a finite distribution by inversion.
pub fn sample_index(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Round-off can leave `acc` just below 1: fall back to the last atom with mass.
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// `b . grad + 1/2 tr(sigma sigma^T hess)` from precomputed derivatives.
fn generator_from(model: &DiffusionModel, x: &[f64], a: &[f64], grad: &[f64], hess: &[f64]) -> Result<f64> {
    let d = model.state_dim();
    let m = model.noise_dim();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    model.drift(x, a, &mut b);
    model.diffusion(x, a, &mut s);
    if b.iter().chain(&s).any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain { what: "drift/diffusion".into(), x: x.to_vec(), a: a.to_vec() });
    }
    let mut rate: f64 = b.iter().zip(grad).map(|(bi, gi)| bi * gi).sum();
    for i in 0..d {
        for j in 0..d {
            let cov: f64 = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
            rate += 0.5 * cov * hess[i * d + j];
        }
    }
    Ok(rate)
}

/// `(L^a V)(x)`.
pub fn apply_generator(model: &DiffusionModel, v: &ValueField, x: &[f64], a: &[f64]) -> Result<f64> {
    let d = model.state_dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    v.derivatives(x, &mut grad, &mut hess)?;
    let g = generator_from(model, x, a, &grad, &hess)?;
    check_finite("generator", g, x, a)
}

/// `r(x,a) + (L^a V)(x) - beta V(x)`.
pub fn exact_q(model: &DiffusionModel, v: &ValueField, x: &[f64], a: &[f64]) -> Result<f64> {
    let g = apply_generator(model, v, x, a)?;
    check_finite("exact q", model.reward(x, a) + g - model.beta() * v.eval(x), x, a)
}

/// Exact q over the whole action set at `x`.
pub fn exact_q_row(model: &DiffusionModel, v: &ValueField, x: &[f64]) -> Result<QRow> {
    let d = model.state_dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    v.derivatives(x, &mut grad, &mut hess)?;
    q_row_from(model, x, v.eval(x), &grad, &hess)
}

fn q_row_from(model: &DiffusionModel, x: &[f64], value: f64, grad: &[f64], hess: &[f64]) -> Result<QRow> {
    let acts = model.actions();
    let mut q = Vec::with_capacity(acts.len());
    for a in acts.actions() {
        let g = generator_from(model, x, a, grad, hess)?;
        q.push(check_finite("exact q", model.reward(x, a) + g - model.beta() * value, x, a)?);
    }
    Ok(QRow { q, w: acts.weights().to_vec() })
}

/// Exact q row at grid node `flat` of a tabular field (nodal stencils, no interpolation).
pub fn exact_q_row_at_node(model: &DiffusionModel, v: &TabularField, flat: usize) -> Result<QRow> {
    let d = model.state_dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    v.node_derivatives(flat, &mut grad, &mut hess);
    let x = v.grid().node(flat);
    q_row_from(model, &x, v.values()[flat], &grad, &hess)
}

/// Soft (alpha > 0) or hard (alpha = 0) Hamiltonian of `V` at `x`.
pub fn hamiltonian_at(model: &DiffusionModel, v: &ValueField, x: &[f64], alpha: f64) -> Result<f64> {
    Ok(exact_q_row(model, v, x)?.soft_aggregate(alpha))
}

pub fn hamiltonian_at_node(model: &DiffusionModel, v: &TabularField, flat: usize, alpha: f64) -> Result<f64> {
    Ok(exact_q_row_at_node(model, v, flat)?.soft_aggregate(alpha))
}
