//! Finite-horizon advantage-rate estimators and their Richardson extrapolation.
//!
//! `q^u_V(x,a) = (e^{-beta u} E[V(X_u)] - V(x)) / u + r(x,a)` with the
//! expectation taken either by Gauss–Hermite quadrature over the one-step
//! Euler–Maruyama Gaussian or by Monte Carlo over simulated transitions.
//! `2 q^{u/2} - q^u` cancels the first-order bias.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{env_transition, env_transition_with_midpoint, Action, DiffusionModel};
use crate::error::{check_finite, Error, Result};
use crate::field::{TabularField, ValueField};
use crate::grid::Grid;
use crate::hamiltonian::{soft_aggregate, QRow};
use crate::quadrature::{GaussHermite, DEFAULT_ORDER};
use crate::value_flow::{run_flow, ConvergenceTrace, EstimatorTag, FlowConfig};

/// Paths used when a quadrature request has to fall back to simulation.
pub const FALLBACK_PATHS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMode {
    ModelQuadrature,
    MonteCarlo { n_samples: usize },
}

impl QMode {
    pub fn tag(&self) -> &'static str {
        match self {
            QMode::ModelQuadrature => "model-quadrature",
            QMode::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QEstimatorConfig {
    pub u: f64,
    pub mode: QMode,
    #[serde(default)]
    pub richardson: bool,
    /// Integration substep for simulated paths. In quadrature mode the
    /// one-step Gaussian is used when this is unset or `u <= 4 * substep`;
    /// longer horizons fall back to [`FALLBACK_PATHS`] simulated paths.
    #[serde(default)]
    pub substep: Option<f64>,
    #[serde(default = "default_order")]
    pub gh_order: usize,
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

impl QEstimatorConfig {
    pub fn quadrature(u: f64) -> Self {
        Self { u, mode: QMode::ModelQuadrature, richardson: false, substep: None, gh_order: DEFAULT_ORDER }
    }

    pub fn monte_carlo(u: f64, n_samples: usize) -> Self {
        Self { mode: QMode::MonteCarlo { n_samples }, ..Self::quadrature(u) }
    }

    pub fn with_richardson(mut self, on: bool) -> Self {
        self.richardson = on;
        self
    }

    pub fn with_u(&self, u: f64) -> Self {
        Self { u, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::Config(format!("holding time u must be > 0, got {}", self.u)));
        }
        if let QMode::MonteCarlo { n_samples: 0 } = self.mode {
            return Err(Error::Config("monte-carlo mode needs n_samples >= 1".into()));
        }
        if let Some(s) = self.substep {
            if !(s > 0.0) {
                return Err(Error::Config(format!("substep must be > 0, got {s}")));
            }
        }
        if self.gh_order < 3 {
            return Err(Error::Config(format!("Gauss-Hermite order must be >= 3, got {}", self.gh_order)));
        }
        Ok(())
    }

    /// `e^{-beta u}`.
    pub fn gamma(&self, beta: f64) -> f64 {
        (-beta * self.u).exp()
    }
}

/// Estimator with its quadrature rule built once.
#[derive(Debug, Clone)]
pub struct QEstimator {
    cfg: QEstimatorConfig,
    gh: GaussHermite,
}

impl QEstimator {
    pub fn new(cfg: &QEstimatorConfig, noise_dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone(), gh: GaussHermite::new(cfg.gh_order, noise_dim)? })
    }

    pub fn config(&self) -> &QEstimatorConfig {
        &self.cfg
    }

    fn uses_one_step(&self, u: f64) -> bool {
        match self.cfg.substep {
            None => true,
            Some(s) => u <= 4.0 * s * (1.0 + 1e-12),
        }
    }

    /// `E[V(x')]` under the one-step Euler–Maruyama Gaussian over `u`.
    pub fn quadrature_expectation(&self, v: &ValueField, model: &DiffusionModel, x: &[f64], a: &[f64], u: f64) -> Result<f64> {
        let d = model.state_dim();
        let m = model.noise_dim();
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        model.drift(x, a, &mut b);
        model.diffusion(x, a, &mut s);
        if b.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain { what: "drift/diffusion".into(), x: x.to_vec(), a: a.to_vec() });
        }
        let sq = u.sqrt();
        let mut y = vec![0.0; d];
        let mut acc = 0.0;
        for (z, w) in self.gh.iter() {
            for i in 0..d {
                let noise: f64 = (0..m).map(|j| s[i * m + j] * z[j]).sum();
                y[i] = x[i] + b[i] * u + noise * sq;
            }
            model.clamp(&mut y);
            acc += w * v.eval(&y);
        }
        Ok(acc)
    }

    /// Quadrature stencil of the one-step transition onto `grid` nodes:
    /// `E[V(x')] = sum_j p_j V_j` for any tabular `V` on `grid`.
    pub fn transition_stencil(
        &self,
        model: &DiffusionModel,
        grid: &Grid,
        x: &[f64],
        a: &[f64],
        u: f64,
    ) -> Result<Vec<(usize, f64)>> {
        let d = model.state_dim();
        let m = model.noise_dim();
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        model.drift(x, a, &mut b);
        model.diffusion(x, a, &mut s);
        let sq = u.sqrt();
        let mut y = vec![0.0; d];
        let mut st = Vec::new();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (z, w) in self.gh.iter() {
            for i in 0..d {
                let noise: f64 = (0..m).map(|j| s[i * m + j] * z[j]).sum();
                y[i] = x[i] + b[i] * u + noise * sq;
            }
            model.clamp(&mut y);
            grid.stencil(&y, &mut st);
            for &(j, wj) in &st {
                match out.iter_mut().find(|p| p.0 == j) {
                    Some(p) => p.1 += w * wj,
                    None => out.push((j, w * wj)),
                }
            }
        }
        Ok(out)
    }

    fn mc_expectation(
        &self,
        v: &ValueField,
        model: &DiffusionModel,
        x: &[f64],
        a: &[f64],
        u: f64,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let act = Action::continuous(a.to_vec());
        let sub = self.cfg.substep.unwrap_or(u).min(u);
        let mut acc = 0.0;
        for _ in 0..n {
            let t = env_transition(model, x, &act, u, sub, rng)?;
            acc += v.eval(&t.x_next);
        }
        Ok(acc / n as f64)
    }

    /// `E[V(X_u)]` by the configured mode.
    pub fn expectation(
        &self,
        v: &ValueField,
        model: &DiffusionModel,
        x: &[f64],
        a: &[f64],
        u: f64,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        match self.cfg.mode {
            QMode::ModelQuadrature if self.uses_one_step(u) => self.quadrature_expectation(v, model, x, a, u),
            QMode::ModelQuadrature => self.mc_expectation(v, model, x, a, u, FALLBACK_PATHS, rng),
            QMode::MonteCarlo { n_samples } => self.mc_expectation(v, model, x, a, u, n_samples, rng),
        }
    }

    fn q_from(model: &DiffusionModel, v0: f64, ev: f64, x: &[f64], a: &[f64], u: f64) -> Result<f64> {
        let q = ((-model.beta() * u).exp() * ev - v0) / u + model.reward(x, a);
        check_finite("finite-horizon q", q, x, a)
    }

    /// Plain estimator at an explicit horizon `u`.
    pub fn finite_q_at(
        &self,
        v: &ValueField,
        model: &DiffusionModel,
        x: &[f64],
        a: &[f64],
        u: f64,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let ev = self.expectation(v, model, x, a, u, rng)?;
        Self::q_from(model, v.eval(x), ev, x, a, u)
    }

    pub fn finite_q(&self, v: &ValueField, model: &DiffusionModel, x: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        self.finite_q_at(v, model, x, a, self.cfg.u, rng)
    }

    /// `2 q^{u/2} - q^u`. Monte Carlo mode evaluates both horizons on the
    /// same simulated paths (the `u/2` state is the path midpoint).
    pub fn richardson_q(&self, v: &ValueField, model: &DiffusionModel, x: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        let u = self.cfg.u;
        let n = match self.cfg.mode {
            QMode::MonteCarlo { n_samples } => Some(n_samples),
            QMode::ModelQuadrature if !self.uses_one_step(u) => Some(FALLBACK_PATHS),
            QMode::ModelQuadrature => None,
        };
        let v0 = v.eval(x);
        let (e_half, e_full) = match n {
            None => (
                self.quadrature_expectation(v, model, x, a, 0.5 * u)?,
                self.quadrature_expectation(v, model, x, a, u)?,
            ),
            Some(n) => {
                let act = Action::continuous(a.to_vec());
                let sub = self.cfg.substep.unwrap_or(0.5 * u).min(0.5 * u);
                let (mut h, mut f) = (0.0, 0.0);
                for _ in 0..n {
                    let t = env_transition_with_midpoint(model, x, &act, u, sub, rng)?;
                    h += v.eval(t.x_mid.as_deref().expect("midpoint recorded"));
                    f += v.eval(&t.x_next);
                }
                (h / n as f64, f / n as f64)
            }
        };
        let half = Self::q_from(model, v0, e_half, x, a, 0.5 * u)?;
        let full = Self::q_from(model, v0, e_full, x, a, u)?;
        Ok(2.0 * half - full)
    }

    /// Plain or Richardson estimate according to the config.
    pub fn estimate(&self, v: &ValueField, model: &DiffusionModel, x: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        if self.cfg.richardson {
            self.richardson_q(v, model, x, a, rng)
        } else {
            self.finite_q(v, model, x, a, rng)
        }
    }

    pub fn row(&self, v: &ValueField, model: &DiffusionModel, x: &[f64], rng: &mut dyn RngCore) -> Result<QRow> {
        let acts = model.actions();
        let q = acts
            .actions()
            .iter()
            .map(|a| self.estimate(v, model, x, a, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(QRow { q, w: acts.weights().to_vec() })
    }

    /// Soft aggregate of the estimated row at `x`.
    pub fn discretized_hamiltonian(
        &self,
        v: &ValueField,
        model: &DiffusionModel,
        x: &[f64],
        alpha: f64,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let row = self.row(v, model, x, rng)?;
        Ok(soft_aggregate(&row.q, &row.w, alpha))
    }
}

/// One-shot plain estimate.
pub fn finite_q(
    v: &ValueField,
    model: &DiffusionModel,
    x: &[f64],
    a: &[f64],
    cfg: &QEstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    QEstimator::new(cfg, model.noise_dim())?.finite_q(v, model, x, a, rng)
}

/// One-shot Richardson estimate.
pub fn richardson_q(
    v: &ValueField,
    model: &DiffusionModel,
    x: &[f64],
    a: &[f64],
    cfg: &QEstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    QEstimator::new(cfg, model.noise_dim())?.richardson_q(v, model, x, a, rng)
}

/// One-shot discretized Hamiltonian (plain or Richardson per `cfg`).
pub fn discretized_hamiltonian(
    v: &ValueField,
    model: &DiffusionModel,
    x: &[f64],
    alpha: f64,
    cfg: &QEstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    QEstimator::new(cfg, model.noise_dim())?.discretized_hamiltonian(v, model, x, alpha, rng)
}

/// `V + tau * H_u(V)` at every node, together with the estimated q rows.
/// Monte Carlo draws use stream `(seed, iter << 32 | node)`.
pub fn discretized_picard_step(
    v: &TabularField,
    model: &DiffusionModel,
    flow: &FlowConfig,
    est: &QEstimator,
    seed: u64,
    iter: usize,
) -> Result<(TabularField, Vec<QRow>)> {
    flow.validate_step()?;
    let field = ValueField::Tabular(v.clone());
    let g = v.grid();
    let out = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.node(i);
            let mut rng = crate::rng::stream(seed, ((iter as u64) << 32) | i as u64);
            let row = est.row(&field, model, &x, &mut rng)?;
            let h = soft_aggregate(&row.q, &row.w, flow.alpha);
            Ok((v.values()[i] + flow.tau * h, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, rows): (Vec<f64>, Vec<QRow>) = out.into_iter().unzip();
    Ok((v.with_values(values)?, rows))
}

/// Iterate `V_{k+1} = V_k + tau H_u(V_k)`. With `q_oracle` (per-node rows)
/// the trace also records `max |q^u_{V_k} - q_oracle|`.
pub fn discretized_picard_iterate(
    v0: &TabularField,
    model: &DiffusionModel,
    flow: &FlowConfig,
    qcfg: &QEstimatorConfig,
    oracle: Option<&ValueField>,
    q_oracle: Option<&[Vec<f64>]>,
    seed: u64,
) -> Result<(TabularField, ConvergenceTrace)> {
    let est = QEstimator::new(qcfg, model.noise_dim())?;
    if flow.tau > qcfg.u {
        log::warn!("tau/u = {:.3} exceeds 1; the discretized iteration may be unstable", flow.tau / qcfg.u);
    }
    if let Some(q) = q_oracle {
        if q.len() != v0.grid().len() {
            return Err(Error::Shape(format!("q oracle has {} rows for {} nodes", q.len(), v0.grid().len())));
        }
    }
    let (v, mut trace) = run_flow(v0, model, flow, oracle, |v, k| {
        let (next, rows) = discretized_picard_step(v, model, flow, &est, seed, k)?;
        let q_err = q_oracle.map(|qo| {
            rows.iter()
                .zip(qo)
                .flat_map(|(r, o)| r.q.iter().zip(o).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max)
        });
        Ok((next, q_err))
    })?;
    trace.estimator = Some(EstimatorTag { u: qcfg.u, mode: qcfg.mode.tag().into(), richardson: qcfg.richardson });
    Ok((v, trace))
}
