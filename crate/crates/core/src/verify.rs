//! Property suites with fixed seeds, each reporting measured value, bound
//! and verdict per property.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{drift_chain, em_step_with_noise, lq1d, ou, ChainParams, LqParams, OuParams};
use crate::error::{Error, Result};
use crate::field::{TabularField, ValueField};
use crate::grid::Grid;
use crate::hamiltonian::{boltzmann_policy, exact_q, soft_aggregate, soft_value_of_policy};
use crate::oracle::{lq_riccati, ou_exact_transition, riccati_field};
use crate::q_estimation::{QEstimator, QEstimatorConfig};
use crate::single_critic::decomposition_audit;
use crate::value_flow::semigroup_apply;

pub const SUITES: [&str; 6] = ["richardson-slope", "contraction", "decomposition", "em-order", "kl-identity", "lipschitz-q"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub suite: &'static str,
    pub property: String,
    pub measured: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl VerifyRow {
    fn new(suite: &'static str, property: impl Into<String>, measured: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = lower.is_none_or(|l| measured >= l) && upper.is_none_or(|u| measured <= u);
        Self { suite, property: property.into(), measured, lower, upper, pass }
    }

    fn at_most(suite: &'static str, property: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, property, measured, None, Some(bound))
    }

    fn at_least(suite: &'static str, property: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, property, measured, Some(bound), None)
    }

    fn within(suite: &'static str, property: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self::new(suite, property, measured, Some(lo), Some(hi))
    }

    /// Bound rendered for reports, e.g. `<= 1e-10` or `in [1.7, 2.3]`.
    pub fn bound_text(&self) -> String {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => format!("in [{l}, {u}]"),
            (Some(l), None) => format!(">= {l:e}"),
            (None, Some(u)) => format!("<= {u:e}"),
            (None, None) => String::new(),
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Run one suite by name, or every suite for `all`.
pub fn run_suite(name: &str) -> Result<Vec<VerifyRow>> {
    match name {
        "richardson-slope" => richardson_slope(),
        "contraction" => contraction(),
        "decomposition" => decomposition(),
        "em-order" => em_order(),
        "kl-identity" => kl_identity(),
        "lipschitz-q" => lipschitz_q(),
        "all" => {
            let mut rows = Vec::new();
            for s in SUITES {
                rows.extend(run_suite(s)?);
            }
            Ok(rows)
        }
        other => Err(Error::Config(format!("unknown suite `{other}`; available: {}, all", SUITES.join(", ")))),
    }
}

pub const RICHARDSON_US: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Sup error of the quadrature-mode estimator against the exact `q` of the
/// Riccati field on scalar LQ, over `x in [-1, 1]` and every action.
pub fn richardson_errors(richardson: bool) -> Result<Vec<f64>> {
    // A wide state box keeps one-step transitions from being clamped.
    let m = lq1d(&LqParams { x_bound: 10.0, ..Default::default() })?;
    let (p, k) = lq_riccati(m.beta(), 1.0)?;
    let v: ValueField = riccati_field(p, k).into();
    let mut rng = crate::rng::stream(0, 0);
    RICHARDSON_US
        .iter()
        .map(|&u| {
            let est = QEstimator::new(&QEstimatorConfig::quadrature(u).with_richardson(richardson), 1)?;
            let mut e: f64 = 0.0;
            for i in 0..21 {
                let x = [-1.0 + 0.1 * i as f64];
                for a in m.actions().actions() {
                    let q = est.estimate(&v, &m, &x, a, &mut rng)?;
                    e = e.max((q - exact_q(&m, &v, &x, a)?).abs());
                }
            }
            Ok(e)
        })
        .collect()
}

pub fn richardson_slope() -> Result<Vec<VerifyRow>> {
    let s = "richardson-slope";
    let plain = log_log_slope(&RICHARDSON_US, &richardson_errors(false)?);
    let rich = log_log_slope(&RICHARDSON_US, &richardson_errors(true)?);
    Ok(vec![
        VerifyRow::within(s, "plain estimator bias slope", plain, 0.8, 1.2),
        VerifyRow::within(s, "Richardson estimator bias slope", rich, 1.7, 2.3),
    ])
}

fn random_field(grid: &Grid, scale: f64, rng: &mut dyn RngCore) -> Result<TabularField> {
    TabularField::new(grid.clone(), (0..grid.len()).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Largest `|Phi V - Phi W| / |V - W|` over 100 random tabular pairs.
pub fn contraction_ratio(tau: f64, alpha: f64, pairs: usize, seed: u64) -> Result<f64> {
    let m = drift_chain(&ChainParams::default())?;
    let grid = Grid::uniform_1d(-2.0, 2.0, 33)?;
    let mut rng = crate::rng::stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let v = random_field(&grid, 3.0, &mut rng)?;
        let w = random_field(&grid, 3.0, &mut rng)?;
        let pv = semigroup_apply(&v.clone().into(), &m, tau, alpha, &grid, crate::quadrature::DEFAULT_ORDER)?;
        let pw = semigroup_apply(&w.clone().into(), &m, tau, alpha, &grid, crate::quadrature::DEFAULT_ORDER)?;
        worst = worst.max(pv.sup_distance(&pw) / v.sup_distance(&w));
    }
    Ok(worst)
}

pub fn contraction() -> Result<Vec<VerifyRow>> {
    let s = "contraction";
    let mut rows = Vec::new();
    for tau in [0.01, 0.04] {
        for alpha in [0.0, 0.1] {
            let r = contraction_ratio(tau, alpha, 100, 11)?;
            let bound = (-tau).exp() + 1e-9;
            rows.push(VerifyRow::at_most(s, format!("semigroup Lipschitz ratio (tau={tau}, alpha={alpha})"), r, bound));
        }
    }
    Ok(rows)
}

/// Largest `|Q_k - (V_k + q_k)|` over 50 iterations on the tabular drift
/// chain, plain and Richardson.
pub fn decomposition_deviation(richardson: bool) -> Result<f64> {
    let m = drift_chain(&ChainParams::default())?;
    let v0 = TabularField::from_fn(Grid::uniform_1d(-2.0, 2.0, 33)?, |x| -x[0] * x[0])?;
    decomposition_audit(&m, &v0, 0.01, 0.1, 0.1, 50, richardson)
}

pub fn decomposition() -> Result<Vec<VerifyRow>> {
    let s = "decomposition";
    Ok(vec![
        VerifyRow::at_most(s, "single-critic deviation, plain target", decomposition_deviation(false)?, 1e-10),
        VerifyRow::at_most(s, "single-critic deviation, Richardson target", decomposition_deviation(true)?, 1e-9),
    ])
}

pub const EM_SUBSTEPS: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

/// Root-mean-square terminal error of Euler–Maruyama against the exact OU
/// path driven by the same Brownian motion, one value per coarse substep.
///
/// On each finest interval `h` the pair `(dW, I)` with
/// `I = int_0^h e^{-theta (h - s)} dW_s` is drawn jointly Gaussian; the exact
/// path uses `I` and the coarse schemes sum `dW`.
pub fn em_strong_errors(paths: usize, seed: u64) -> Result<Vec<f64>> {
    let params = OuParams::default();
    let m = ou(&params)?;
    let (theta, sigma) = (params.theta, params.sigma);
    let h = EM_SUBSTEPS[EM_SUBSTEPS.len() - 1];
    let horizon = 1.0;
    let n_fine = (horizon / h).round() as usize;
    let (decay, var_fine) = ou_exact_transition(1.0, theta, sigma, h);
    let var_i = var_fine / (sigma * sigma);
    let cov = (1.0 - decay) / theta;
    // Cholesky of [[h, cov], [cov, var_i]].
    let l11 = h.sqrt();
    let l21 = cov / l11;
    let l22 = (var_i - l21 * l21).max(0.0).sqrt();
    let a0 = m.actions().action(0).to_vec();
    let mut rng = crate::rng::stream(seed, 0);
    let mut sq = vec![0.0; EM_SUBSTEPS.len()];
    for _ in 0..paths {
        let mut dw = Vec::with_capacity(n_fine);
        let mut exact: f64 = 1.0;
        for _ in 0..n_fine {
            let (z1, z2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let w = l11 * z1;
            exact = decay * exact + sigma * (l21 * z1 + l22 * z2);
            dw.push(w);
        }
        for (j, &dt) in EM_SUBSTEPS.iter().enumerate() {
            let stride = (dt / h).round() as usize;
            let mut x = vec![1.0];
            for chunk in dw.chunks(stride) {
                let inc: f64 = chunk.iter().sum();
                x = em_step_with_noise(&m, &x, &a0, dt, &[inc / dt.sqrt()])?;
            }
            sq[j] += (x[0] - exact).powi(2);
        }
    }
    Ok(sq.iter().map(|s| (s / paths as f64).sqrt()).collect())
}

pub fn em_order() -> Result<Vec<VerifyRow>> {
    let errs = em_strong_errors(2000, 5)?;
    let slope = log_log_slope(&EM_SUBSTEPS, &errs);
    Ok(vec![VerifyRow::at_least("em-order", "Euler-Maruyama strong order (OU)", slope, 0.4)])
}

/// `(max |soft value at Boltzmann - soft_aggregate|, max excess of random
/// policies over soft_aggregate)` across random rows.
pub fn kl_identity_measures(rows: usize, policies_per_row: usize, seed: u64) -> (f64, f64) {
    let mut rng = crate::rng::stream(seed, 0);
    let (mut gap, mut excess) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..rows {
        let n = rng.random_range(2..12);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let tot: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / tot).collect();
        let alpha = 10f64.powf(rng.random_range(-2.0..1.0));
        let agg = soft_aggregate(&q, &w, alpha);
        let at_boltzmann = soft_value_of_policy(&q, &w, &boltzmann_policy(&q, &w, alpha), alpha);
        gap = gap.max((at_boltzmann - agg).abs());
        for _ in 0..policies_per_row {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
            let tot: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / tot).collect();
            excess = excess.max(soft_value_of_policy(&q, &w, &p, alpha) - agg);
        }
    }
    (gap, excess)
}

pub fn kl_identity() -> Result<Vec<VerifyRow>> {
    let s = "kl-identity";
    let (gap, excess) = kl_identity_measures(100, 10, 3);
    Ok(vec![
        VerifyRow::at_most(s, "soft value at Boltzmann minus soft aggregate", gap, 1e-10),
        VerifyRow::at_most(s, "max excess of 1000 random policies", excess, 1e-9),
    ])
}

/// Largest `u |q_V - q_W|_inf / |V - W|_inf` over random tabular pairs on the
/// drift chain (grid nodes and cell midpoints, every action).
pub fn lipschitz_q_ratio(u: f64, richardson: bool, pairs: usize, seed: u64) -> Result<f64> {
    let m = drift_chain(&ChainParams::default())?;
    let grid = Grid::uniform_1d(-2.0, 2.0, 33)?;
    let est = QEstimator::new(&QEstimatorConfig::quadrature(u).with_richardson(richardson), 1)?;
    let mut rng = crate::rng::stream(seed, 0);
    let xs: Vec<f64> = (0..2 * grid.len() - 1).map(|i| -2.0 + 4.0 * i as f64 / (2 * grid.len() - 2) as f64).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let v = random_field(&grid, 3.0, &mut rng)?;
        let w = random_field(&grid, 3.0, &mut rng)?;
        let d = v.sup_distance(&w);
        let (vf, wf): (ValueField, ValueField) = (v.into(), w.into());
        for &x in &xs {
            for a in m.actions().actions() {
                let qv = est.estimate(&vf, &m, &[x], a, &mut rng)?;
                let qw = est.estimate(&wf, &m, &[x], a, &mut rng)?;
                worst = worst.max(u * (qv - qw).abs() / d);
            }
        }
    }
    Ok(worst)
}

pub fn lipschitz_q() -> Result<Vec<VerifyRow>> {
    let s = "lipschitz-q";
    let u = 0.1;
    Ok(vec![
        VerifyRow::at_most(s, "plain estimator Lipschitz constant times u", lipschitz_q_ratio(u, false, 100, 9)?, 2.0),
        VerifyRow::at_most(s, "Richardson estimator Lipschitz constant times u", lipschitz_q_ratio(u, true, 100, 9)?, 6.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((log_log_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_suite_lists_available() {
        let e = run_suite("nope").unwrap_err().to_string();
        assert!(e.contains("richardson-slope") && e.contains("all"));
    }
}
