//! Model-based value flows: the Picard–Hamiltonian step `V + tau H(V)`, the
//! one-step dynamic-programming backup used as its reference, the
//! random-holding-time averaged step, and fixed-policy evaluation.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiffusionModel, HoldingTimeSpec};
use crate::error::{Error, Result};
use crate::field::{TabularField, ValueField};
use crate::grid::Grid;
use crate::hamiltonian::{exact_q_row_at_node, hamiltonian_at_node, soft_aggregate};
use crate::q_estimation::{QEstimator, QEstimatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub tau: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_trace")]
    pub trace: bool,
}

fn default_max_iters() -> usize {
    100_000
}

fn default_stop_tol() -> f64 {
    1e-8
}

fn default_trace() -> bool {
    true
}

impl FlowConfig {
    pub fn new(tau: f64, alpha: f64) -> Self {
        Self { tau, alpha, max_iters: default_max_iters(), stop_tol: default_stop_tol(), trace: true }
    }

    pub fn with_stop_tol(mut self, tol: f64) -> Self {
        self.stop_tol = tol;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    /// `tau = 0` is allowed for single steps (identity) but not for iteration.
    pub fn validate_step(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_step()?;
        if self.tau == 0.0 {
            return Err(Error::Config("tau must be > 0".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Config(format!("stop_tol must be > 0, got {}", self.stop_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub sup_diff: f64,
    pub sup_err_vs_oracle: Option<f64>,
    pub q_err: Option<f64>,
    pub wall_ms: f64,
}

/// Estimator settings attached to traces of discretized iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTag {
    pub u: f64,
    pub mode: String,
    pub richardson: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub iters: usize,
    pub converged: bool,
    pub estimator: Option<EstimatorTag>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ConvergenceTrace {
    pub fn oracle_errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.sup_err_vs_oracle).collect()
    }

    /// CSV with columns `iter,sup_diff,sup_err_vs_oracle,wall_ms` plus
    /// `q_err,u,mode,richardson` for discretized runs. Wall time is written
    /// only when `with_wall_time` is set, so traces can be compared byte for byte.
    pub fn write_csv<W: Write>(&self, w: W, with_wall_time: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["iter", "sup_diff", "sup_err_vs_oracle", "wall_ms"];
        if self.estimator.is_some() {
            header.extend(["q_err", "u", "mode", "richardson"]);
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.iter.to_string(),
                format!("{:e}", r.sup_diff),
                opt(r.sup_err_vs_oracle),
                if with_wall_time { format!("{:.3}", r.wall_ms) } else { String::new() },
            ];
            if let Some(e) = &self.estimator {
                rec.extend([opt(r.q_err), e.u.to_string(), e.mode.clone(), e.richardson.to_string()]);
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares geometric rate of the decay of `errors` toward their final
/// value, fitted while the excess is within two decades of its start.
/// `None` if fewer than three usable points.
pub fn fit_geometric_rate(errors: &[f64]) -> Option<f64> {
    let floor = *errors.last()?;
    let excess: Vec<f64> = errors.iter().map(|e| e - floor).collect();
    let e0 = excess.first().copied().filter(|e| *e > 0.0)?;
    let pts: Vec<(f64, f64)> = excess
        .iter()
        .enumerate()
        .take_while(|(_, e)| **e >= 1e-2 * e0)
        .map(|(k, e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// Max over the nodes of `field` of `|field - oracle|`, the oracle evaluated
/// (interpolated if needed) at those nodes.
pub fn sup_error_at_nodes(field: &TabularField, oracle: &ValueField) -> f64 {
    let g = field.grid();
    (0..g.len())
        .map(|i| (field.values()[i] - oracle.eval(&g.node(i))).abs())
        .fold(0.0, f64::max)
}

/// Shared iteration driver: repeats `step` until the sup change drops below
/// `stop_tol * tau` or `max_iters` is hit, guarding against divergence.
pub(crate) fn run_flow<F>(
    v0: &TabularField,
    model: &DiffusionModel,
    cfg: &FlowConfig,
    oracle: Option<&ValueField>,
    mut step: F,
) -> Result<(TabularField, ConvergenceTrace)>
where
    F: FnMut(&TabularField, usize) -> Result<(TabularField, Option<f64>)>,
{
    cfg.validate()?;
    let guard = 10.0 * (model.reward_sup_estimate()? / model.beta() + v0.sup_norm());
    let start = Instant::now();
    let mut trace = ConvergenceTrace::default();
    let mut v = v0.clone();
    if cfg.trace {
        trace.rows.push(TraceRow {
            iter: 0,
            sup_diff: f64::NAN,
            sup_err_vs_oracle: oracle.map(|o| sup_error_at_nodes(&v, o)),
            q_err: None,
            wall_ms: 0.0,
        });
    }
    for k in 1..=cfg.max_iters {
        let (next, q_err) = step(&v, k)?;
        let diff = next.sup_distance(&v);
        let norm = next.sup_norm();
        if !(norm <= guard) {
            return Err(Error::Divergence { iter: k, norm, guard });
        }
        v = next;
        trace.iters = k;
        if cfg.trace {
            trace.rows.push(TraceRow {
                iter: k,
                sup_diff: diff,
                sup_err_vs_oracle: oracle.map(|o| sup_error_at_nodes(&v, o)),
                q_err,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        if diff < cfg.stop_tol * cfg.tau {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("flow stopped at max_iters={} before reaching stop_tol", cfg.max_iters);
    }
    Ok((v, trace))
}

/// `V + tau * H(V)` at every node.
pub fn picard_step(v: &TabularField, model: &DiffusionModel, cfg: &FlowConfig) -> Result<TabularField> {
    cfg.validate_step()?;
    let values = (0..v.grid().len())
        .into_par_iter()
        .map(|i| Ok(v.values()[i] + cfg.tau * hamiltonian_at_node(model, v, i, cfg.alpha)?))
        .collect::<Result<Vec<_>>>()?;
    v.with_values(values)
}

/// Iterate [`picard_step`] from `v0`; the trace records the sup distance to
/// `oracle` at each iteration when one is given.
pub fn picard_iterate(
    v0: &TabularField,
    model: &DiffusionModel,
    cfg: &FlowConfig,
    oracle: Option<&ValueField>,
) -> Result<(TabularField, ConvergenceTrace)> {
    run_flow(v0, model, cfg, oracle, |v, _| Ok((picard_step(v, model, cfg)?, None)))
}

/// One-step backup `tau * soft_aggregate((tau r + e^{-beta tau} E[V(x')]) / tau, alpha)`
/// at the nodes of `grid`, with `E` by Gauss–Hermite over the Euler–Maruyama Gaussian.
pub fn semigroup_apply(
    v: &ValueField,
    model: &DiffusionModel,
    tau: f64,
    alpha: f64,
    grid: &Grid,
    gh_order: usize,
) -> Result<TabularField> {
    let mut qcfg = QEstimatorConfig::quadrature(tau);
    qcfg.gh_order = gh_order;
    let est = QEstimator::new(&qcfg, model.noise_dim())?;
    let gamma = (-model.beta() * tau).exp();
    let acts = model.actions();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let row = acts
                .actions()
                .iter()
                .map(|a| Ok((tau * model.reward(&x, a) + gamma * est.quadrature_expectation(v, model, &x, a, tau)?) / tau))
                .collect::<Result<Vec<_>>>()?;
            Ok(tau * soft_aggregate(&row, acts.weights(), alpha))
        })
        .collect::<Result<Vec<_>>>()?;
    TabularField::new(grid.clone(), values)
}

/// Discrete holding-time law `(u_j, w_j)` from a spec: `points` midpoint-rule
/// atoms per bucket, each weighted by its bucket fraction.
pub fn holding_atoms(spec: &HoldingTimeSpec, points: usize) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let buckets = [(spec.fractions[0], spec.small_range), (spec.fractions[1], spec.large_range), (spec.fractions[2], spec.avg_range)];
    for (p, [lo, hi]) in buckets {
        if p == 0.0 {
            continue;
        }
        let n = if hi > lo { points.max(1) } else { 1 };
        for k in 0..n {
            let u = lo + (k as f64 + 0.5) * (hi - lo) / n as f64;
            match atoms.iter_mut().find(|a| a.0 == u) {
                Some(a) => a.1 += p / n as f64,
                None => atoms.push((u, p / n as f64)),
            }
        }
    }
    atoms
}

fn check_atoms(atoms: &[(f64, f64)]) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::Config("holding-time law has no atoms".into()));
    }
    if let Some(a) = atoms.iter().find(|a| !(a.0 > 0.0)) {
        return Err(Error::Config(format!("holding time atoms must be > 0, got {}", a.0)));
    }
    if atoms.iter().any(|a| !(a.1 >= 0.0)) {
        return Err(Error::Config("holding time weights must be nonnegative".into()));
    }
    let s: f64 = atoms.iter().map(|a| a.1).sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("holding time weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// `V + tau * sum_j w_j H_{u_j}(V)` with model-based discretized Hamiltonians.
/// `base` supplies everything but `u` (mode, Richardson flag, quadrature order).
pub fn random_time_picard_step(
    v: &TabularField,
    model: &DiffusionModel,
    cfg: &FlowConfig,
    atoms: &[(f64, f64)],
    base: &QEstimatorConfig,
) -> Result<TabularField> {
    cfg.validate_step()?;
    check_atoms(atoms)?;
    let ests = atoms
        .iter()
        .map(|(u, _)| QEstimator::new(&base.with_u(*u), model.noise_dim()))
        .collect::<Result<Vec<_>>>()?;
    let field = ValueField::Tabular(v.clone());
    let g = v.grid();
    let values = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.node(i);
            // Only reached by the simulation fallback of long horizons.
            let mut rng = crate::rng::stream(0, i as u64);
            let mut h = 0.0;
            for (est, (_, w)) in ests.iter().zip(atoms) {
                h += w * est.discretized_hamiltonian(&field, model, &x, cfg.alpha, &mut rng)?;
            }
            Ok(v.values()[i] + cfg.tau * h)
        })
        .collect::<Result<Vec<_>>>()?;
    v.with_values(values)
}

pub fn random_time_picard_iterate(
    v0: &TabularField,
    model: &DiffusionModel,
    cfg: &FlowConfig,
    atoms: &[(f64, f64)],
    base: &QEstimatorConfig,
    oracle: Option<&ValueField>,
) -> Result<(TabularField, ConvergenceTrace)> {
    check_atoms(atoms)?;
    let u_min = atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    if cfg.tau > u_min {
        log::warn!("tau/u = {:.3} exceeds 1 for the smallest holding time; the iteration may be unstable", cfg.tau / u_min);
    }
    run_flow(v0, model, cfg, oracle, |v, _| Ok((random_time_picard_step(v, model, cfg, atoms, base)?, None)))
}

/// `V + tau * E_pi[q(x,a) - alpha log(pi(a|x) / w_a)]` with exact q and the
/// node-wise policy `pi[node][action]`.
pub fn policy_eval_step(v: &TabularField, model: &DiffusionModel, pi: &[Vec<f64>], cfg: &FlowConfig) -> Result<TabularField> {
    cfg.validate_step()?;
    if pi.len() != v.grid().len() {
        return Err(Error::Shape(format!("policy has {} rows for {} nodes", pi.len(), v.grid().len())));
    }
    let w = model.actions().weights();
    let values = (0..v.grid().len())
        .into_par_iter()
        .map(|i| {
            let row = exact_q_row_at_node(model, v, i)?;
            let drift: f64 = row
                .q
                .iter()
                .zip(&pi[i])
                .zip(w)
                .filter(|((_, p), _)| **p > 0.0)
                .map(|((q, p), wi)| p * (q - cfg.alpha * (p / wi).ln()))
                .sum();
            Ok(v.values()[i] + cfg.tau * drift)
        })
        .collect::<Result<Vec<_>>>()?;
    v.with_values(values)
}

pub fn policy_eval_iterate(
    v0: &TabularField,
    model: &DiffusionModel,
    pi: &[Vec<f64>],
    cfg: &FlowConfig,
    oracle: Option<&ValueField>,
) -> Result<(TabularField, ConvergenceTrace)> {
    run_flow(v0, model, cfg, oracle, |v, _| Ok((policy_eval_step(v, model, pi, cfg)?, None)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{drift_chain, lq1d, ChainParams, LqParams};

    #[test]
    fn zero_tau_is_identity() {
        let m = drift_chain(&ChainParams::default()).unwrap();
        let g = Grid::uniform_1d(-2.0, 2.0, 17).unwrap();
        let v = TabularField::from_fn(g, |x| (x[0] * 1.3).sin()).unwrap();
        let cfg = FlowConfig::new(0.0, 0.2);
        assert_eq!(picard_step(&v, &m, &cfg).unwrap(), v);
        assert_eq!(policy_eval_step(&v, &m, &vec![vec![1.0 / 3.0; 3]; 17], &cfg).unwrap(), v);
        let atoms = [(0.05, 0.5), (0.1, 0.5)];
        assert_eq!(random_time_picard_step(&v, &m, &cfg, &atoms, &QEstimatorConfig::quadrature(0.1)).unwrap(), v);
    }

    #[test]
    fn first_step_from_zero_is_tau_times_aggregated_reward() {
        let m = lq1d(&LqParams::default()).unwrap();
        let g = Grid::uniform_1d(-3.0, 3.0, 13).unwrap();
        let v = TabularField::constant(g.clone(), 0.0);
        for alpha in [0.0, 0.5] {
            let cfg = FlowConfig::new(0.01, alpha);
            let next = picard_step(&v, &m, &cfg).unwrap();
            for i in 0..g.len() {
                let x = g.node(i);
                let r: Vec<f64> = m.actions().actions().iter().map(|a| m.reward(&x, a)).collect();
                let expect = 0.01 * soft_aggregate(&r, m.actions().weights(), alpha);
                assert!((next.values()[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn semigroup_of_constant_field() {
        let m = drift_chain(&ChainParams { action_cost: 0.0, ..Default::default() }).unwrap();
        let zero_reward = DiffusionModel::new(
            "z",
            1,
            1.0,
            m.bounds().to_vec(),
            m.actions().clone(),
            std::sync::Arc::new(crate::dynamics::FnDynamics::new(|_, a, b| b[0] = a[0], |_, _, s| s[0] = 0.5, |_, _| 0.0)),
        )
        .unwrap();
        let g = Grid::uniform_1d(-2.0, 2.0, 9).unwrap();
        let v: ValueField = TabularField::constant(g.clone(), 3.0).into();
        for alpha in [0.0, 0.7] {
            let out = semigroup_apply(&v, &zero_reward, 0.04, alpha, &g, 7).unwrap();
            // Weights sum to one, so the entropy constant tau*alpha*log(sum w) vanishes.
            let expect = (-0.04f64).exp() * 3.0;
            assert!(out.values().iter().all(|x| (x - expect).abs() < 1e-12));
        }
        assert!(matches!(semigroup_apply(&v, &zero_reward, 0.04, 0.0, &g, 2), Err(Error::Config(_))));
    }

    #[test]
    fn atoms_from_degenerate_spec() {
        let spec = HoldingTimeSpec::fixed(0.1).unwrap();
        assert_eq!(holding_atoms(&spec, 4), vec![(0.1, 1.0)]);
        let cheetah = holding_atoms(&HoldingTimeSpec::cheetah(), 3);
        assert_eq!(cheetah.len(), 9);
        assert!((cheetah.iter().map(|a| a.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_atoms() {
        let m = drift_chain(&ChainParams::default()).unwrap();
        let g = Grid::uniform_1d(-2.0, 2.0, 9).unwrap();
        let v = TabularField::constant(g, 0.0);
        let r = random_time_picard_step(&v, &m, &FlowConfig::new(0.01, 0.0), &[(0.0, 1.0)], &QEstimatorConfig::quadrature(0.1));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn geometric_rate_fit_recovers_known_rate() {
        let errs: Vec<f64> = (0..200).map(|k| 0.9f64.powi(k) + 0.01).collect();
        let rho = fit_geometric_rate(&errs).unwrap();
        assert!((rho - 0.9).abs() < 1e-3, "{rho}");
    }

    #[test]
    fn trace_csv_has_expected_columns() {
        let trace = ConvergenceTrace {
            rows: vec![TraceRow { iter: 1, sup_diff: 0.5, sup_err_vs_oracle: None, q_err: None, wall_ms: 3.0 }],
            iters: 1,
            converged: false,
            estimator: Some(EstimatorTag { u: 0.1, mode: "model-quadrature".into(), richardson: true }),
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, false).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "iter,sup_diff,sup_err_vs_oracle,wall_ms,q_err,u,mode,richardson\n1,5e-1,,,,0.1,model-quadrature,true\n");
    }
}
