//! Reference solutions that the flow, estimators and agents are judged against.
//!
//! These solvers carry their own Gauss–Hermite nodes (Newton on the Hermite
//! recurrence), their own interpolation weights and their own transition and
//! finite-difference assembly, so a bug in the production kernels cannot
//! silently agree with itself. Only `soft_aggregate` is shared.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::DiffusionModel;
use crate::error::{Error, Result};
use crate::field::{AnalyticField, TabularField};
use crate::grid::Grid;
use crate::hamiltonian::soft_aggregate;

/// Positive root `p` of `p^2 + beta p - 1 = 0` and offset `k = sigma^2 p / beta`
/// for the scalar problem `dX = a dt + sigma dW`, `r = -x^2 - a^2`.
/// The optimal value is `-p x^2 - k` and the optimal action `-p x`.
pub fn lq_riccati(beta: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("Riccati oracle needs beta > 0, got {beta}")));
    }
    let p = 0.5 * (-beta + (beta * beta + 4.0).sqrt());
    Ok((p, sigma * sigma * p / beta))
}

/// `-p x^2 - k` with exact derivatives.
pub fn riccati_field(p: f64, k: f64) -> AnalyticField {
    AnalyticField::new(1, move |x| -p * x[0] * x[0] - k)
        .with_gradient(move |x, g| g[0] = -2.0 * p * x[0])
        .with_hessian(move |_, h| h[0] = -2.0 * p)
}

/// Mean and variance of `X_u` given `X_0 = x` for `dX = -theta X dt + sigma dW`.
pub fn ou_exact_transition(x: f64, theta: f64, sigma: f64, u: f64) -> (f64, f64) {
    let mean = x * (-theta * u).exp();
    let var = sigma * sigma * (-(-2.0 * theta * u).exp_m1()) / (2.0 * theta);
    (mean, var)
}

/// Gauss–Hermite rule for `E[f(Z)]`, `Z ~ N(0,1)`, by Newton iteration on the
/// orthonormal physicists' Hermite recurrence.
pub fn hermite_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Physicists' weight exp(-t^2) -> standard normal: z = sqrt(2) t, w / sqrt(pi).
    let s = std::f64::consts::PI.sqrt();
    let nodes = x.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().map(|v| v / s).collect();
    (nodes, weights)
}

/// Multilinear hat weights of `y` on `grid` (clamped to the box).
fn hat_weights(grid: &Grid, y: &[f64]) -> Vec<(usize, f64)> {
    let axes = grid.axes();
    let mut out = vec![(0usize, 1.0f64)];
    for (k, ax) in axes.iter().enumerate() {
        let h = (ax.hi - ax.lo) / (ax.n - 1) as f64;
        let yk = y[k].clamp(ax.lo, ax.hi);
        let t = (yk - ax.lo) / h;
        let i = (t.floor() as usize).min(ax.n - 2);
        let s = (t - i as f64).clamp(0.0, 1.0);
        let stride: usize = axes[k + 1..].iter().map(|a| a.n).product();
        out = out
            .into_iter()
            .flat_map(|(base, w)| [(base + i * stride, w * (1.0 - s)), (base + (i + 1) * stride, w * s)])
            .filter(|p| p.1 != 0.0)
            .collect();
    }
    out
}

/// Time-discretised model on a grid: for every (node, action), the reward and
/// the one-step Euler–Maruyama transition over `tau` spread onto grid nodes.
#[derive(Debug, Clone)]
pub struct BackupOperator {
    grid: Grid,
    tau: f64,
    gamma: f64,
    weights: Vec<f64>,
    n_actions: usize,
    rewards: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl BackupOperator {
    pub fn new(model: &DiffusionModel, grid: &Grid, tau: f64, gh_order: usize) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {tau}")));
        }
        if gh_order < 3 {
            return Err(Error::Config(format!("Gauss-Hermite order must be >= 3, got {gh_order}")));
        }
        if grid.dim() != model.state_dim() {
            return Err(Error::Shape("grid and model dimensions differ".into()));
        }
        let (z1, w1) = hermite_rule(gh_order);
        let d = model.state_dim();
        let m = model.noise_dim();
        let acts = model.actions();
        let nq = gh_order.pow(m as u32);
        let mut rewards = Vec::with_capacity(grid.len() * acts.len());
        let mut rows = Vec::with_capacity(grid.len() * acts.len());
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        for node in 0..grid.len() {
            let x = grid.node(node);
            for a in acts.actions() {
                rewards.push(model.reward(&x, a));
                model.drift(&x, a, &mut b);
                model.diffusion(&x, a, &mut s);
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for q in 0..nq {
                    let mut rem = q;
                    let mut wq = 1.0;
                    let mut zq = vec![0.0; m];
                    for j in (0..m).rev() {
                        zq[j] = z1[rem % gh_order];
                        wq *= w1[rem % gh_order];
                        rem /= gh_order;
                    }
                    let mut y = x.clone();
                    for i in 0..d {
                        let noise: f64 = (0..m).map(|j| s[i * m + j] * zq[j]).sum();
                        y[i] += b[i] * tau + noise * tau.sqrt();
                    }
                    model.clamp(&mut y);
                    for (j, wj) in hat_weights(grid, &y) {
                        match acc.iter_mut().find(|p| p.0 == j) {
                            Some(p) => p.1 += wq * wj,
                            None => acc.push((j, wq * wj)),
                        }
                    }
                }
                acc.sort_by_key(|p| p.0);
                rows.push(acc);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            tau,
            gamma: (-model.beta() * tau).exp(),
            weights: acts.weights().to_vec(),
            n_actions: acts.len(),
            rewards,
            rows,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `tau r(x,a) + gamma E[V(x')]` for every action at `node`.
    pub fn action_values(&self, v: &[f64], node: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            let k = node * self.n_actions + a;
            let ev: f64 = self.rows[k].iter().map(|&(j, p)| p * v[j]).sum();
            *o = self.tau * self.rewards[k] + self.gamma * ev;
        }
    }

    /// `tau * soft_aggregate(row / tau, alpha)` at every node.
    pub fn apply(&self, v: &[f64], alpha: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_actions];
        (0..self.grid.len())
            .map(|node| {
                self.action_values(v, node, &mut row);
                row.iter_mut().for_each(|r| *r /= self.tau);
                self.tau * soft_aggregate(&row, &self.weights, alpha)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub field: TabularField,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    pub iters: usize,
}

/// Iterate the entropy-regularised one-step backup to its fixed point.
pub fn grid_dp_solve(
    model: &DiffusionModel,
    grid: &Grid,
    tau: f64,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DpSolution> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be > 0, got {tol}")));
    }
    let op = BackupOperator::new(model, grid, tau, crate::quadrature::DEFAULT_ORDER)?;
    let mut v = vec![0.0; grid.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = op.apply(&v, alpha);
        residual = next.iter().zip(&v).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if residual < tol {
            return Ok(DpSolution { field: TabularField::new(grid.clone(), v)?, residual, iters: it });
        }
    }
    Err(Error::NonConvergence { iters: max_iters, residual })
}

/// Sup change, at the coarse nodes, of the DP fixed point when the grid is refined 2x.
pub fn grid_refinement_change(model: &DiffusionModel, grid: &Grid, tau: f64, alpha: f64, tol: f64) -> Result<f64> {
    let coarse = grid_dp_solve(model, grid, tau, alpha, tol, usize::MAX)?;
    let fine = grid_dp_solve(model, &grid.refine(2)?, tau, alpha, tol, usize::MAX)?;
    Ok((0..grid.len())
        .map(|i| (coarse.field.values()[i] - fine.field.eval(&grid.node(i))).abs())
        .fold(0.0, f64::max))
}

/// Greedy (hard-max, lowest index on ties) action index per node of the DP backup.
pub fn greedy_actions(model: &DiffusionModel, sol: &DpSolution, tau: f64) -> Result<Vec<usize>> {
    let op = BackupOperator::new(model, sol.field.grid(), tau, crate::quadrature::DEFAULT_ORDER)?;
    let mut row = vec![0.0; model.actions().len()];
    Ok((0..sol.field.grid().len())
        .map(|node| {
            op.action_values(sol.field.values(), node, &mut row);
            crate::hamiltonian::argmax(&row)
        })
        .collect())
}

/// How a fixed policy's value is discretised for the linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyEvalScheme {
    /// `sum_a pi(a) (r + L^a V - beta V - alpha log(pi/w)) = 0` with central
    /// differences and mirrored boundaries; diagonal diffusion only.
    Generator,
    /// `V = sum_a pi(a) (tau r - tau alpha log(pi/w) + gamma E[V(x')])`.
    Backup { tau: f64 },
}

/// Solve for the value of the node-wise policy `pi[node][action]`.
pub fn policy_eval_linear_solve(
    model: &DiffusionModel,
    grid: &Grid,
    pi: &[Vec<f64>],
    alpha: f64,
    scheme: PolicyEvalScheme,
) -> Result<TabularField> {
    let n = grid.len();
    if pi.len() != n {
        return Err(Error::Shape(format!("policy has {} rows for {} nodes", pi.len(), n)));
    }
    let acts = model.actions();
    let w = acts.weights();
    let na = acts.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    let entropy_term = |p: &[f64]| -> f64 {
        p.iter().zip(w).filter(|(pi, _)| **pi > 0.0).map(|(pi, wi)| pi * (pi / wi).ln()).sum::<f64>() * alpha
    };
    let add = |row: &mut Vec<(usize, f64)>, j: usize, c: f64| match row.iter_mut().find(|p| p.0 == j) {
        Some(p) => p.1 += c,
        None => row.push((j, c)),
    };
    match scheme {
        PolicyEvalScheme::Backup { tau } => {
            let op = BackupOperator::new(model, grid, tau, crate::quadrature::DEFAULT_ORDER)?;
            for node in 0..n {
                add(&mut rows[node], node, 1.0);
                let mut r = 0.0;
                for a in 0..na {
                    let p = pi[node][a];
                    if p == 0.0 {
                        continue;
                    }
                    let k = node * na + a;
                    r += p * op.rewards[k];
                    for &(j, pj) in &op.rows[k] {
                        add(&mut rows[node], j, -op.gamma * p * pj);
                    }
                }
                rhs[node] = tau * (r - entropy_term(&pi[node]));
            }
        }
        PolicyEvalScheme::Generator => {
            let d = model.state_dim();
            let m = model.noise_dim();
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * m];
            for node in 0..n {
                let x = grid.node(node);
                let idx = grid.multi_index(node);
                add(&mut rows[node], node, model.beta());
                let mut r = 0.0;
                for a in 0..na {
                    let p = pi[node][a];
                    if p == 0.0 {
                        continue;
                    }
                    let act = acts.action(a);
                    r += p * model.reward(&x, act);
                    model.drift(&x, act, &mut b);
                    model.diffusion(&x, act, &mut s);
                    for k in 0..d {
                        for l in 0..d {
                            let c: f64 = (0..m).map(|j| s[k * m + j] * s[l * m + j]).sum();
                            if k != l && c != 0.0 {
                                return Err(Error::Config(
                                    "generator scheme supports diagonal diffusion only".into(),
                                ));
                            }
                        }
                        let ax = grid.axes()[k];
                        let h = (ax.hi - ax.lo) / (ax.n - 1) as f64;
                        let stride = grid.stride(k);
                        let i = idx[k];
                        // Mirrored neighbours: index -1 -> 1, n -> n-2.
                        let up = if i + 1 < ax.n { i + 1 } else { ax.n - 2 };
                        let dn = if i > 0 { i - 1 } else { 1 };
                        let jp = node + up * stride - i * stride;
                        let jm = node + dn * stride - i * stride;
                        let diff = 0.5 * (0..m).map(|j| s[k * m + j].powi(2)).sum::<f64>();
                        // -(b D1 + diff D2) moved to the left-hand side.
                        add(&mut rows[node], jp, -p * (b[k] / (2.0 * h) + diff / (h * h)));
                        add(&mut rows[node], jm, -p * (-b[k] / (2.0 * h) + diff / (h * h)));
                        add(&mut rows[node], node, p * 2.0 * diff / (h * h));
                    }
                }
                rhs[node] = r - entropy_term(&pi[node]);
            }
        }
    }
    let values = solve_sparse(&rows, &rhs)?;
    TabularField::new(grid.clone(), values)
}

const DENSE_LIMIT: usize = 2500;

fn solve_sparse(rows: &[Vec<(usize, f64)>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for &(j, c) in row {
                a[(i, j)] += c;
            }
        }
        let b = DVector::from_column_slice(rhs);
        return a
            .lu()
            .solve(&b)
            .map(|v| v.iter().copied().collect())
            .ok_or(Error::NonConvergence { iters: 0, residual: f64::NAN });
    }
    // Gauss–Seidel; both schemes give diagonally dominant systems when beta > 0.
    let mut v = vec![0.0; n];
    for it in 0..200_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let mut diag = 0.0;
            let mut acc = rhs[i];
            for &(j, c) in &rows[i] {
                if j == i {
                    diag += c;
                } else {
                    acc -= c * v[j];
                }
            }
            let new = acc / diag;
            change = change.max((new - v[i]).abs());
            v[i] = new;
        }
        if change < 1e-13 {
            return Ok(v);
        }
        if it == 199_999 {
            return Err(Error::NonConvergence { iters: it + 1, residual: change });
        }
    }
    unreachable!()
}
