//! Scalar fields over the state space: tabular grids with multilinear
//! interpolation and finite-difference derivatives, or analytic closures.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Stencil used for tabular derivatives at boundary nodes.
///
/// `Reflecting` mirrors the grid across the boundary (ghost node `V[-1] = V[1]`),
/// which gives a zero normal derivative and matches dynamics clamped to the box.
/// `OneSided` shifts the stencil inward (second-order gradient, first-order
/// second derivative), exact for quadratics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    #[default]
    Reflecting,
    OneSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularField {
    grid: Grid,
    values: Vec<f64>,
    #[serde(default)]
    boundary: BoundaryRule,
}

impl TabularField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "grid has {} nodes but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain {
                what: "tabular field value".into(),
                x: grid.node(i),
                a: vec![],
            });
        }
        Ok(Self { grid, values, boundary: BoundaryRule::default() })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n], boundary: BoundaryRule::default() }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|p| f(p)).collect();
        Self::new(grid, values)
    }

    pub fn with_boundary(mut self, rule: BoundaryRule) -> Self {
        self.boundary = rule;
        self
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.boundary
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same grid and boundary rule, new node values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(Self::new(self.grid.clone(), values)?.with_boundary(self.boundary))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &TabularField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Flat index `offset` steps from `flat` along `axis`; the boundary is
    /// mirrored so `-1 -> 1` and `n -> n-2`.
    fn neighbor(&self, flat: usize, axis: usize, i: usize, offset: isize) -> usize {
        let n = self.grid.axes()[axis].n as isize;
        let mut j = i as isize + offset;
        if j < 0 {
            j = -j;
        } else if j >= n {
            j = 2 * (n - 1) - j;
        }
        let stride = self.grid.stride(axis) as isize;
        (flat as isize + (j - i as isize) * stride) as usize
    }

    fn diff1(&self, f: &impl Fn(usize) -> f64, flat: usize, axis: usize, i: usize) -> f64 {
        let ax = self.grid.axes()[axis];
        let h = ax.step();
        let last = ax.n - 1;
        let stride = self.grid.stride(axis);
        let at = |k: usize| f(flat - i * stride + k * stride);
        match (self.boundary, i) {
            (BoundaryRule::OneSided, 0) => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h),
            (BoundaryRule::OneSided, k) if k == last => {
                (3.0 * at(last) - 4.0 * at(last - 1) + at(last - 2)) / (2.0 * h)
            }
            _ => (f(self.neighbor(flat, axis, i, 1)) - f(self.neighbor(flat, axis, i, -1))) / (2.0 * h),
        }
    }

    fn diff2(&self, flat: usize, axis: usize, i: usize) -> f64 {
        let ax = self.grid.axes()[axis];
        let h = ax.step();
        let last = ax.n - 1;
        let stride = self.grid.stride(axis);
        let v = &self.values;
        let at = |k: usize| v[flat - i * stride + k * stride];
        match (self.boundary, i) {
            (BoundaryRule::OneSided, 0) => (at(0) - 2.0 * at(1) + at(2)) / (h * h),
            (BoundaryRule::OneSided, k) if k == last => {
                (at(last) - 2.0 * at(last - 1) + at(last - 2)) / (h * h)
            }
            _ => {
                (v[self.neighbor(flat, axis, i, 1)] - 2.0 * v[flat] + v[self.neighbor(flat, axis, i, -1)])
                    / (h * h)
            }
        }
    }

    /// Finite-difference gradient and Hessian (row-major `d x d`) at node `flat`.
    pub fn node_derivatives(&self, flat: usize, grad: &mut [f64], hess: &mut [f64]) {
        let d = self.grid.dim();
        let idx = self.grid.multi_index(flat);
        let value = |f: usize| self.values[f];
        for k in 0..d {
            grad[k] = self.diff1(&value, flat, k, idx[k]);
            hess[k * d + k] = self.diff2(flat, k, idx[k]);
        }
        // Mixed partials: difference along `l` of the axis-`k` gradient, symmetrised.
        for k in 0..d {
            let gk = |f: usize| self.diff1(&value, f, k, self.grid.multi_index(f)[k]);
            for l in 0..d {
                if l != k {
                    hess[k * d + l] = self.diff1(&gk, flat, l, idx[l]);
                }
            }
        }
        for k in 0..d {
            for l in k + 1..d {
                let m = 0.5 * (hess[k * d + l] + hess[l * d + k]);
                hess[k * d + l] = m;
                hess[l * d + k] = m;
            }
        }
    }

    /// Derivatives at an arbitrary point: exact nodal stencils at nodes,
    /// multilinear interpolation of nodal derivatives elsewhere.
    pub fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.grid.dim();
        let mut st = Vec::with_capacity(1 << d);
        self.grid.stencil(x, &mut st);
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut g = vec![0.0; d];
        let mut hm = vec![0.0; d * d];
        for &(flat, w) in &st {
            self.node_derivatives(flat, &mut g, &mut hm);
            for k in 0..d {
                grad[k] += w * g[k];
            }
            for k in 0..d * d {
                hess[k] += w * hm[k];
            }
        }
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closed-form field, optionally with exact derivatives.
#[derive(Clone)]
pub struct AnalyticField {
    dim: usize,
    value: ScalarFn,
    gradient: Option<VectorFn>,
    hessian: Option<VectorFn>,
    fd_step: Option<f64>,
}

impl fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticField")
            .field("dim", &self.dim)
            .field("exact_gradient", &self.gradient.is_some())
            .field("exact_hessian", &self.hessian.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl AnalyticField {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { dim, value: Arc::new(value), gradient: None, hessian: None, fd_step: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }

    /// Allow central finite differences with step `h` for missing derivatives.
    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = Some(h);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let mut probe = x.to_vec();
        match (&self.gradient, self.fd_step) {
            (Some(g), _) => g(x, grad),
            (None, Some(h)) => {
                for k in 0..d {
                    probe[k] = x[k] + h;
                    let up = self.eval(&probe);
                    probe[k] = x[k] - h;
                    let dn = self.eval(&probe);
                    probe[k] = x[k];
                    grad[k] = (up - dn) / (2.0 * h);
                }
            }
            (None, None) => return Err(Error::Capability("gradient")),
        }
        match (&self.hessian, self.fd_step) {
            (Some(hf), _) => hf(x, hess),
            (None, Some(h)) => {
                let f0 = self.eval(x);
                for k in 0..d {
                    for l in 0..d {
                        hess[k * d + l] = if k == l {
                            probe[k] = x[k] + h;
                            let up = self.eval(&probe);
                            probe[k] = x[k] - h;
                            let dn = self.eval(&probe);
                            probe[k] = x[k];
                            (up - 2.0 * f0 + dn) / (h * h)
                        } else {
                            let mut corner = |sk: f64, sl: f64| {
                                probe[k] = x[k] + sk * h;
                                probe[l] = x[l] + sl * h;
                                let v = self.eval(&probe);
                                probe[k] = x[k];
                                probe[l] = x[l];
                                v
                            };
                            (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                                / (4.0 * h * h)
                        };
                    }
                }
            }
            (None, None) => return Err(Error::Capability("second-derivative")),
        }
        Ok(())
    }
}

/// The `V` of every flow equation.
#[derive(Debug, Clone)]
pub enum ValueField {
    Tabular(TabularField),
    Analytic(AnalyticField),
}

impl ValueField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ValueField::Tabular(t) => t.eval(x),
            ValueField::Analytic(a) => a.eval(x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ValueField::Tabular(t) => t.grid().dim(),
            ValueField::Analytic(a) => a.dim(),
        }
    }

    /// Gradient and row-major Hessian at `x`.
    pub fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Result<()> {
        match self {
            ValueField::Tabular(t) => {
                t.derivatives(x, grad, hess);
                Ok(())
            }
            ValueField::Analytic(a) => a.derivatives(x, grad, hess),
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularField> {
        match self {
            ValueField::Tabular(t) => Some(t),
            ValueField::Analytic(_) => None,
        }
    }
}

impl From<TabularField> for ValueField {
    fn from(t: TabularField) -> Self {
        ValueField::Tabular(t)
    }
}

impl From<AnalyticField> for ValueField {
    fn from(a: AnalyticField) -> Self {
        ValueField::Analytic(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn quad(p: &[f64]) -> f64 {
        1.5 * p[0] * p[0] - 0.7 * p[0] + 0.2
    }

    #[test]
    fn interior_derivatives_exact_on_quadratic() {
        let g = Grid::uniform_1d(-1.0, 1.0, 21).unwrap();
        let f = TabularField::from_fn(g.clone(), quad).unwrap();
        let (mut gr, mut he) = ([0.0], [0.0]);
        for i in 1..20 {
            f.node_derivatives(i, &mut gr, &mut he);
            let x = g.node(i)[0];
            assert!((gr[0] - (3.0 * x - 0.7)).abs() < 1e-10);
            assert!((he[0] - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_sided_boundary_exact_on_quadratic() {
        let g = Grid::uniform_1d(-1.0, 1.0, 11).unwrap();
        let f = TabularField::from_fn(g, quad).unwrap().with_boundary(BoundaryRule::OneSided);
        let (mut gr, mut he) = ([0.0], [0.0]);
        f.node_derivatives(0, &mut gr, &mut he);
        assert!((gr[0] - (-3.0 - 0.7)).abs() < 1e-10);
        assert!((he[0] - 3.0).abs() < 1e-9);
        f.node_derivatives(10, &mut gr, &mut he);
        assert!((gr[0] - (3.0 - 0.7)).abs() < 1e-10);
    }

    #[test]
    fn reflecting_boundary_has_zero_normal_derivative() {
        let g = Grid::uniform_1d(0.0, 1.0, 5).unwrap();
        let f = TabularField::from_fn(g, |p| p[0].powi(3)).unwrap();
        let (mut gr, mut he) = ([0.0], [0.0]);
        f.node_derivatives(4, &mut gr, &mut he);
        assert_eq!(gr[0], 0.0);
        let h = 0.25;
        assert!((he[0] - 2.0 * (0.75f64.powi(3) - 1.0) / (h * h)).abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_converges_at_second_order() {
        // Smooth non-polynomial field: halving h should cut the error ~4x.
        let err = |n: usize| {
            let g = Grid::uniform_1d(-1.0, 1.0, n).unwrap();
            let f = TabularField::from_fn(g.clone(), |p| p[0].sin()).unwrap();
            let (mut gr, mut he) = ([0.0], [0.0]);
            let mut e: f64 = 0.0;
            for i in 1..n - 1 {
                f.node_derivatives(i, &mut gr, &mut he);
                e = e.max((gr[0] - g.node(i)[0].cos()).abs());
            }
            e
        };
        let ratio = err(21) / err(41);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn mixed_partials_on_bilinear_field() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 9).unwrap(), Axis::new(-1.0, 1.0, 9).unwrap()]).unwrap();
        let f = TabularField::from_fn(g.clone(), |p| 2.0 * p[0] * p[1] + p[1] * p[1]).unwrap();
        let mut gr = [0.0; 2];
        let mut he = [0.0; 4];
        let flat = g.flat_index(&[3, 5]);
        f.node_derivatives(flat, &mut gr, &mut he);
        let x = g.node(flat);
        assert!((gr[0] - 2.0 * x[1]).abs() < 1e-10);
        assert!((gr[1] - (2.0 * x[0] + 2.0 * x[1])).abs() < 1e-10);
        assert!((he[1] - 2.0).abs() < 1e-9 && (he[2] - 2.0).abs() < 1e-9);
        assert!((he[3] - 2.0).abs() < 1e-9 && he[0].abs() < 1e-9);
    }

    #[test]
    fn analytic_without_derivatives_is_a_capability_error() {
        let a = AnalyticField::new(1, |p| p[0]);
        let (mut g, mut h) = ([0.0], [0.0]);
        assert_eq!(a.derivatives(&[0.0], &mut g, &mut h), Err(Error::Capability("gradient")));
        let a = AnalyticField::new(1, |p| p[0]).with_gradient(|_, g| g[0] = 1.0);
        assert_eq!(a.derivatives(&[0.0], &mut g, &mut h), Err(Error::Capability("second-derivative")));
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = Grid::uniform_1d(0.0, 1.0, 3).unwrap();
        assert!(TabularField::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }
}
