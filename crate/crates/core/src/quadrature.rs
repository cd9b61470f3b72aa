//! Gauss–Hermite rules for expectations under a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Rule `E[f(Z)] ~= sum_i w_i f(z_i)` for `Z ~ N(0, I_m)`, tensorised over `m` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    order: usize,
    dim: usize,
    /// Flattened `len() x dim` node coordinates.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub const DEFAULT_ORDER: usize = 7;

/// Probabilists' Hermite nodes/weights by Golub–Welsch: the Jacobi matrix has
/// zero diagonal and off-diagonal `sqrt(k)`.
fn one_dim(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let v = (k as f64).sqrt();
        j[(k - 1, k)] = v;
        j[(k, k - 1)] = v;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise: removes eigen-solver round-off so odd moments vanish exactly.
    let n = pairs.len();
    for i in 0..n / 2 {
        let z = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
        pairs[i] = (-z, w);
        pairs[n - 1 - i] = (z, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect())
}

impl GaussHermite {
    pub fn new(order: usize, dim: usize) -> Result<Self> {
        if order < 3 {
            return Err(Error::Config(format!("Gauss-Hermite order must be >= 3, got {order}")));
        }
        if dim == 0 {
            return Err(Error::Config("Gauss-Hermite dimension must be >= 1".into()));
        }
        let (z1, w1) = one_dim(order);
        let count = order.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        for flat in 0..count {
            let mut rem = flat;
            let mut w = 1.0;
            let start = nodes.len();
            nodes.resize(start + dim, 0.0);
            for k in (0..dim).rev() {
                let i = rem % order;
                rem /= order;
                nodes[start + k] = z1[i];
                w *= w1[i];
            }
            weights.push(w);
        }
        Ok(Self { order, dim, nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.node(i), self.weights[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(n: u32) -> f64 {
        (1..=n).rev().step_by(2).map(|k| k as f64).product()
    }

    #[test]
    fn integrates_normal_moments_up_to_degree_13() {
        let gh = GaussHermite::new(7, 1).unwrap();
        for p in 0..=13u32 {
            let est: f64 = gh.iter().map(|(z, w)| w * z[0].powi(p as i32)).sum();
            let exact = if p % 2 == 1 { 0.0 } else if p == 0 { 1.0 } else { double_factorial(p - 1) };
            assert!((est - exact).abs() <= 1e-9 * exact.max(1.0), "moment {p}: {est} vs {exact}");
        }
    }

    #[test]
    fn tensor_rule_matches_product_moments() {
        let gh = GaussHermite::new(5, 2).unwrap();
        assert_eq!(gh.len(), 25);
        let est: f64 = gh.iter().map(|(z, w)| w * z[0].powi(2) * z[1].powi(4)).sum();
        assert!((est - 3.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_low_order() {
        assert!(matches!(GaussHermite::new(2, 1), Err(Error::Config(_))));
    }
}
