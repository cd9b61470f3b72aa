//! Tensor-product grids over a box and multilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniformly spaced axis `lo, lo + h, ..., hi` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Config(format!("axis bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if n < 3 {
            return Err(Error::Config(format!("axis needs at least 3 nodes, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    /// Cell index `i` and local coordinate `s in [0,1]` with `y = node(i) + s*h`.
    /// Points outside the axis are clamped onto it.
    #[inline]
    fn locate(&self, y: f64) -> (usize, f64) {
        let h = self.step();
        let t = ((y - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
        let mut i = t.floor() as usize;
        if i >= self.n - 1 {
            i = self.n - 2;
        }
        (i, t - i as f64)
    }
}

/// Row-major tensor grid; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lo, hi, n)?])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid with `(n-1)*factor + 1` nodes per axis; contains every original node.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be >= 1".into()));
        }
        let axes = self
            .axes
            .iter()
            .map(|a| Axis::new(a.lo, a.hi, (a.n - 1) * factor + 1))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, ax) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % ax.n;
            flat /= ax.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (k, ax) in self.axes.iter().enumerate() {
            flat = flat * ax.n + idx[k];
        }
        flat
    }

    /// Row-major stride of axis `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(|a| a.n).product()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        idx.iter().zip(&self.axes).map(|(&i, a)| a.node(i)).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Multilinear interpolation stencil at `y`: up to `2^d` `(flat, weight)` pairs,
    /// weights nonnegative and summing to one. Off-box points are clamped.
    pub fn stencil(&self, y: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        for (k, ax) in self.axes.iter().enumerate() {
            let (i, s) = ax.locate(y[k]);
            let stride = self.stride(k);
            let len = out.len();
            for j in 0..len {
                let (base, w) = out[j];
                out[j] = (base + i * stride, w * (1.0 - s));
                if s > 0.0 {
                    out.push((base + (i + 1) * stride, w * s));
                }
            }
        }
    }

    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        // 1-D fast path; the general path allocates a stencil.
        if self.axes.len() == 1 {
            let (i, s) = self.axes[0].locate(y[0]);
            return if s > 0.0 {
                values[i] * (1.0 - s) + values[i + 1] * s
            } else {
                values[i]
            };
        }
        let mut st = Vec::with_capacity(1 << self.dim());
        self.stencil(y, &mut st);
        st.iter().map(|&(j, w)| w * values[j]).sum()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(&self.axes).all(|(&v, a)| v >= a.lo && v <= a.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_at_nodes_and_on_affine_fields() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 5).unwrap(), Axis::new(0.0, 2.0, 4).unwrap()]).unwrap();
        let f = |p: &[f64]| 3.0 * p[0] - 0.5 * p[1] + 1.0;
        let vals: Vec<f64> = g.nodes().iter().map(|p| f(p)).collect();
        for (i, p) in g.nodes().iter().enumerate() {
            assert_eq!(g.interpolate(&vals, p), vals[i]);
        }
        let y = [0.37, 1.21];
        assert!((g.interpolate(&vals, &y) - f(&y)).abs() < 1e-12);
    }

    #[test]
    fn stencil_weights_form_a_partition_of_unity() {
        let g = Grid::new(vec![Axis::new(0.0, 1.0, 7).unwrap(); 3]).unwrap();
        let mut st = Vec::new();
        g.stencil(&[0.31, 0.99, 0.5], &mut st);
        let s: f64 = st.iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(st.iter().all(|p| p.1 >= 0.0));
    }

    #[test]
    fn off_box_points_clamp() {
        let g = Grid::uniform_1d(0.0, 1.0, 3).unwrap();
        let v = [1.0, 2.0, 5.0];
        assert_eq!(g.interpolate(&v, &[-4.0]), 1.0);
        assert_eq!(g.interpolate(&v, &[9.0]), 5.0);
    }

    #[test]
    fn refine_keeps_original_nodes() {
        let g = Grid::uniform_1d(-2.0, 2.0, 5).unwrap();
        let f = g.refine(4).unwrap();
        assert_eq!(f.len(), 17);
        for i in 0..5 {
            assert!((g.node(i)[0] - f.node(4 * i)[0]).abs() < 1e-15);
        }
    }
}
