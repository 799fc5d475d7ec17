//! Uniform tensor grids on `[0, K]^n` and the flat torus, plus positive
//! sampled densities on them.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Cube,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    side: f64,
    res: usize,
    topology: Topology,
}

impl Grid {
    pub fn new(dim: usize, side: f64, res: usize, topology: Topology) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(alloc::format!("dim {dim} outside 1..={MAX_DIM}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidGrid(alloc::format!("side {side} must be positive")));
        }
        if res < 3 {
            return Err(Error::InvalidGrid(alloc::format!("res {res} must be at least 3")));
        }
        if res.checked_pow(dim as u32).is_none_or(|n| n > 1 << 28) {
            return Err(Error::InvalidGrid(alloc::format!("res^dim too large ({res}^{dim})")));
        }
        Ok(Grid { dim, side, res, topology })
    }

    pub fn cube(dim: usize, side: f64, res: usize) -> Result<Self> {
        Self::new(dim, side, res, Topology::Cube)
    }

    pub fn torus(dim: usize, side: f64, res: usize) -> Result<Self> {
        Self::new(dim, side, res, Topology::Torus)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn side(&self) -> f64 {
        self.side
    }
    pub fn res(&self) -> usize {
        self.res
    }
    pub fn topology(&self) -> Topology {
        self.topology
    }
    pub fn is_torus(&self) -> bool {
        self.topology == Topology::Torus
    }

    pub fn spacing(&self) -> f64 {
        match self.topology {
            Topology::Cube => self.side / (self.res - 1) as f64,
            Topology::Torus => self.side / self.res as f64,
        }
    }

    /// Number of nodes, `res^dim`.
    pub fn len(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat-index stride of `axis` (last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.res.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.res + i)
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.dim).rev() {
            out[d] = flat % self.res;
            flat /= self.res;
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut m = vec![0; self.dim];
        self.multi_index(flat, &mut m);
        m.iter().map(|&i| self.coord(i)).collect()
    }

    /// 1D quadrature weight of node `i` (trapezoid on the cube).
    pub fn weight_1d(&self, i: usize) -> f64 {
        let h = self.spacing();
        match self.topology {
            Topology::Cube if i == 0 || i == self.res - 1 => 0.5 * h,
            _ => h,
        }
    }

    pub fn weight(&self, flat: usize) -> f64 {
        let mut w = 1.0;
        let mut rest = flat;
        for _ in 0..self.dim {
            w *= self.weight_1d(rest % self.res);
            rest /= self.res;
        }
        w
    }

    pub fn volume(&self) -> f64 {
        libm::pow(self.side, self.dim as f64)
    }

    /// Wraps a torus coordinate into `[0, K)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let k = self.side;
        let mut y = x - k * libm::floor(x / k);
        if y >= k {
            y -= k;
        }
        y
    }

    /// Per-axis interpolation stencil: lower node, upper node, fraction.
    fn locate(&self, x: f64) -> Option<(usize, usize, f64)> {
        let h = self.spacing();
        match self.topology {
            Topology::Cube => {
                let tol = 1e-12 * self.side;
                if !(x >= -tol && x <= self.side + tol) {
                    return None;
                }
                let x = x.clamp(0.0, self.side);
                let mut i = libm::floor(x / h) as usize;
                if i >= self.res - 1 {
                    i = self.res - 2;
                }
                let t = ((x - i as f64 * h) / h).clamp(0.0, 1.0);
                Some((i, i + 1, t))
            }
            Topology::Torus => {
                if !x.is_finite() {
                    return None;
                }
                let y = self.wrap(x);
                let mut i = libm::floor(y / h) as usize;
                if i >= self.res {
                    i = self.res - 1;
                }
                let t = ((y - i as f64 * h) / h).clamp(0.0, 1.0);
                Some((i, (i + 1) % self.res, t))
            }
        }
    }

    /// Multilinear interpolation of node values at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        debug_assert_eq!(values.len(), self.len());
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(alloc::format!(
                "point of dim {} on a grid of dim {}",
                x.len(),
                self.dim
            )));
        }
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let mut t = [0.0f64; MAX_DIM];
        for d in 0..self.dim {
            let (a, b, s) = self.locate(x[d]).ok_or_else(|| Error::Domain { point: x.to_vec() })?;
            lo[d] = a;
            hi[d] = b;
            t[d] = s;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for d in 0..self.dim {
                let up = (corner >> (self.dim - 1 - d)) & 1 == 1;
                let i = if up { hi[d] } else { lo[d] };
                w *= if up { t[d] } else { 1.0 - t[d] };
                idx = idx * self.res + i;
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        Ok(acc)
    }

    /// Periodic cubic-convolution interpolation (`C¹`, third order); torus only.
    pub fn interpolate_cubic(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        debug_assert_eq!(values.len(), self.len());
        if self.topology != Topology::Torus {
            return Err(Error::InvalidGrid("cubic interpolation needs periodic data".into()));
        }
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(alloc::format!("point of dim {} on a grid of dim {}", x.len(), self.dim)));
        }
        let r = self.res;
        let h = self.spacing();
        let mut base = [0usize; MAX_DIM];
        let mut w = [[0.0f64; 4]; MAX_DIM];
        for d in 0..self.dim {
            if !x[d].is_finite() {
                return Err(Error::Domain { point: x.to_vec() });
            }
            let y = self.wrap(x[d]) / h;
            let i = (libm::floor(y) as usize).min(r - 1);
            let t = y - i as f64;
            base[d] = i + r - 1;
            w[d] = keys_weights(t);
        }
        let mut acc = 0.0;
        for tap in 0..(1usize << (2 * self.dim)) {
            let mut wt = 1.0;
            let mut idx = 0;
            for d in 0..self.dim {
                let o = (tap >> (2 * (self.dim - 1 - d))) & 3;
                wt *= w[d][o];
                idx = idx * r + (base[d] + o) % r;
            }
            acc += wt * values[idx];
        }
        Ok(acc)
    }

    /// Tensor quadrature of node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(i, v)| self.weight(i) * v).sum()
    }
}

/// Keys cubic-convolution weights (`a = −1/2`) for nodes `−1, 0, 1, 2` at offset `t`.
fn keys_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// A strictly positive sampled density.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidDensity(alloc::format!("value {v} at node {i} is not positive")));
        }
        Ok(GridDensity { grid, values })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.grid.interpolate(&self.values, x)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    /// Fiberwise trapezoid antiderivatives along `axis`.
    pub fn cumulative(&self, axis: usize) -> Result<CumulativeField> {
        if axis >= self.grid.dim() {
            return Err(Error::InvalidParameter(alloc::format!("axis {axis} out of range")));
        }
        let g = self.grid;
        let r = g.res();
        let heights = if g.is_torus() { r + 1 } else { r };
        let stride = g.stride(axis);
        let fibers = g.len() / r;
        let h = g.spacing();
        let mut table = vec![0.0; fibers * heights];
        for fib in 0..fibers {
            let base = (fib / stride) * stride * r + fib % stride;
            let row = &mut table[fib * heights..(fib + 1) * heights];
            for k in 1..heights {
                let a = self.values[base + (k - 1) * stride];
                let b = self.values[base + (k % r) * stride];
                row[k] = row[k - 1] + 0.5 * h * (a + b);
            }
        }
        Ok(CumulativeField { grid: g, axis, heights, table })
    }

    /// Largest adjacent-node difference quotient (wrapping on the torus).
    pub fn modulus_of_continuity(&self) -> f64 {
        let g = self.grid;
        let r = g.res();
        let h = g.spacing();
        let mut m = vec![0; g.dim()];
        let mut best = 0.0f64;
        for i in 0..g.len() {
            g.multi_index(i, &mut m);
            for d in 0..g.dim() {
                let j = if m[d] + 1 < r {
                    i + g.stride(d)
                } else if g.is_torus() {
                    i + g.stride(d) - r * g.stride(d)
                } else {
                    continue;
                };
                best = best.max(libm::fabs(self.values[j] - self.values[i]) / h);
            }
        }
        best
    }
}

/// Cumulative trapezoid integrals of every fiber along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeField {
    grid: Grid,
    axis: usize,
    heights: usize,
    table: Vec<f64>,
}

impl CumulativeField {
    pub fn axis(&self) -> usize {
        self.axis
    }

    /// Number of stored heights per fiber (`res`, or `res + 1` on the torus).
    pub fn heights(&self) -> usize {
        self.heights
    }

    /// Fiber table; `fiber` enumerates the remaining axes in row-major order.
    pub fn fiber(&self, fiber: usize) -> &[f64] {
        &self.table[fiber * self.heights..(fiber + 1) * self.heights]
    }

    pub fn fiber_count(&self) -> usize {
        self.table.len() / self.heights
    }

    /// Fiber index of a node multi-index (its `axis` entry is ignored).
    pub fn fiber_of(&self, multi: &[usize]) -> usize {
        let r = self.grid.res();
        multi
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != self.axis)
            .fold(0, |acc, (_, &i)| acc * r + i)
    }

    /// Linear interpolation of the table at height `a` in `[0, K]`.
    pub fn at(&self, fiber: usize, a: f64) -> f64 {
        let row = self.fiber(fiber);
        let h = self.grid.spacing();
        let top = (self.heights - 1) as f64 * h;
        let a = a.clamp(0.0, top);
        let mut i = libm::floor(a / h) as usize;
        if i >= self.heights - 1 {
            i = self.heights - 2;
        }
        let t = (a - i as f64 * h) / h;
        row[i] + t * (row[i + 1] - row[i])
    }

    /// Node values of the fiber totals, as a field over the remaining axes.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.fiber_count()).map(|f| self.fiber(f)[self.heights - 1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mass_examples() {
        let g = Grid::cube(2, 1.0, 33).unwrap();
        assert_eq!(GridDensity::constant(g, 1.0).unwrap().mass(), 1.0);
        let g1 = Grid::cube(1, 1.0, 4097).unwrap();
        let d = GridDensity::from_fn(g1, |x| 0.5 + x[0]).unwrap();
        assert!((d.mass() - 1.0).abs() <= 1e-9);
        let g3 = Grid::cube(3, 0.5, 9).unwrap();
        let d = GridDensity::constant(g3, 3.0).unwrap();
        assert!((d.mass() - 3.0 * 0.125).abs() <= 1e-12);
    }

    #[test]
    fn torus_weights_are_uniform() {
        let g = Grid::torus(1, 1.0, 4).unwrap();
        for i in 0..4 {
            assert_eq!(g.weight(i), 0.25);
        }
    }

    #[test]
    fn eval_examples() {
        let g = Grid::cube(1, 1.0, 3).unwrap();
        let d = GridDensity::new(g, vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(d.eval(&[0.25]).unwrap(), 2.0);
        assert_eq!(d.eval(&[1.0]).unwrap(), 2.0);
        assert!(matches!(d.eval(&[1.5]), Err(Error::Domain { .. })));
        let c = GridDensity::constant(Grid::cube(2, 2.0, 5).unwrap(), 5.0).unwrap();
        assert_eq!(c.eval(&[0.3, 1.7]).unwrap(), 5.0);
    }

    #[test]
    fn cubic_interpolation_is_third_order() {
        let err = |r: usize| {
            let g = Grid::torus(2, 1.0, r).unwrap();
            let f = |x: &[f64]| libm::sin(2.0 * core::f64::consts::PI * x[0]) * libm::cos(2.0 * core::f64::consts::PI * x[1]);
            let v: Vec<f64> = (0..g.len()).map(|i| f(&g.point(i))).collect();
            let mut e = 0.0f64;
            for k in 0..200 {
                let p = [0.013 + 0.0049 * k as f64, 0.71 - 0.0037 * k as f64];
                e = e.max((g.interpolate_cubic(&v, &p).unwrap() - f(&p)).abs());
            }
            e
        };
        let (a, b) = (err(32), err(64));
        assert!(a / b > 6.0, "{a} {b}");
        let g = Grid::torus(1, 1.0, 8).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!((g.interpolate_cubic(&v, &[0.25]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn eval_wraps_on_torus() {
        let g = Grid::torus(1, 1.0, 4).unwrap();
        let d = GridDensity::new(g, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        assert_eq!(d.eval(&[0.875]).unwrap(), 3.0);
        assert_eq!(d.eval(&[1.25]).unwrap(), 2.0);
        assert_eq!(d.eval(&[-0.75]).unwrap(), 2.0);
    }

    #[test]
    fn cumulative_examples() {
        let g = Grid::cube(2, 1.0, 17).unwrap();
        let d = GridDensity::constant(g, 1.0).unwrap();
        let c = d.cumulative(1).unwrap();
        for a in [0.0, 0.3, 0.77, 1.0] {
            assert!((c.at(3, a) - a).abs() <= 1e-12);
        }
        let g1 = Grid::cube(1, 1.0, 4097).unwrap();
        let d = GridDensity::from_fn(g1, |x| 0.5 + x[0]).unwrap();
        let c = d.cumulative(0).unwrap();
        assert!((c.at(0, 1.0) - 1.0).abs() <= 1e-9);
        assert_eq!(c.at(0, 0.0), 0.0);
    }

    #[test]
    fn cumulative_torus_closes_the_fiber() {
        let g = Grid::torus(2, 1.0, 8).unwrap();
        let d = GridDensity::from_fn(g, |x| 2.0 + libm::sin(6.0 * x[0]) * libm::cos(4.0 * x[1])).unwrap();
        for axis in 0..2 {
            let c = d.cumulative(axis).unwrap();
            assert_eq!(c.heights(), 9);
            let total: f64 = c.totals().iter().map(|t| t / 8.0).sum();
            assert!((total - d.mass()).abs() <= 1e-12);
        }
    }

    #[test]
    fn modulus_examples() {
        let g = Grid::cube(1, 1.0, 4097).unwrap();
        assert_eq!(GridDensity::constant(g, 2.0).unwrap().modulus_of_continuity(), 0.0);
        let d = GridDensity::from_fn(g, |x| 0.5 + x[0]).unwrap();
        assert!((d.modulus_of_continuity() - 1.0).abs() <= 1e-12);
        let s: Vec<f64> = (0..4097)
            .map(|i| libm::sin(2.0 * core::f64::consts::PI * i as f64 / 4096.0))
            .collect();
        // sin takes negative values, so check the raw difference quotient on a shifted copy.
        let d = GridDensity::new(g, s.iter().map(|v| v + 2.0).collect()).unwrap();
        assert!((d.modulus_of_continuity() - 2.0 * core::f64::consts::PI).abs() <= 1e-4);
    }

    #[test]
    fn rejects_nonpositive() {
        let g = Grid::cube(1, 1.0, 3).unwrap();
        assert!(GridDensity::new(g, vec![1.0, 0.0, 1.0]).is_err());
        assert!(GridDensity::new(g, vec![1.0, 1.0]).is_err());
        assert!(Grid::cube(5, 1.0, 3).is_err());
        assert!(Grid::cube(1, 1.0, 2).is_err());
    }

    #[test]
    fn refinement_convergence() {
        let mass = |r| {
            let g = Grid::cube(2, 1.0, r).unwrap();
            GridDensity::from_fn(g, |x| libm::exp(x[0] * x[1])).unwrap().mass()
        };
        let m: Vec<f64> = [9, 17, 33, 65].iter().map(|&r| mass(r)).collect();
        for w in m.windows(3) {
            let ratio = (w[0] - w[1]).abs() / (w[1] - w[2]).abs();
            assert!(ratio >= 3.5, "ratio {ratio}");
        }
    }

    proptest! {
        #[test]
        fn affine_mass_is_exact(a in 0.5f64..2.0, b in -0.2f64..0.2, c in -0.2f64..0.2, r in 3usize..20, k in 0.3f64..3.0) {
            let g = Grid::cube(2, k, r).unwrap();
            let d = GridDensity::from_fn(g, |x| a + b * x[0] / k + c * x[1] / k).unwrap();
            let exact = k * k * (a + 0.5 * b + 0.5 * c);
            prop_assert!((d.mass() - exact).abs() <= 1e-12 * exact);
        }

        #[test]
        fn interpolation_stays_in_range(seed in 0u64..1000, pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..50)) {
            let g = Grid::cube(2, 1.0, 7).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|i| 1.0 + ((i as u64 * 2654435761 + seed) % 97) as f64 / 10.0).collect();
            let d = GridDensity::new(g, vals).unwrap();
            for (x, y) in pts {
                let v = d.eval(&[x, y]).unwrap();
                prop_assert!(v >= d.min() - 1e-12 && v <= d.max() + 1e-12);
            }
        }

        #[test]
        fn cumulative_consistency(seed in 0u64..1000, axis in 0usize..3) {
            let g = Grid::cube(3, 1.5, 6).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|i| 0.5 + ((i as u64 * 40503 + seed) % 89) as f64 / 30.0).collect();
            let d = GridDensity::new(g, vals).unwrap();
            let c = d.cumulative(axis).unwrap();
            let rest = Grid::cube(2, 1.5, 6).unwrap();
            let total = rest.integrate(&c.totals());
            prop_assert!((total - d.mass()).abs() <= 1e-10 * d.mass());
            for f in 0..c.fiber_count() {
                prop_assert!(c.fiber(f).windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }
}
