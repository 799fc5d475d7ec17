use alloc::vec;
use alloc::vec::Vec;

use crate::cube::{DbarReport, TriangularSolution};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg;

/// Representative of `v` modulo 1 in `[−1/2, 1/2]`.
pub fn min_image(v: f64) -> f64 {
    v - libm::round(v)
}

/// Flat distance on the unit torus.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| {
        let d = min_image(x - y);
        d * d
    }).sum())
}

fn wrap01(x: f64) -> f64 {
    let y = x - libm::floor(x);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// A cube solution transported into one chart of the torus; identity outside.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartMap {
    pub chart: usize,
    pub origin: Vec<f64>,
    pub sol: TriangularSolution,
}

impl ChartMap {
    fn side(&self) -> f64 {
        self.sol.grid().side()
    }

    fn local(&self, x: &[f64]) -> Option<Vec<f64>> {
        let l = self.side();
        let mut xi = Vec::with_capacity(x.len());
        for (v, o) in x.iter().zip(&self.origin) {
            let s = v - o;
            let s = s - libm::floor(s);
            if s > l {
                return None;
            }
            xi.push(s);
        }
        Some(xi)
    }

    fn store(&self, xi: &[f64], x: &mut [f64]) {
        for d in 0..x.len() {
            x[d] = wrap01(self.origin[d] + xi[d]);
        }
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        if let Some(mut xi) = self.local(x) {
            self.sol.apply_in_place(&mut xi);
            self.store(&xi, x);
        }
    }

    pub fn inverse_in_place(&self, x: &mut [f64]) {
        if let Some(mut xi) = self.local(x) {
            self.sol.inverse_in_place(&mut xi);
            self.store(&xi, x);
        }
    }
}

/// `ψ₂ = φ_0 ∘ φ_1 ∘ … ∘ φ_m` on the unit torus; trivial edges are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMap {
    grid: Grid,
    edges: Vec<ChartMap>,
}

impl TorusMap {
    pub fn identity(grid: Grid) -> Self {
        TorusMap { grid, edges: Vec::new() }
    }

    pub(crate) fn from_edges(grid: Grid, edges: Vec<ChartMap>) -> Self {
        TorusMap { grid, edges }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn edges(&self) -> &[ChartMap] {
        &self.edges
    }
    pub fn is_identity(&self) -> bool {
        self.edges.iter().all(|e| e.sol.is_identity())
    }

    /// Applies the edges last to first; `steps[e]` collects the largest move of edge `e`.
    fn apply_tracked(&self, x: &mut [f64], steps: Option<&mut [f64]>) {
        match steps {
            None => self.edges.iter().rev().for_each(|e| e.apply_in_place(x)),
            Some(steps) => {
                let mut prev = x.to_vec();
                for (k, e) in self.edges.iter().enumerate().rev() {
                    e.apply_in_place(x);
                    steps[k] = steps[k].max(torus_distance(x, &prev));
                    prev.copy_from_slice(x);
                }
            }
        }
    }

    fn inverse_tracked(&self, x: &mut [f64], steps: Option<&mut [f64]>) {
        match steps {
            None => self.edges.iter().for_each(|e| e.inverse_in_place(x)),
            Some(steps) => {
                let mut prev = x.to_vec();
                for (k, e) in self.edges.iter().enumerate() {
                    e.inverse_in_place(x);
                    steps[k] = steps[k].max(torus_distance(x, &prev));
                    prev.copy_from_slice(x);
                }
            }
        }
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        self.apply_tracked(x, None);
    }

    pub fn inverse_in_place(&self, x: &mut [f64]) {
        self.inverse_tracked(x, None);
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        y
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        self.inverse_in_place(&mut x);
        x
    }

    /// Node displacements `ψ(x) − x` (minimal images), `n` per node.
    pub fn displacements(&self) -> Vec<f64> {
        let n = self.grid.dim();
        let mut out = vec![0.0; self.grid.len() * n];
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let y = self.apply(&x);
            for d in 0..n {
                out[i * n + d] = min_image(y[d] - x[d]);
            }
        }
        out
    }

    pub fn inverse_displacements(&self) -> Vec<f64> {
        let n = self.grid.dim();
        let mut out = vec![0.0; self.grid.len() * n];
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let y = self.apply_inverse(&x);
            for d in 0..n {
                out[i * n + d] = min_image(y[d] - x[d]);
            }
        }
        out
    }

    /// Sampled `d̄(ψ, id)` over nodes and their preimages, plus per-edge
    /// sups along the same trajectories.
    pub fn dbar_tracked(&self) -> (DbarReport, Vec<f64>) {
        let mut steps = vec![0.0; self.edges.len()];
        let (mut fwd, mut inv) = (0.0f64, 0.0f64);
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let mut y = x.clone();
            self.apply_tracked(&mut y, Some(&mut steps));
            fwd = fwd.max(torus_distance(&y, &x));
            let mut back = y.clone();
            self.inverse_tracked(&mut back, Some(&mut steps));
            inv = inv.max(torus_distance(&back, &y));
            let mut p = x.clone();
            self.inverse_tracked(&mut p, Some(&mut steps));
            inv = inv.max(torus_distance(&p, &x));
            let mut q = p.clone();
            self.apply_tracked(&mut q, Some(&mut steps));
            fwd = fwd.max(torus_distance(&q, &p));
        }
        (DbarReport { forward: fwd, inverse: inv, dbar: fwd.max(inv) }, steps)
    }

    pub fn dbar_identity(&self) -> DbarReport {
        self.dbar_tracked().0
    }
}

/// Sampled `d̄(a, b)` over the nodes of `a`'s grid, both directions.
pub fn dbar_between(a: &TorusMap, b: &TorusMap) -> DbarReport {
    let grid = a.grid();
    let (mut fwd, mut inv) = (0.0f64, 0.0f64);
    for i in 0..grid.len() {
        let x = grid.point(i);
        fwd = fwd.max(torus_distance(&a.apply(&x), &b.apply(&x)));
        inv = inv.max(torus_distance(&a.apply_inverse(&x), &b.apply_inverse(&x)));
    }
    DbarReport { forward: fwd, inverse: inv, dbar: fwd.max(inv) }
}

/// `det(I + ∇d)` at every node by periodic centered differences.
pub fn jacobian_determinants(grid: &Grid, disp: &[f64]) -> Result<Vec<f64>> {
    let n = grid.dim();
    if !grid.is_torus() || disp.len() != grid.len() * n {
        return Err(Error::ShapeMismatch("displacements must hold n values per torus node".into()));
    }
    let r = grid.res();
    let h = grid.spacing();
    let mut m = vec![0usize; n];
    let mut jac = [0.0f64; 16];
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        grid.multi_index(i, &mut m);
        for din in 0..n {
            let s = grid.stride(din);
            let up = if m[din] + 1 < r { i + s } else { i + s - r * s };
            let dn = if m[din] > 0 { i - s } else { i + (r - 1) * s };
            for dout in 0..n {
                let diff = min_image(disp[up * n + dout] - disp[dn * n + dout]);
                jac[dout * n + din] = diff / (2.0 * h) + if dout == din { 1.0 } else { 0.0 };
            }
        }
        out[i] = linalg::det(&jac, n);
    }
    Ok(out)
}

/// `max |σ(x + d(x)) det(I + ∇d)(x) − target(x)|` over nodes.
pub fn pullback_defect(grid: &Grid, disp: &[f64], sigma: &crate::grid::GridDensity, target: &[f64]) -> Result<f64> {
    let n = grid.dim();
    let det = jacobian_determinants(grid, disp)?;
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        let x = grid.point(i);
        let y: Vec<f64> = (0..n).map(|d| wrap01(x[d] + disp[i * n + d])).collect();
        worst = worst.max((sigma.eval(&y)? * det[i] - target[i]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_image_examples() {
        assert_eq!(min_image(0.75), -0.25);
        assert_eq!(min_image(-0.75), 0.25);
        assert!((torus_distance(&[0.95, 0.0], &[0.05, 0.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn determinant_of_a_shear_field() {
        let grid = Grid::torus(2, 1.0, 64).unwrap();
        let tau = 2.0 * core::f64::consts::PI;
        let mut disp = vec![0.0; grid.len() * 2];
        for i in 0..grid.len() {
            let p = grid.point(i);
            disp[2 * i] = 0.1 * libm::sin(tau * p[1]);
            disp[2 * i + 1] = 0.1 * libm::sin(tau * p[0]);
        }
        let det = jacobian_determinants(&grid, &disp).unwrap();
        let h = grid.spacing();
        for i in 0..grid.len() {
            let p = grid.point(i);
            let exact = 1.0 - 0.01 * tau * tau * libm::cos(tau * p[0]) * libm::cos(tau * p[1]);
            assert!((det[i] - exact).abs() < 2.0 * h * h * tau * tau, "{} vs {exact}", det[i]);
        }
    }
}
