use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cube::gauss_legendre;
use crate::error::{Error, Result};

/// Smooth bump `exp(−1/(s − a) − 1/(b − s))` on `(a, b)`, zero outside.
fn bump(s: f64, a: f64, b: f64) -> f64 {
    if s <= a || s >= b {
        0.0
    } else {
        libm::exp(-1.0 / (s - a) - 1.0 / (b - s))
    }
}

/// `C^∞` step from 0 at `t ≤ 0` to 1 at `t ≥ 1`.
fn step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = libm::exp(-1.0 / t);
        let b = libm::exp(-1.0 / (1.0 - t));
        a / (a + b)
    }
}

/// Flat-topped smooth bump on `(a, b)` with ramps of a third of the width.
fn plateau(s: f64, a: f64, b: f64) -> f64 {
    let r = (b - a) / 3.0;
    step((s - a) / r) * step((b - s) / r)
}

/// `t` shifted by whole periods into `[lo, lo + 1)`.
fn unwrap_from(t: f64, lo: f64) -> f64 {
    let s = t - lo;
    lo + s - libm::floor(s)
}

/// Translated cube charts on the unit torus `T^n`.
///
/// Chart `j` with index `i ∈ {0..c−1}^n` is the cube `o_j + [0, L]^n`; its
/// `Q(1−η)` core covers the block `Π[i_d/c − 2δ, (i_d+1)/c + 2δ]` and the
/// partition function `φ_j` lives on `Π(i_d/c − δ, (i_d+1)/c + δ)`. Link
/// bumps fill most of the `4δ`-wide overlap of neighbouring cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusAtlas {
    n: usize,
    per_axis: usize,
    eta: f64,
    delta: f64,
    side: f64,
    indices: Vec<Vec<usize>>,
    origins: Vec<Vec<f64>>,
    parent: Vec<Option<usize>>,
    /// `1 / ∫ η̃_k` for the unnormalized link bumps (continuum quadrature).
    link_norm: Vec<f64>,
    /// Measured `max |η_k|`.
    c2: f64,
}

impl TorusAtlas {
    pub fn build(n: usize, per_axis: usize) -> Result<Self> {
        Self::with_eta(n, per_axis, 0.1)
    }

    pub fn with_eta(n: usize, per_axis: usize, eta: f64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidParameter(alloc::format!("torus dimension {n} outside 1..=3")));
        }
        if per_axis < 2 {
            return Err(Error::InvalidParameter("need at least two charts per axis for overlaps".into()));
        }
        if !(eta > 0.0 && eta < 0.25) {
            return Err(Error::InvalidParameter(alloc::format!("eta = {eta} outside (0, 1/4)")));
        }
        let c = per_axis as f64;
        let delta = 1.0 / (8.0 * c);
        let side = (1.0 / c + 4.0 * delta) / (1.0 - 2.0 * eta);
        if side >= 1.0 {
            return Err(Error::InvalidParameter("charts would wrap onto themselves".into()));
        }
        let count = per_axis.pow(n as u32);
        let mut indices = Vec::with_capacity(count);
        let mut origins = Vec::with_capacity(count);
        let mut parent = Vec::with_capacity(count);
        for j in 0..count {
            let mut idx = vec![0usize; n];
            let mut rest = j;
            for d in (0..n).rev() {
                idx[d] = rest % per_axis;
                rest /= per_axis;
            }
            let o: Vec<f64> = idx.iter().map(|&i| i as f64 / c - 2.0 * delta - side * eta).collect();
            // decrement the last nonzero index: an adjacent, earlier chart
            let p = idx.iter().rposition(|&i| i > 0).map(|d| {
                let stride = per_axis.pow((n - 1 - d) as u32);
                j - stride
            });
            indices.push(idx);
            origins.push(o);
            parent.push(p);
        }
        let (lo, hi) = (-1.5 * delta, 1.0 / c + 1.5 * delta);
        let block = gauss_legendre(&|s| plateau(s, lo, hi), lo, hi, 64);
        let face = gauss_legendre(&|s| plateau(s, -1.5 * delta, 1.5 * delta), -1.5 * delta, 1.5 * delta, 64);
        let norm = 1.0 / (face * libm::pow(block, (n - 1) as f64));
        let c2 = norm;
        let link_norm = vec![norm; count];
        Ok(TorusAtlas { n, per_axis, eta, delta, side, indices, origins, parent, link_norm, c2 })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn per_axis(&self) -> usize {
        self.per_axis
    }
    pub fn chart_count(&self) -> usize {
        self.indices.len()
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// Side `L` of every chart cube.
    pub fn side(&self) -> f64 {
        self.side
    }
    pub fn origin(&self, j: usize) -> &[f64] {
        &self.origins[j]
    }
    pub fn index(&self, j: usize) -> &[usize] {
        &self.indices[j]
    }
    /// `ρ(k)`; `None` for chart 0.
    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// Chart coordinates of the torus point `x`, if it lies in chart `j`.
    pub fn to_chart(&self, j: usize, x: &[f64]) -> Option<Vec<f64>> {
        let mut xi = Vec::with_capacity(self.n);
        for d in 0..self.n {
            let s = unwrap_from(x[d], self.origins[j][d]) - self.origins[j][d];
            if s > self.side {
                return None;
            }
            xi.push(s);
        }
        Some(xi)
    }

    /// Torus point (wrapped into `[0, 1)`) of chart coordinates `xi`.
    pub fn from_chart(&self, j: usize, xi: &[f64]) -> Vec<f64> {
        xi.iter().zip(&self.origins[j]).map(|(s, o)| unwrap_from(o + s, 0.0)).collect()
    }

    fn block_bump(&self, i: usize, t: f64) -> f64 {
        let c = self.per_axis as f64;
        let lo = i as f64 / c - self.delta;
        bump(unwrap_from(t, lo), lo, (i + 1) as f64 / c + self.delta)
    }

    fn axis_weight(&self, i: usize, t: f64) -> f64 {
        let own = self.block_bump(i, t);
        if own == 0.0 {
            return 0.0;
        }
        let total: f64 = (0..self.per_axis).map(|k| self.block_bump(k, t)).sum();
        own / total
    }

    /// Partition of unity `φ_j(x)`.
    pub fn partition(&self, j: usize, x: &[f64]) -> f64 {
        let mut p = 1.0;
        for d in 0..self.n {
            p *= self.axis_weight(self.indices[j][d], x[d]);
            if p == 0.0 {
                break;
            }
        }
        p
    }

    fn link_block(&self, i: usize, t: f64) -> f64 {
        let c = self.per_axis as f64;
        let lo = i as f64 / c - 1.5 * self.delta;
        plateau(unwrap_from(t, lo), lo, (i + 1) as f64 / c + 1.5 * self.delta)
    }

    /// Link bump `η_k` (unit integral) across the face shared by charts `k` and `ρ(k)`.
    pub fn link(&self, k: usize, x: &[f64]) -> f64 {
        let Some(_) = self.parent[k] else {
            return 0.0;
        };
        let idx = &self.indices[k];
        let axis = idx.iter().rposition(|&i| i > 0).expect("non-root chart");
        let c = self.per_axis as f64;
        let mut p = self.link_norm[k];
        for d in 0..self.n {
            let v = if d == axis {
                let f = idx[d] as f64 / c;
                let lo = f - 1.5 * self.delta;
                plateau(unwrap_from(x[d], lo), lo, f + 1.5 * self.delta)
            } else {
                self.link_block(idx[d], x[d])
            };
            p *= v;
            if p == 0.0 {
                break;
            }
        }
        p
    }

    /// Whether chart coordinates stay inside the `Q(1−η)` core with margin `m`.
    pub fn in_core(&self, xi: &[f64], margin: f64) -> bool {
        let lo = self.eta * self.side + margin;
        let hi = (1.0 - self.eta) * self.side - margin;
        xi.iter().all(|&s| s >= lo && s <= hi)
    }
}
