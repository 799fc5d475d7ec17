use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::atlas::TorusAtlas;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};

/// Split of `target − base` into zero-mean pieces `g_j` supported in chart `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub grid: Grid,
    /// Nodal values of `g_j`.
    pub pieces: Vec<Vec<f64>>,
    /// `λ_k`; entry 0 is unused and zero.
    pub lambdas: Vec<f64>,
    /// Nodal values of `base + Σ_{i≤k} g_i`.
    pub intermediates: Vec<Vec<f64>>,
    /// `∫ g_k` on the grid.
    pub piece_means: Vec<f64>,
    /// `max |Σ g_j − (target − base)|`.
    pub exactness: f64,
    pub c2: f64,
    /// `|λ|∞`.
    pub c3: f64,
}

impl Decomposition {
    pub fn chart_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_trivial(&self, j: usize) -> bool {
        self.pieces[j].iter().all(|&v| v == 0.0)
    }

    pub fn intermediate(&self, k: usize) -> Result<GridDensity> {
        GridDensity::new(self.grid, self.intermediates[k].clone())
    }
}

pub(crate) fn check_torus(grid: &Grid, atlas: &TorusAtlas) -> Result<()> {
    if !grid.is_torus() || grid.side() != 1.0 {
        return Err(Error::InvalidGrid("charts live on the unit torus".into()));
    }
    if grid.dim() != atlas.n() {
        return Err(Error::ShapeMismatch(alloc::format!("grid dim {} vs atlas dim {}", grid.dim(), atlas.n())));
    }
    Ok(())
}

/// Decomposition of `f − 1`; `f` must have unit mass.
pub fn decompose(f: &GridDensity, atlas: &TorusAtlas) -> Result<Decomposition> {
    let one = GridDensity::constant(*f.grid(), 1.0)?;
    decompose_pair(&one, f, atlas)
}

/// Decomposition of `target − base` for densities of equal mass.
pub fn decompose_pair(base: &GridDensity, target: &GridDensity, atlas: &TorusAtlas) -> Result<Decomposition> {
    let grid = *base.grid();
    check_torus(&grid, atlas)?;
    if target.grid() != &grid {
        return Err(Error::ShapeMismatch("base and target grids differ".into()));
    }
    let (mb, mt) = (base.mass(), target.mass());
    let relative = (mb - mt).abs() / mb.abs().max(mt.abs());
    if relative > 1e-8 {
        return Err(Error::MassMismatch { left: mb, right: mt, relative });
    }
    let m1 = atlas.chart_count();
    let len = grid.len();
    let w: Vec<f64> = target.values().iter().zip(base.values()).map(|(t, b)| t - b).collect();
    let points: Vec<Vec<f64>> = (0..len).map(|i| grid.point(i)).collect();

    let mut pieces = Vec::with_capacity(m1);
    let mut r = vec![0.0; m1];
    for j in 0..m1 {
        let p: Vec<f64> = (0..len).map(|i| if w[i] == 0.0 { 0.0 } else { w[i] * atlas.partition(j, &points[i]) }).collect();
        r[j] = grid.integrate(&p);
        pieces.push(p);
    }
    let links: Vec<Vec<f64>> = (0..m1)
        .map(|k| if k == 0 { Vec::new() } else { points.iter().map(|x| atlas.link(k, x)).collect() })
        .collect();

    // μ_k = λ_k ∫η_k; the system is unitriangular in the chart order
    let mut mu = vec![0.0; m1];
    for j in (1..m1).rev() {
        mu[j] += r[j];
        if let Some(p) = atlas.parent(j) {
            mu[p] += mu[j];
        }
    }
    let mut lambdas = vec![0.0; m1];
    for k in 1..m1 {
        if mu[k] != 0.0 {
            lambdas[k] = mu[k] / grid.integrate(&links[k]);
        }
    }
    for k in 1..m1 {
        let l = lambdas[k];
        if l == 0.0 {
            continue;
        }
        let p = atlas.parent(k).expect("non-root chart has a parent");
        for i in 0..len {
            let e = links[k][i];
            if e != 0.0 {
                pieces[k][i] -= l * e;
                pieces[p][i] += l * e;
            }
        }
    }

    let mut intermediates = Vec::with_capacity(m1);
    let mut acc = base.values().to_vec();
    for (k, g) in pieces.iter().enumerate() {
        for i in 0..len {
            acc[i] += g[i];
        }
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::Positivity { index: k, min });
        }
        intermediates.push(acc.clone());
    }
    let piece_means = pieces.iter().map(|g| grid.integrate(g)).collect();
    let mut exactness = 0.0f64;
    for i in 0..len {
        let s: f64 = pieces.iter().map(|g| g[i]).sum();
        exactness = exactness.max((s - w[i]).abs());
    }
    let c3 = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    Ok(Decomposition { grid, pieces, lambdas, intermediates, piece_means, exactness, c2: atlas.c2(), c3 })
}
