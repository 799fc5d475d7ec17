use alloc::vec;

use serde::{Deserialize, Serialize};

use super::solution::{DbarReport, TriangularSolution};
use crate::error::{Error, Result};
use crate::field::SuffixField;
use crate::grid::{Grid, GridDensity};
use crate::linalg;
use crate::linear::{self, TriangularFieldVector};
use crate::measure::{box_discrepancy, lid_metric, AtomicMeasure};

/// `Lid₁(m_f, m_g)`; densities above `atoms` nodes are deposited on a
/// coarser lattice first.
pub fn estimate_dm(f: &GridDensity, g: &GridDensity, atoms: usize) -> Result<f64> {
    let grid = *f.grid();
    let mu = AtomicMeasure::atomize(f);
    let nu = AtomicMeasure::atomize(g);
    if grid.len() <= atoms {
        return Ok(lid_metric(&mu, &nu, 1.0)?.value);
    }
    let n = grid.dim();
    let mut r = libm::floor(libm::pow(atoms as f64, 1.0 / n as f64)) as usize;
    while r > 3 && libm::pow(r as f64, n as f64) > atoms as f64 {
        r -= 1;
    }
    let coarse = Grid::new(n, grid.side(), r.max(3), grid.topology())?;
    Ok(lid_metric(&mu.deposit(&coarse)?, &nu.deposit(&coarse)?, 1.0)?.value)
}

pub fn lipschitz_constant(g: &GridDensity) -> f64 {
    g.modulus_of_continuity()
}

pub fn c4(g: &GridDensity) -> f64 {
    (8.0 * g.max()).max(4.0)
}

/// Smallest `N₀ ≥ 1` with `C₄ (1 + L_g) 2^{−(N₀−1)} < 1/4`.
pub fn choose_subdivision(g: &GridDensity) -> u32 {
    subdivision_for(c4(g), lipschitz_constant(g))
}

pub fn subdivision_for(c4: f64, lg: f64) -> u32 {
    let mut n0 = 1u32;
    while c4 * (1.0 + lg) * libm::pow(2.0, -((n0 - 1) as f64)) >= 0.25 {
        n0 += 1;
    }
    n0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearReport {
    pub n_sup: f64,
    /// `|Ψ(u)|∞`; zero for an exact solution, so it measures grid error.
    pub psi_u_sup: f64,
    pub u_sup: f64,
    pub zeta_u_sup: f64,
    pub bound: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub ok: bool,
    #[serde(skip)]
    pub field: Option<TriangularFieldVector>,
}

fn jacobian_density(sol: &TriangularSolution, g: &GridDensity) -> Result<SuffixField> {
    let grid = *sol.grid();
    let n = grid.dim();
    let r = grid.res();
    let h = grid.spacing();
    let img = sol.node_images();
    let mut m = vec![0usize; n];
    let mut jac = [0.0f64; 16];
    let mut out = SuffixField::zeros(n, 0, r, grid.side());
    for i in 0..grid.len() {
        grid.multi_index(i, &mut m);
        for din in 0..n {
            let s = grid.stride(din);
            for dout in 0..n {
                let at = |k: usize| img[k * n + dout];
                jac[dout * n + din] = if m[din] == 0 {
                    (-3.0 * at(i) + 4.0 * at(i + s) - at(i + 2 * s)) / (2.0 * h)
                } else if m[din] == r - 1 {
                    (3.0 * at(i) - 4.0 * at(i - s) + at(i - 2 * s)) / (2.0 * h)
                } else {
                    (at(i + s) - at(i - s)) / (2.0 * h)
                };
            }
        }
        out.data_mut()[i] = g.eval(&img[i * n..(i + 1) * n])? * linalg::det(&jac, n);
    }
    Ok(out)
}

/// `N(u) = Ψ(u) − Ψ(0) − dΨ(0)·u` on the corner lattice, checked against
/// `C₄ (|ζ·u| + ε₁ + L_g |ζ·u|) |u|`.
pub fn nonlinear_term(sol: &TriangularSolution, f: &GridDensity, g: &GridDensity) -> Result<NonlinearReport> {
    let grid = *sol.grid();
    if f.grid() != &grid || g.grid() != &grid {
        return Err(Error::ShapeMismatch("densities do not match the solution grid".into()));
    }
    let fam = sol.cutoffs();
    let mut w = jacobian_density(sol, g)?;
    w.axpy(-1.0, &SuffixField::from_data(grid.dim(), 0, grid.res(), grid.side(), f.values().to_vec()));
    let psi_u = linear::corner_integrals(&w);
    let psi_0 = linear::psi0(f, g)?;
    let kernel = linear::build_kernel(g, fam)?;
    let u = TriangularFieldVector::new(sol.layers().to_vec())?;
    let lin = linear::apply_dpsi0(&kernel, &u)?;
    let mut nfield = psi_u.clone();
    nfield.axpy(-1.0, &psi_0);
    nfield.axpy(-1.0, &lin);
    let u_sup = u.sup_abs();
    let zeta_u_sup = sol.layers().iter().enumerate().fold(0.0f64, |m, (c, l)| m.max(fam.plateau(c) * l.sup_abs()));
    let lg = lipschitz_constant(g);
    let bound = c4(g) * (zeta_u_sup + fam.eps1() + lg * zeta_u_sup) * u_sup;
    let n_sup = nfield.sup_abs();
    let psi_u_sup = psi_u.sup_abs();
    let slack = bound - n_sup;
    let tolerance = 1e-6 + 10.0 * psi_u_sup;
    Ok(NonlinearReport {
        n_sup,
        psi_u_sup,
        u_sup,
        zeta_u_sup,
        bound,
        slack,
        tolerance,
        ok: slack >= -tolerance,
        field: Some(nfield),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivenessReport {
    pub u_sup: f64,
    pub mg: f64,
    pub d_m: f64,
    pub box_value: f64,
    pub c4: f64,
    /// `C₄ d_M < 1/4`.
    pub applicable: bool,
    pub bound: f64,
    pub bound_ok: bool,
    pub psi0_sup: f64,
    pub dbar: DbarReport,
}

pub fn coerciveness_check(sol: &TriangularSolution, f: &GridDensity, g: &GridDensity, metric_atoms: usize) -> Result<CoercivenessReport> {
    let grid = *sol.grid();
    if f.grid() != &grid || g.grid() != &grid {
        return Err(Error::ShapeMismatch("densities do not match the solution grid".into()));
    }
    let d_m = estimate_dm(f, g, metric_atoms)?;
    let mg = linear::mg_bound(g, grid.dim());
    let c4 = c4(g);
    let u_sup = sol.u_sup();
    let bound = 2.0 * mg * d_m;
    Ok(CoercivenessReport {
        u_sup,
        mg,
        d_m,
        box_value: box_discrepancy(&AtomicMeasure::atomize(f), &AtomicMeasure::atomize(g), &grid)?,
        c4,
        applicable: c4 * d_m < 0.25,
        bound,
        bound_ok: u_sup <= bound,
        psi0_sup: linear::psi0(f, g)?.sup_abs(),
        dbar: sol.dbar_identity(),
    })
}
