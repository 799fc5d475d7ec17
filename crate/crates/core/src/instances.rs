//! Reference densities and maps shared by tests, the CLI, and the sweeps.

use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct CubeInstance {
    pub f: GridDensity,
    pub g: GridDensity,
}

/// `sin⁴` bump on `[0.15, 0.85]`.
pub fn bump(t: f64) -> f64 {
    if t <= 0.15 || t >= 0.85 {
        return 0.0;
    }
    let s = libm::sin(PI * (t - 0.15) / 0.7);
    s * s * s * s
}

/// `g ≡ 1` and `f = 1 + amp β(x₁)β(x₂) sin(2πx₂) + c β(x₁)β(x₂)` on the unit
/// square, `c` fixing `mass f = mass g` on the lattice.
pub fn interior_bump(res: usize, amp: f64) -> Result<CubeInstance> {
    if !(amp.abs() < 0.5) {
        return Err(Error::InvalidParameter(alloc::format!("amplitude {amp} would make f nonpositive")));
    }
    let grid = Grid::cube(2, 1.0, res)?;
    let g = GridDensity::constant(grid, 1.0)?;
    let bb: alloc::vec::Vec<f64> = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            bump(p[0]) * bump(p[1])
        })
        .collect();
    let wave: alloc::vec::Vec<f64> = (0..grid.len()).map(|i| bb[i] * libm::sin(2.0 * PI * grid.point(i)[1])).collect();
    let c = -amp * grid.integrate(&wave) / grid.integrate(&bb);
    let values = (0..grid.len()).map(|i| 1.0 + amp * wave[i] + c * bb[i]).collect();
    Ok(CubeInstance { f: GridDensity::new(grid, values)?, g })
}

/// `f_ε = (1 − ε) g + ε f`; masses already agree so no rescaling is needed.
pub fn eps_family(base: &CubeInstance, eps: f64) -> Result<CubeInstance> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(alloc::format!("eps {eps} outside [0, 1]")));
    }
    let values = base.g.values().iter().zip(base.f.values()).map(|(g, f)| (1.0 - eps) * g + eps * f).collect();
    Ok(CubeInstance { f: GridDensity::new(*base.f.grid(), values)?, g: base.g.clone() })
}

/// `1 + amp sin(2πx₁) sin(2πx₂)` on the unit torus; mass one.
pub fn torus_sine(res: usize, amp: f64) -> Result<GridDensity> {
    let grid = Grid::torus(2, 1.0, res)?;
    GridDensity::from_fn(grid, |x| 1.0 + amp * libm::sin(2.0 * PI * x[0]) * libm::sin(2.0 * PI * x[1]))
}

/// Cellular flow of `H = (a/2π) sin(2πx) sin(2πy)`.
fn cellular_velocity(p: [f64; 2], a: f64) -> [f64; 2] {
    let (sx, cx) = (libm::sin(2.0 * PI * p[0]), libm::cos(2.0 * PI * p[0]));
    let (sy, cy) = (libm::sin(2.0 * PI * p[1]), libm::cos(2.0 * PI * p[1]));
    [a * sx * cy, -a * cx * sy]
}

/// Time-`t` map of the cellular flow by RK4 (unwrapped coordinates).
pub fn hamiltonian_flow(p: [f64; 2], a: f64, t: f64, steps: usize) -> [f64; 2] {
    let dt = t / steps as f64;
    let mut x = p;
    let add = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    for _ in 0..steps {
        let k1 = cellular_velocity(x, a);
        let k2 = cellular_velocity(add(x, k1, dt / 2.0), a);
        let k3 = cellular_velocity(add(x, k2, dt / 2.0), a);
        let k4 = cellular_velocity(add(x, k3, dt), a);
        for d in 0..2 {
            x[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
    }
    x
}

/// Periodic triangle wave with values in `[0, 1]` and kinks at `0` and `1/2`.
pub fn triangle_wave(y: f64) -> f64 {
    let t = y - libm::floor(y);
    2.0 * (t - 0.5).abs()
}

/// `(x, y) ↦ (x + b·tri(y), y)` after the time-one cellular flow. Exactly
/// area-preserving in the continuum, Lipschitz but not C¹.
pub fn sheared_hamiltonian(p: [f64; 2], flow: f64, shear: f64) -> [f64; 2] {
    let q = hamiltonian_flow(p, flow, 1.0, 64);
    [q[0] + shear * triangle_wave(q[1]), q[1]]
}
