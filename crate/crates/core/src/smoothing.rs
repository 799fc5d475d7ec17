//! Smoothing of sampled area-preserving homeomorphisms of `T²`: Gaussian
//! mollification of the displacement, then a global correction that restores
//! the area form exactly in the continuum.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cube::{estimate_dm, DbarReport};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::linalg;
use crate::measure::{box_discrepancy, AtomicMeasure};
use crate::torus::{
    global_solve, jacobian_determinants, min_image, parametric_solve_pairs, torus_distance, GlobalReport,
    ParametricOptions, ParametricReport, TorusAtlas, TorusMap, TorusOptions,
};

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_ACCEPT: f64 = 1e-8;

fn wrap01(x: f64) -> f64 {
    let y = x - libm::floor(x);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Periodic bilinear interpolation with its cell gradient.
fn bilinear(grid: &Grid, v: &[f64], x: [f64; 2]) -> (f64, [f64; 2]) {
    let r = grid.res();
    let h = grid.spacing();
    let (a, b) = (wrap01(x[0]) / h, wrap01(x[1]) / h);
    let (i, j) = ((libm::floor(a) as usize).min(r - 1), (libm::floor(b) as usize).min(r - 1));
    let (s, t) = ((a - i as f64).clamp(0.0, 1.0), (b - j as f64).clamp(0.0, 1.0));
    let (i1, j1) = ((i + 1) % r, (j + 1) % r);
    let v00 = v[i * r + j];
    let v01 = v[i * r + j1];
    let v10 = v[i1 * r + j];
    let v11 = v[i1 * r + j1];
    let val = (1.0 - s) * ((1.0 - t) * v00 + t * v01) + s * ((1.0 - t) * v10 + t * v11);
    let gx = ((1.0 - t) * (v10 - v00) + t * (v11 - v01)) / h;
    let gy = ((1.0 - s) * (v01 - v00) + s * (v11 - v10)) / h;
    (val, [gx, gy])
}

/// `h(x) = x + d(x)` sampled on a 2D unit torus grid, with its inverse
/// displacement at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHomeo {
    grid: Grid,
    disp: [Vec<f64>; 2],
    inv: [Vec<f64>; 2],
    claimed_area_preserving: bool,
}

impl SampledHomeo {
    /// `dx`, `dy` are node displacements (minimal images). A claimed area
    /// preserving map is checked by box discrepancy against `area_tol`.
    pub fn new(grid: Grid, dx: Vec<f64>, dy: Vec<f64>, claimed_area_preserving: bool, area_tol: f64) -> Result<Self> {
        if grid.dim() != 2 || !grid.is_torus() || grid.side() != 1.0 {
            return Err(Error::InvalidGrid("sampled homeomorphisms live on the unit 2-torus".into()));
        }
        if dx.len() != grid.len() || dy.len() != grid.len() {
            return Err(Error::ShapeMismatch("one displacement pair per node".into()));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("displacement is not finite".into()));
        }
        let mut map = SampledHomeo { grid, disp: [dx, dy], inv: [vec![0.0; grid.len()], vec![0.0; grid.len()]], claimed_area_preserving };
        map.invert_nodes()?;
        if claimed_area_preserving {
            let discrepancy = map.area_discrepancy()?;
            if discrepancy > area_tol {
                return Err(Error::NotAreaPreserving { discrepancy, tolerance: area_tol });
            }
        }
        Ok(map)
    }

    /// Samples `f` (in unwrapped coordinates) at the nodes.
    pub fn from_map(grid: Grid, f: impl Fn([f64; 2]) -> [f64; 2], claimed_area_preserving: bool, area_tol: f64) -> Result<Self> {
        let mut dx = Vec::with_capacity(grid.len());
        let mut dy = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let p = grid.point(i);
            let q = f([p[0], p[1]]);
            dx.push(min_image(q[0] - p[0]));
            dy.push(min_image(q[1] - p[1]));
        }
        Self::new(grid, dx, dy, claimed_area_preserving, area_tol)
    }

    pub fn identity(grid: Grid) -> Result<Self> {
        Self::new(grid, vec![0.0; grid.len()], vec![0.0; grid.len()], true, 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn displacement(&self, axis: usize) -> &[f64] {
        &self.disp[axis]
    }
    pub fn inverse_displacement(&self, axis: usize) -> &[f64] {
        &self.inv[axis]
    }
    pub fn claimed_area_preserving(&self) -> bool {
        self.claimed_area_preserving
    }
    pub fn is_identity(&self) -> bool {
        self.disp.iter().all(|d| d.iter().all(|&v| v == 0.0))
    }

    /// Displacements interleaved per node, as the determinant helper expects.
    pub fn interleaved(&self) -> Vec<f64> {
        (0..self.grid.len()).flat_map(|i| [self.disp[0][i], self.disp[1][i]]).collect()
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let (dx, _) = bilinear(&self.grid, &self.disp[0], x);
        let (dy, _) = bilinear(&self.grid, &self.disp[1], x);
        [wrap01(x[0] + dx), wrap01(x[1] + dy)]
    }

    /// Damped Newton on `x + d(x) = y` from `start`; returns the point and residual.
    fn solve_inverse(&self, y: [f64; 2], start: [f64; 2]) -> ([f64; 2], f64) {
        let resid = |x: [f64; 2]| -> ([f64; 2], [f64; 4]) {
            let (dx, gx) = bilinear(&self.grid, &self.disp[0], x);
            let (dy, gy) = bilinear(&self.grid, &self.disp[1], x);
            ([min_image(x[0] + dx - y[0]), min_image(x[1] + dy - y[1])], [1.0 + gx[0], gx[1], gy[0], 1.0 + gy[1]])
        };
        let norm = |r: [f64; 2]| libm::sqrt(r[0] * r[0] + r[1] * r[1]);
        let mut x = start;
        let (mut r, mut j) = resid(x);
        let mut nr = norm(r);
        for _ in 0..60 {
            if nr <= INVERSE_TOL {
                break;
            }
            let det = j[0] * j[3] - j[1] * j[2];
            let step = if det.abs() > 1e-12 {
                [-(j[3] * r[0] - j[1] * r[1]) / det, -(-j[2] * r[0] + j[0] * r[1]) / det]
            } else {
                [-r[0], -r[1]]
            };
            let mut t = 1.0;
            loop {
                let cand = [x[0] + t * step[0], x[1] + t * step[1]];
                let (rc, jc) = resid(cand);
                let nc = norm(rc);
                if nc < nr || t < 1e-6 {
                    x = cand;
                    r = rc;
                    j = jc;
                    nr = nc;
                    break;
                }
                t *= 0.5;
            }
        }
        ([wrap01(x[0]), wrap01(x[1])], nr)
    }

    pub fn apply_inverse(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        let (d0, _) = bilinear(&self.grid, &self.disp[0], y);
        let (d1, _) = bilinear(&self.grid, &self.disp[1], y);
        let (x, res) = self.solve_inverse(y, [y[0] - d0, y[1] - d1]);
        if res > INVERSE_ACCEPT {
            return Err(Error::NotBijective { residual: res });
        }
        Ok(x)
    }

    fn invert_nodes(&mut self) -> Result<()> {
        let mut prev: Option<([f64; 2], [f64; 2])> = None;
        let mut worst = 0.0f64;
        for i in 0..self.grid.len() {
            let p = self.grid.point(i);
            let y = [p[0], p[1]];
            let naive = [y[0] - self.disp[0][i], y[1] - self.disp[1][i]];
            let (mut x, mut res) = match prev {
                Some((py, px)) => self.solve_inverse(y, [px[0] + min_image(y[0] - py[0]), px[1] + min_image(y[1] - py[1])]),
                None => self.solve_inverse(y, naive),
            };
            if res > INVERSE_TOL {
                let (x2, r2) = self.solve_inverse(y, naive);
                if r2 < res {
                    x = x2;
                    res = r2;
                }
            }
            worst = worst.max(res);
            self.inv[0][i] = min_image(x[0] - y[0]);
            self.inv[1][i] = min_image(x[1] - y[1]);
            prev = Some((y, x));
        }
        if worst > INVERSE_ACCEPT {
            return Err(Error::NotBijective { residual: worst });
        }
        Ok(())
    }

    /// Box discrepancy between the pushforward of the uniform measure and itself.
    pub fn area_discrepancy(&self) -> Result<f64> {
        let one = GridDensity::constant(self.grid, 1.0)?;
        let mu = AtomicMeasure::atomize(&one);
        let pushed = mu.pushforward(|p| {
            let q = self.apply([p[0], p[1]]);
            vec![q[0], q[1]]
        })?;
        box_discrepancy(&pushed, &mu, &self.grid)
    }

    fn node_images(&self) -> Vec<[f64; 2]> {
        (0..self.grid.len())
            .map(|i| {
                let p = self.grid.point(i);
                [wrap01(p[0] + self.disp[0][i]), wrap01(p[1] + self.disp[1][i])]
            })
            .collect()
    }

    fn node_preimages(&self) -> Vec<[f64; 2]> {
        (0..self.grid.len())
            .map(|i| {
                let p = self.grid.point(i);
                [wrap01(p[0] + self.inv[0][i]), wrap01(p[1] + self.inv[1][i])]
            })
            .collect()
    }
}

fn dbar_nodes(a: &[[f64; 2]], b: &[[f64; 2]], ai: &[[f64; 2]], bi: &[[f64; 2]]) -> DbarReport {
    let fwd = a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max(torus_distance(p, q)));
    let inv = ai.iter().zip(bi).fold(0.0f64, |m, (p, q)| m.max(torus_distance(p, q)));
    DbarReport { forward: fwd, inverse: inv, dbar: fwd.max(inv) }
}

/// Sampled `d̄(a, b)` over the nodes.
pub fn dbar_homeos(a: &SampledHomeo, b: &SampledHomeo) -> DbarReport {
    dbar_nodes(&a.node_images(), &b.node_images(), &a.node_preimages(), &b.node_preimages())
}

fn gaussian_smooth(grid: &Grid, v: &[f64], scale: f64) -> Vec<f64> {
    let r = grid.res();
    let h = grid.spacing();
    let k = (libm::ceil(5.0 * scale / h) as usize).min(4 * r);
    let mut w: Vec<f64> = (0..=2 * k)
        .map(|i| {
            let x = (i as f64 - k as f64) * h / scale;
            libm::exp(-0.5 * x * x)
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let pass = |src: &[f64], axis: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for i in 0..r {
            for j in 0..r {
                let mut acc = 0.0;
                for (o, wt) in w.iter().enumerate() {
                    let s = (o as isize - k as isize).rem_euclid(r as isize) as usize;
                    let (a, b) = if axis == 0 { ((i + s) % r, j) } else { (i, (j + s) % r) };
                    acc += wt * src[a * r + b];
                }
                out[i * r + j] = acc;
            }
        }
        out
    };
    pass(&pass(v, 0), 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mollified {
    pub map: SampledHomeo,
    pub requested_scale: f64,
    /// Scale actually used after halvings.
    pub scale: f64,
    pub dbar_to_h: DbarReport,
}

fn mollify_at(h: &SampledHomeo, scale: f64) -> Result<SampledHomeo> {
    let grid = h.grid;
    let dx = gaussian_smooth(&grid, &h.disp[0], scale);
    let dy = gaussian_smooth(&grid, &h.disp[1], scale);
    let inter: Vec<f64> = (0..grid.len()).flat_map(|i| [dx[i], dy[i]]).collect();
    let det = jacobian_determinants(&grid, &inter)?;
    if det.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotDiffeomorphic { scale });
    }
    SampledHomeo::new(grid, dx, dy, false, 0.0).map_err(|_| Error::NotDiffeomorphic { scale })
}

fn check_scale(h: &SampledHomeo, scale: f64) -> Result<()> {
    if !(scale >= 2.0 * h.grid.spacing()) {
        return Err(Error::InvalidParameter(alloc::format!(
            "scale {scale} is below two grid spacings ({})",
            2.0 * h.grid.spacing()
        )));
    }
    Ok(())
}

/// Periodic Gaussian mollification of the displacement. The scale is halved
/// up to three times while the result fails the determinant check. This is a
/// surrogate: a failure says nothing about whether a smoothing exists.
pub fn mollify(h: &SampledHomeo, scale: f64) -> Result<Mollified> {
    check_scale(h, scale)?;
    let mut s = scale;
    for attempt in 0..=3 {
        match mollify_at(h, s) {
            Ok(map) => {
                let dbar_to_h = dbar_homeos(&map, h);
                return Ok(Mollified { map, requested_scale: scale, scale: s, dbar_to_h });
            }
            Err(Error::NotDiffeomorphic { .. }) if attempt < 3 => s *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NotDiffeomorphic { scale: s })
}

/// `det(I + ∇d)` of a smooth sampled map, as a density.
pub fn pullback_density(psi1: &SampledHomeo) -> Result<GridDensity> {
    let det = jacobian_determinants(&psi1.grid, &psi1.interleaved())?;
    if let Some(d) = det.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidDensity(alloc::format!("Jacobian determinant {d} is not positive")));
    }
    GridDensity::new(psi1.grid, det)
}

/// `φ = ψ₂ ∘ ψ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMap {
    pub psi1: SampledHomeo,
    pub psi2: TorusMap,
}

impl SmoothedMap {
    pub fn identity(grid: Grid) -> Result<Self> {
        Ok(SmoothedMap { psi1: SampledHomeo::identity(grid)?, psi2: TorusMap::identity(grid) })
    }

    pub fn is_identity(&self) -> bool {
        self.psi1.is_identity() && self.psi2.is_identity()
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let y = self.psi2.apply(&self.psi1.apply(x));
        [y[0], y[1]]
    }

    pub fn apply_inverse(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        let z = self.psi2.apply_inverse(&y);
        self.psi1.apply_inverse([z[0], z[1]])
    }

    fn node_images(&self) -> Vec<[f64; 2]> {
        self.psi1
            .node_images()
            .into_iter()
            .map(|p| {
                let y = self.psi2.apply(&p);
                [y[0], y[1]]
            })
            .collect()
    }

    fn node_preimages(&self) -> Result<Vec<[f64; 2]>> {
        let grid = self.psi1.grid;
        (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                self.apply_inverse([p[0], p[1]])
            })
            .collect()
    }

    /// Node displacements of `φ`, interleaved.
    pub fn displacements(&self) -> Vec<f64> {
        let grid = self.psi1.grid;
        self.node_images()
            .iter()
            .enumerate()
            .flat_map(|(i, q)| {
                let p = grid.point(i);
                [min_image(q[0] - p[0]), min_image(q[1] - p[1])]
            })
            .collect()
    }

    /// Sampled `d̄(φ, id)` over nodes and their preimages.
    pub fn dbar_identity(&self) -> Result<DbarReport> {
        let grid = self.psi1.grid;
        let img = self.node_images();
        let pre = self.node_preimages()?;
        let (mut fwd, mut inv) = (0.0f64, 0.0f64);
        for i in 0..grid.len() {
            let p = grid.point(i);
            let x = [p[0], p[1]];
            fwd = fwd.max(torus_distance(&img[i], &x));
            inv = inv.max(torus_distance(&pre[i], &x));
            // the same pairs seen from the other side
            let back = self.apply_inverse(img[i])?;
            inv = inv.max(torus_distance(&back, &img[i]));
            fwd = fwd.max(torus_distance(&self.apply(pre[i]), &pre[i]));
        }
        Ok(DbarReport { forward: fwd, inverse: inv, dbar: fwd.max(inv) })
    }
}

/// Sampled `d̄` between two smoothed maps over the nodes.
pub fn dbar_smoothed(a: &SmoothedMap, b: &SmoothedMap) -> Result<DbarReport> {
    Ok(dbar_nodes(&a.node_images(), &b.node_images(), &a.node_preimages()?, &b.node_preimages()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub requested_scale: f64,
    pub scale: f64,
    /// `d̄(ψ₁, h)`.
    pub dbar_psi1_h: f64,
    /// `Lid₁` and box discrepancy between `ψ₁*Ω` and `Ω`.
    pub d_m: f64,
    pub box_value: f64,
    pub psi1_det_defect: f64,
    /// `d̄(ψ₂, id)`.
    pub dbar_psi2_id: f64,
    /// `d̄(ψ₂∘ψ₁, ψ₁)`.
    pub dbar_correction: f64,
    /// `d̄(φ, h)`.
    pub dbar_phi_h: f64,
    /// `|det dφ − 1|∞` by centered differences on the nodes.
    pub det_defect: f64,
    pub phi_dbar: DbarReport,
    pub lambda: f64,
    pub global: GlobalReport,
}

fn tau_density(psi1: &SampledHomeo) -> Result<GridDensity> {
    let grid = psi1.grid;
    let det = pullback_density(psi1)?;
    let pre = psi1.node_preimages();
    let values = pre.iter().map(|x| det.eval(x).map(|d| 1.0 / d)).collect::<Result<Vec<f64>>>()?;
    GridDensity::new(grid, values)
}

fn finish(h: &SampledHomeo, m: &Mollified, psi2: TorusMap, global: GlobalReport, metric_atoms: usize) -> Result<(SmoothedMap, SmoothingReport)> {
    let grid = h.grid;
    let psi1 = &m.map;
    let one = GridDensity::constant(grid, 1.0)?;
    let f = pullback_density(psi1)?;
    let d_m = if f == one { 0.0 } else { estimate_dm(&f, &one, metric_atoms)? };
    let box_value = box_discrepancy(&AtomicMeasure::atomize(&f), &AtomicMeasure::atomize(&one), &grid)?;
    let psi1_det_defect = f.values().iter().fold(0.0f64, |a, d| a.max((d - 1.0).abs()));
    let phi = SmoothedMap { psi1: psi1.clone(), psi2 };
    let img1 = psi1.node_images();
    let pre1 = psi1.node_preimages();
    let img = phi.node_images();
    let pre = phi.node_preimages()?;
    let correction = dbar_nodes(&img, &img1, &pre, &pre1);
    let to_h = dbar_nodes(&img, &h.node_images(), &pre, &h.node_preimages());
    let det = jacobian_determinants(&grid, &phi.displacements())?;
    let det_defect = det.iter().fold(0.0f64, |a, d| a.max((d - 1.0).abs()));
    let phi_dbar = phi.dbar_identity()?;
    let report = SmoothingReport {
        requested_scale: m.requested_scale,
        scale: m.scale,
        dbar_psi1_h: m.dbar_to_h.dbar,
        d_m,
        box_value,
        psi1_det_defect,
        dbar_psi2_id: global.dbar.dbar,
        dbar_correction: correction.dbar,
        dbar_phi_h: to_h.dbar,
        det_defect,
        phi_dbar,
        lambda: global.lambda,
        global,
    };
    Ok((phi, report))
}

/// Corrects a mollified map: `ψ₂` with `ψ₂*Ω = λ (ψ₁⁻¹)*Ω`, then `φ = ψ₂∘ψ₁`.
/// The source form is always `Ω`.
pub fn area_correct(
    h: &SampledHomeo,
    mollified: &Mollified,
    atlas: &TorusAtlas,
    opts: &TorusOptions,
    metric_atoms: usize,
) -> Result<(SmoothedMap, SmoothingReport)> {
    if mollified.map.grid != h.grid {
        return Err(Error::ShapeMismatch("mollified map and input live on different grids".into()));
    }
    let tau = tau_density(&mollified.map)?;
    let one = GridDensity::constant(h.grid, 1.0)?;
    let (psi2, global) = global_solve(&one, &tau, atlas, opts)?;
    finish(h, mollified, psi2, global, metric_atoms)
}

/// Mollify then correct.
pub fn smooth(h: &SampledHomeo, scale: f64, atlas: &TorusAtlas, opts: &TorusOptions, metric_atoms: usize) -> Result<(SmoothedMap, SmoothingReport)> {
    let m = mollify(h, scale)?;
    area_correct(h, &m, atlas, opts, metric_atoms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotopyReport {
    pub scale: f64,
    /// `d̄(h_i, h_{i+1})`.
    pub input_steps: Vec<f64>,
    /// `d̄(φ_i, φ_{i+1})`.
    pub output_steps: Vec<f64>,
    /// `max_i output / input` over steps that move.
    pub max_ratio: f64,
    pub members: Vec<SmoothingReport>,
    pub parametric: ParametricReport,
}

/// Smooths an isotopy `h_0 = id, h_1, …` with one shared mollification scale
/// and the parametric correction; `φ_0 = id` exactly.
pub fn smooth_isotopy(
    members: &[SampledHomeo],
    scale: f64,
    max_step: f64,
    atlas: &TorusAtlas,
    opts: &TorusOptions,
    popts: &ParametricOptions,
) -> Result<(Vec<SmoothedMap>, IsotopyReport)> {
    if members.len() < 2 {
        return Err(Error::InvalidParameter("an isotopy needs at least two members".into()));
    }
    if !members[0].is_identity() {
        return Err(Error::InvalidParameter("the isotopy must start at the identity".into()));
    }
    let grid = members[0].grid;
    if members.iter().any(|m| m.grid != grid) {
        return Err(Error::ShapeMismatch("isotopy members live on different grids".into()));
    }
    let last = (members.len() - 1) as f64;
    let input_steps: Vec<f64> = members.windows(2).map(|w| dbar_homeos(&w[0], &w[1]).dbar).collect();
    if let Some(i) = input_steps.iter().position(|&d| d > max_step) {
        return Err(Error::Refinement { from: i as f64 / last, to: (i + 1) as f64 / last });
    }
    check_scale(&members[0], scale)?;
    let mut s = scale;
    let mut attempt = 0;
    let smoothed: Vec<SampledHomeo> = loop {
        match members.iter().map(|h| mollify_at(h, s)).collect::<Result<Vec<_>>>() {
            Ok(v) => break v,
            Err(Error::NotDiffeomorphic { .. }) if attempt < 3 => {
                s *= 0.5;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    };
    let taus: Vec<GridDensity> = smoothed.iter().map(tau_density).collect::<Result<_>>()?;
    let one = GridDensity::constant(grid, 1.0)?;
    let family = |t: f64| -> Result<(GridDensity, GridDensity)> {
        let x = (t * last).clamp(0.0, last);
        let i = (libm::floor(x) as usize).min(members.len() - 2);
        let w = x - i as f64;
        let tau = if w == 0.0 {
            taus[i].clone()
        } else if w == 1.0 {
            taus[i + 1].clone()
        } else {
            let v = taus[i].values().iter().zip(taus[i + 1].values()).map(|(a, b)| (1.0 - w) * a + w * b).collect();
            GridDensity::new(grid, v)?
        };
        Ok((one.clone(), tau))
    };
    let partition: Vec<f64> = (0..members.len()).map(|i| i as f64 / last).collect();
    let (maps, parametric) = parametric_solve_pairs(&family, &partition, atlas, opts, popts)?;
    let mut out = Vec::with_capacity(members.len());
    let mut reports = Vec::with_capacity(members.len());
    for (i, h) in members.iter().enumerate() {
        let k = parametric.params.iter().position(|&p| p == partition[i]).expect("partition points survive refinement");
        let m = Mollified { dbar_to_h: dbar_homeos(&smoothed[i], h), map: smoothed[i].clone(), requested_scale: scale, scale: s };
        let (mut phi, rep) = finish(h, &m, maps[k].clone(), parametric.members[k].clone(), popts.metric_atoms)?;
        if i == 0 {
            phi = SmoothedMap::identity(grid)?;
        }
        out.push(phi);
        reports.push(rep);
    }
    let output_steps: Vec<f64> = out.windows(2).map(|w| dbar_smoothed(&w[0], &w[1]).map(|d| d.dbar)).collect::<Result<_>>()?;
    let max_ratio = output_steps
        .iter()
        .zip(&input_steps)
        .filter(|(_, i)| **i > 0.0)
        .fold(0.0f64, |m, (o, i)| m.max(o / i));
    Ok((out, IsotopyReport { scale: s, input_steps, output_steps, max_ratio, members: reports, parametric }))
}

/// `|J|` of the map `x ↦ x + d(x)` at a point, from the bilinear cell gradient.
pub fn local_jacobian(h: &SampledHomeo, x: [f64; 2]) -> f64 {
    let (_, gx) = bilinear(&h.grid, &h.disp[0], x);
    let (_, gy) = bilinear(&h.grid, &h.disp[1], x);
    linalg::det(&[1.0 + gx[0], gx[1], gy[0], 1.0 + gy[1]], 2)
}
