use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::cutoff::CutoffFamily;
use super::solution::TriangularSolution;
use crate::error::{Error, Result};
use crate::fiber;
use crate::field::SuffixField;
use crate::grid::{Grid, GridDensity, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct DmOptions {
    /// Absolute bracket width at which the fiber root search stops.
    pub root_tol: f64,
    /// Relative mass mismatch tolerated between `f` and `g` (and per marginal).
    pub mass_tol: f64,
    /// Relative fiber-mass mismatch tolerated in the first layer.
    pub fiber_tol: f64,
    /// `|f − g|` below `support_tol · max f` counts as zero in the collar check.
    pub support_tol: f64,
    /// Enforce `ε₀ max g_s < min{min g_s, ½ min f}` at every layer.
    pub enforce_epsilon: bool,
    /// Upper bound on atoms per measure when estimating `d_M` (coarsened by deposit).
    pub metric_atoms: usize,
    /// Monte Carlo samples and corner boxes for the weak-form defect; 0 boxes skips it.
    pub mc_samples: usize,
    pub boxes: usize,
    pub seed: u64,
    /// Optional initial guesses for the layers, one field per axis.
    pub warm_start: Option<Vec<SuffixField>>,
}

impl Default for DmOptions {
    fn default() -> Self {
        DmOptions {
            root_tol: 1e-12,
            mass_tol: 1e-8,
            fiber_tol: 1e-8,
            support_tol: 1e-12,
            enforce_epsilon: true,
            metric_atoms: 500,
            mc_samples: 100_000,
            boxes: 100,
            seed: 0,
            warm_start: None,
        }
    }
}

impl DmOptions {
    /// Options for internal solves where only the map is needed.
    pub fn fast() -> Self {
        DmOptions { boxes: 0, metric_atoms: 0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// 0-based axis of the layer.
    pub axis: usize,
    pub newton_iterations: usize,
    /// Worst `|G(a, u(a)) − F(a)|` over fibers and heights.
    pub functional_residual: f64,
    /// Largest additive correction applied to restore the next marginals.
    pub marginal_correction: f64,
    /// Smallest `1 + ζ ∂u/∂x_s` over cells.
    pub min_slope_factor: f64,
    /// Smallest sampled `∂G/∂b` met along the root searches.
    pub min_dg: f64,
}

fn check_cube_pair(f: &GridDensity, g: &GridDensity) -> Result<Grid> {
    if f.grid() != g.grid() {
        return Err(Error::ShapeMismatch("f and g live on different grids".into()));
    }
    if f.grid().topology() != Topology::Cube {
        return Err(Error::InvalidGrid("the triangular solver needs a cube grid".into()));
    }
    Ok(*f.grid())
}

struct Newton<'a> {
    p: &'a [Vec<f64>],
    c: &'a [Vec<f64>],
    zeta: &'a [f64],
    w: &'a [f64],
    h: f64,
}

impl Newton<'_> {
    fn g(&self, a: f64, b: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.p.len() {
            if self.w[i] != 0.0 {
                s += self.w[i] * fiber::integral(&self.p[i], &self.c[i], self.h, a + self.zeta[i] * b);
            }
        }
        s
    }

    fn dg(&self, a: f64, b: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.p.len() {
            if self.w[i] != 0.0 && self.zeta[i] != 0.0 {
                s += self.w[i] * self.zeta[i] * fiber::value(&self.p[i], self.h, a + self.zeta[i] * b);
            }
        }
        s
    }
}

/// Solves `G(a, u) = F(a)` at every height of every parameter fiber for the
/// layer of axis `axis ≥ 1`, and returns `u`, the pulled-back density
/// `g_{s−1}` and statistics.
pub fn solve_layer(
    g_s: &GridDensity,
    f: &GridDensity,
    axis: usize,
    cutoffs: &CutoffFamily,
    opts: &DmOptions,
    warm: Option<&SuffixField>,
) -> Result<(SuffixField, GridDensity, LayerStats)> {
    let grid = check_cube_pair(f, g_s)?;
    let n = grid.dim();
    if axis == 0 || axis >= n {
        return Err(Error::InvalidParameter(alloc::format!("layer axis {axis} must lie in 1..{n}")));
    }
    let layer = axis + 1;
    let (gmin, gmax, fmin) = (g_s.min(), g_s.max(), f.min());
    if opts.enforce_epsilon {
        let lhs = cutoffs.eps0() * gmax;
        let rhs = gmin.min(0.5 * fmin);
        if !(lhs < rhs) {
            return Err(Error::EpsilonConstraint { layer, lhs, rhs });
        }
    }
    let r = grid.res();
    let h = grid.spacing();
    let k_side = grid.side();
    let sc = r.pow((n - 1 - axis) as u32);
    let block = sc * r;
    let inner = r.pow(axis as u32);
    let outer = sc;

    let mut zeta = vec![0.0; inner];
    let mut w = vec![0.0; inner];
    let mut coords = vec![0.0; axis];
    for i in 0..inner {
        let mut rest = i;
        let mut wt = 1.0;
        for d in (0..axis).rev() {
            let j = rest % r;
            rest /= r;
            coords[d] = j as f64 * h;
            wt *= grid.weight_1d(j);
        }
        zeta[i] = cutoffs.zeta(axis, &coords);
        w[i] = wt;
    }
    let zmax = zeta.iter().copied().fold(0.0, f64::max);
    let zsum: f64 = zeta.iter().zip(&w).map(|(z, w)| z * w).sum();

    let gv = g_s.values();
    let fv = f.values();
    let mut u = SuffixField::zeros(n, axis, r, k_side);
    let mut g_next = vec![0.0; gv.len()];
    let mut pg = vec![vec![0.0; r]; inner];
    let mut cg = vec![vec![0.0; r]; inner];
    let mut pf = vec![0.0; r];
    let mut cf = vec![0.0; r];
    let mut big_f = vec![0.0; r];
    let mut fiber_u = vec![0.0; r];
    let mut du = vec![0.0; r];
    let mut stats = LayerStats {
        axis,
        newton_iterations: 0,
        functional_residual: 0.0,
        marginal_correction: 0.0,
        min_slope_factor: 1.0,
        min_dg: f64::INFINITY,
    };
    let (lo0, hi0) = (-cutoffs.eta() * k_side, cutoffs.eta() * k_side);

    for o in 0..outer {
        big_f.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..inner {
            let base = i * block + o;
            for k in 0..r {
                pg[i][k] = gv[base + k * sc];
                pf[k] = fv[base + k * sc];
            }
            fiber::cumulate(&pg[i], h, &mut cg[i]);
            fiber::cumulate(&pf, h, &mut cf);
            for k in 0..r {
                big_f[k] += w[i] * cf[k];
            }
        }
        let sys = Newton { p: &pg, c: &cg, zeta: &zeta, w: &w, h };
        let top_g = sys.g(k_side, 0.0);
        let top_f = big_f[r - 1];
        let rel = libm::fabs(top_g - top_f) / top_f.abs().max(f64::MIN_POSITIVE);
        if rel > opts.mass_tol {
            return Err(Error::MassMismatch { left: top_f, right: top_g, relative: rel });
        }
        let mut prev = 0.0;
        fiber_u.iter_mut().for_each(|x| *x = 0.0);
        for k in 1..r - 1 {
            let a = k as f64 * h;
            let target = big_f[k];
            let ftol = 1e-14 * top_f;
            let r0 = sys.g(a, 0.0) - target;
            if libm::fabs(r0) <= ftol {
                prev = 0.0;
                continue;
            }
            let guess = warm.map(|wf| wf.data()[k * sc + o]).unwrap_or(prev);
            // bracket
            let (mut lo, mut hi) = (lo0, hi0);
            while sys.g(a, lo) > target && lo > -k_side {
                lo = (2.0 * lo).max(-k_side);
            }
            while sys.g(a, hi) < target && hi < k_side {
                hi = (2.0 * hi).min(k_side);
            }
            if sys.g(a, lo) > target || sys.g(a, hi) < target {
                return Err(Error::NotBracketed { layer, height: k });
            }
            let mut b = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
            for _ in 0..400 {
                let res = sys.g(a, b) - target;
                if libm::fabs(res) <= ftol {
                    break;
                }
                if res > 0.0 {
                    hi = b;
                } else {
                    lo = b;
                }
                if hi - lo <= opts.root_tol {
                    break;
                }
                stats.newton_iterations += 1;
                let d = sys.dg(a, b);
                stats.min_dg = stats.min_dg.min(d);
                let nb = if d.is_finite() && d >= 1e-14 { b - res / d } else { 0.5 * (lo + hi) };
                b = if nb > lo && nb < hi { nb } else { 0.5 * (lo + hi) };
            }
            let res = libm::fabs(sys.g(a, b) - target);
            stats.functional_residual = stats.functional_residual.max(res);
            fiber_u[k] = b;
            prev = b;
        }
        // monotonicity over cells
        for k in 0..r - 1 {
            let slope = (fiber_u[k + 1] - fiber_u[k]) / h;
            let factor = 1.0 + zmax * slope.min(0.0);
            stats.min_slope_factor = stats.min_slope_factor.min(factor);
            if factor <= 0.0 {
                return Err(Error::StepRejected { layer, factor });
            }
        }
        for k in 0..r {
            u.data_mut()[k * sc + o] = fiber_u[k];
        }
        // pulled-back density g_{s-1}(x) = g_s(φ_s x) det ∇φ_s
        fiber::derivative(&fiber_u, h, &mut du);
        for i in 0..inner {
            let base = i * block + o;
            for k in 0..r {
                let y = k as f64 * h + zeta[i] * fiber_u[k];
                g_next[base + k * sc] = fiber::value(&pg[i], h, y) * (1.0 + zeta[i] * du[k]);
            }
        }
        // restore the marginals of the next layer exactly
        if zsum > 0.0 {
            for k in 0..r {
                let mut t = 0.0;
                let mut s = 0.0;
                for i in 0..inner {
                    let idx = i * block + k * sc + o;
                    t += w[i] * fv[idx];
                    s += w[i] * g_next[idx];
                }
                let c = (t - s) / zsum;
                stats.marginal_correction = stats.marginal_correction.max(libm::fabs(c));
                for i in 0..inner {
                    g_next[i * block + k * sc + o] += zeta[i] * c;
                }
            }
        }
    }
    let min = g_next.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NonPositiveIntermediate { layer: layer - 1, min });
    }
    let g_next = GridDensity::new(grid, g_next)?;
    Ok((u, g_next, stats))
}

/// The last step: monotone rearrangement along axis 0 of each fiber,
/// `∫_0^a f = ∫_0^{v(a)} g_1`, returning `u_1 = v − a`.
pub fn solve_first_layer(g1: &GridDensity, f: &GridDensity, opts: &DmOptions) -> Result<(SuffixField, LayerStats)> {
    let grid = check_cube_pair(f, g1)?;
    let n = grid.dim();
    let r = grid.res();
    let h = grid.spacing();
    let k_side = grid.side();
    let sc = r.pow((n - 1) as u32);
    let mut u = SuffixField::zeros(n, 0, r, k_side);
    let mut pg = vec![0.0; r];
    let mut cg = vec![0.0; r];
    let mut pf = vec![0.0; r];
    let mut cf = vec![0.0; r];
    let mut stats = LayerStats {
        axis: 0,
        newton_iterations: 0,
        functional_residual: 0.0,
        marginal_correction: 0.0,
        min_slope_factor: 1.0,
        min_dg: g1.min(),
    };
    let mut worst = (0.0f64, 0usize);
    for o in 0..sc {
        for k in 0..r {
            pg[k] = g1.values()[k * sc + o];
            pf[k] = f.values()[k * sc + o];
        }
        fiber::cumulate(&pg, h, &mut cg);
        fiber::cumulate(&pf, h, &mut cf);
        let rel = libm::fabs(cg[r - 1] - cf[r - 1]) / cf[r - 1];
        if rel > worst.0 {
            worst = (rel, o);
        }
        let mut prev_v = 0.0;
        for k in 1..r - 1 {
            // unscaled, so prefixes where f = g₁ map to themselves exactly
            let target = cf[k];
            let v = fiber::invert(&pg, &cg, h, target);
            let res = libm::fabs(fiber::integral(&pg, &cg, h, v) - target);
            stats.functional_residual = stats.functional_residual.max(res);
            let factor = (v - prev_v) / h;
            stats.min_slope_factor = stats.min_slope_factor.min(factor);
            u.data_mut()[k * sc + o] = v - k as f64 * h;
            prev_v = v;
        }
        stats.min_slope_factor = stats.min_slope_factor.min((k_side - prev_v) / h);
    }
    if worst.0 > opts.fiber_tol {
        let mut fib = vec![0usize; n - 1];
        let mut rest = worst.1;
        for d in (0..n - 1).rev() {
            fib[d] = rest % r;
            rest /= r;
        }
        return Err(Error::FiberMassMismatch { fiber: fib, relative: worst.0 });
    }
    if stats.min_slope_factor <= 0.0 {
        return Err(Error::StepRejected { layer: 1, factor: stats.min_slope_factor });
    }
    Ok((u, stats))
}

/// Checks `f = g` on the `η` collar (n ≥ 2).
fn check_support(f: &GridDensity, g: &GridDensity, cutoffs: &CutoffFamily, opts: &DmOptions) -> Result<()> {
    let grid = f.grid();
    if grid.dim() < 2 {
        return Ok(());
    }
    let collar = cutoffs.eta() * grid.side();
    let tol = opts.support_tol * f.max().max(g.max());
    let eps = 1e-12 * grid.side();
    let mut m = vec![0usize; grid.dim()];
    for i in 0..grid.len() {
        if libm::fabs(f.values()[i] - g.values()[i]) <= tol {
            continue;
        }
        grid.multi_index(i, &mut m);
        let inside = m.iter().all(|&j| {
            let x = grid.coord(j);
            x >= collar - eps && x <= grid.side() - collar + eps
        });
        if !inside {
            return Err(Error::SupportViolation { point: grid.point(i), collar });
        }
    }
    Ok(())
}

/// Builds the full solution, layers `n..2` then the first layer.
pub fn dm_solve(f: &GridDensity, g: &GridDensity, cutoffs: &CutoffFamily, opts: &DmOptions) -> Result<TriangularSolution> {
    let grid = check_cube_pair(f, g)?;
    let n = grid.dim();
    if cutoffs.n() != n || libm::fabs(cutoffs.side() - grid.side()) > 1e-12 * grid.side() {
        return Err(Error::ShapeMismatch("cutoff family does not match the grid".into()));
    }
    if n >= 2 {
        let ramp = cutoffs.ramp() * grid.side();
        if ramp < 2.0 * grid.spacing() {
            return Err(Error::UnresolvedCutoff { ramp, spacing: grid.spacing() });
        }
    }
    let (mf, mg) = (f.mass(), g.mass());
    let rel = libm::fabs(mf - mg) / mf;
    if rel > opts.mass_tol {
        return Err(Error::MassMismatch { left: mf, right: mg, relative: rel });
    }
    check_support(f, g, cutoffs, opts)?;
    if let Some(ws) = &opts.warm_start {
        if ws.len() != n || ws.iter().enumerate().any(|(c, s)| s.first() != c || s.res() != grid.res()) {
            return Err(Error::ShapeMismatch("warm start does not match the layer shapes".into()));
        }
    }
    let mut layers: Vec<Option<SuffixField>> = vec![None; n];
    let mut stats: Vec<LayerStats> = Vec::with_capacity(n);
    let mut intermediates = vec![g.clone()];
    let mut current = g.clone();
    for axis in (1..n).rev() {
        let warm = opts.warm_start.as_ref().map(|w| &w[axis]);
        let (u, next, st) = solve_layer(&current, f, axis, cutoffs, opts, warm)?;
        layers[axis] = Some(u);
        stats.push(st);
        intermediates.push(next.clone());
        current = next;
    }
    let (u1, st) = solve_first_layer(&current, f, opts)?;
    layers[0] = Some(u1);
    stats.push(st);
    let layers: Vec<SuffixField> = layers.into_iter().map(|l| l.expect("every layer solved")).collect();
    TriangularSolution::assemble(grid, cutoffs.clone(), layers, intermediates, stats, f, g, opts)
}
