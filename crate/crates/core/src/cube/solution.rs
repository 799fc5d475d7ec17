use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cutoff::CutoffFamily;
use super::diagnostics::{choose_subdivision, estimate_dm};
use super::solve::{DmOptions, LayerStats};
use crate::error::{Error, Result};
use crate::field::SuffixField;
use crate::grid::{Grid, GridDensity};
use crate::linalg;
use crate::linear::mg_bound;
use crate::measure::{box_discrepancy, AtomicMeasure};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub residual_sup: f64,
    pub u_sup: f64,
    /// `Lid₁(m_f, m_g)` on (possibly coarsened) atomized densities.
    pub d_m: Option<f64>,
    pub box_value: f64,
    pub mg: f64,
    pub c4: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub n0: u32,
    pub lipschitz_g: f64,
    pub newton_iterations: usize,
    pub functional_residual: f64,
    pub marginal_correction: f64,
    pub min_slope_factor: f64,
    /// Largest weak-form box defect and the Monte Carlo σ of that box.
    pub box_defect: Option<f64>,
    pub box_defect_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDefect {
    pub corner: Vec<f64>,
    pub volume: f64,
    /// `∫_E f − ∫_{ψ(E)} g`.
    pub defect: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub pointwise: f64,
    pub boxes: Vec<BoxDefect>,
}

impl ResidualReport {
    pub fn worst_box(&self) -> Option<&BoxDefect> {
        self.boxes.iter().max_by(|a, b| a.defect.abs().total_cmp(&b.defect.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbarReport {
    /// Sampled `sup |ψ − id|`.
    pub forward: f64,
    /// Sampled `sup |ψ⁻¹ − id|`.
    pub inverse: f64,
    pub dbar: f64,
}

/// `ψ = φ_n ∘ … ∘ φ_1` stored layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularSolution {
    grid: Grid,
    cutoffs: CutoffFamily,
    layers: Vec<SuffixField>,
    intermediates: Vec<GridDensity>,
    stats: Vec<LayerStats>,
    diagnostics: Diagnostics,
}

impl TriangularSolution {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        grid: Grid,
        cutoffs: CutoffFamily,
        layers: Vec<SuffixField>,
        intermediates: Vec<GridDensity>,
        stats: Vec<LayerStats>,
        f: &GridDensity,
        g: &GridDensity,
        opts: &DmOptions,
    ) -> Result<Self> {
        let mut sol = TriangularSolution { grid, cutoffs, layers, intermediates, stats, diagnostics: Diagnostics::default() };
        let n = grid.dim();
        let lg = g.modulus_of_continuity();
        let mut d = Diagnostics {
            residual_sup: sol.residual_pointwise(f, g)?,
            u_sup: sol.u_sup(),
            d_m: None,
            box_value: box_discrepancy(&AtomicMeasure::atomize(f), &AtomicMeasure::atomize(g), &grid)?,
            mg: mg_bound(g, n),
            c4: (8.0 * g.max()).max(4.0),
            eps0: sol.cutoffs.eps0(),
            eps1: sol.cutoffs.eps1(),
            n0: choose_subdivision(g),
            lipschitz_g: lg,
            newton_iterations: sol.stats.iter().map(|s| s.newton_iterations).sum(),
            functional_residual: sol.stats.iter().fold(0.0, |m, s| m.max(s.functional_residual)),
            marginal_correction: sol.stats.iter().fold(0.0, |m, s| m.max(s.marginal_correction)),
            min_slope_factor: sol.stats.iter().fold(1.0, |m, s| m.min(s.min_slope_factor)),
            box_defect: None,
            box_defect_sigma: None,
        };
        if opts.metric_atoms > 0 {
            d.d_m = Some(estimate_dm(f, g, opts.metric_atoms)?);
        }
        if opts.boxes > 0 {
            let boxes = sol.box_defects(f, g, opts.mc_samples, opts.boxes, opts.seed)?;
            if let Some(w) = boxes.iter().max_by(|a, b| a.defect.abs().total_cmp(&b.defect.abs())) {
                d.box_defect = Some(w.defect.abs());
                d.box_defect_sigma = Some(w.sigma);
            }
        }
        sol.diagnostics = d;
        Ok(sol)
    }

    /// The identity map on `grid` (every layer zero).
    pub fn identity(grid: Grid, cutoffs: CutoffFamily) -> Self {
        let n = grid.dim();
        let layers = (0..n).map(|c| SuffixField::zeros(n, c, grid.res(), grid.side())).collect();
        TriangularSolution { grid, cutoffs, layers, intermediates: Vec::new(), stats: Vec::new(), diagnostics: Diagnostics::default() }
    }

    /// Reassembles a stored solution (diagnostics as recorded).
    pub fn from_layers(grid: Grid, cutoffs: CutoffFamily, layers: Vec<SuffixField>, diagnostics: Diagnostics) -> Result<Self> {
        let n = grid.dim();
        if layers.len() != n
            || layers.iter().enumerate().any(|(c, l)| l.first() != c || l.res() != grid.res() || l.n() != n)
        {
            return Err(Error::ShapeMismatch("layers do not match the grid".into()));
        }
        Ok(TriangularSolution { grid, cutoffs, layers, intermediates: Vec::new(), stats: Vec::new(), diagnostics })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn cutoffs(&self) -> &CutoffFamily {
        &self.cutoffs
    }
    /// `u` of the layer acting on axis `axis`, sampled over axes `axis..n`.
    pub fn layer(&self, axis: usize) -> &SuffixField {
        &self.layers[axis]
    }
    pub fn layers(&self) -> &[SuffixField] {
        &self.layers
    }
    /// `g = g_n, g_{n−1}, …, g_1`.
    pub fn intermediates(&self) -> &[GridDensity] {
        &self.intermediates
    }
    pub fn layer_stats(&self) -> &[LayerStats] {
        &self.stats
    }
    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn u_sup(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.sup_abs()))
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| l.data().iter().all(|v| *v == 0.0))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let k = self.grid.side();
        let tol = 1e-12 * k;
        if x.len() != self.grid.dim() || x.iter().any(|v| !(*v >= -tol && *v <= k + tol)) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok(y)
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let mut x = y.to_vec();
        self.inverse_in_place(&mut x);
        Ok(x)
    }

    /// Layers in order `φ_1, φ_2, …`; `ζ_j` sees the already updated prefix.
    pub fn apply_in_place(&self, y: &mut [f64]) {
        let k = self.grid.side();
        for c in 0..self.layers.len() {
            let z = self.cutoffs.zeta(c, &y[..c]);
            if z == 0.0 {
                continue;
            }
            let u = self.layers[c].eval(&y[c..]);
            y[c] = (y[c] + z * u).clamp(0.0, k);
        }
    }

    /// Reverse order; each layer is a monotone piecewise-linear map of its
    /// own coordinate, inverted exactly cell by cell.
    pub fn inverse_in_place(&self, x: &mut [f64]) {
        let n = self.layers.len();
        let r = self.grid.res();
        let h = self.grid.spacing();
        let k_side = self.grid.side();
        let mut buf = [0.0f64; 4];
        for c in (0..n).rev() {
            let z = self.cutoffs.zeta(c, &x[..c]);
            if z == 0.0 {
                continue;
            }
            let layer = &self.layers[c];
            let dims = n - c;
            buf[..dims].copy_from_slice(&x[c..]);
            let target = x[c];
            let mut at = |k: usize| -> f64 {
                buf[0] = k as f64 * h;
                k as f64 * h + z * layer.eval(&buf[..dims])
            };
            // largest node k with at(k) <= target
            let (mut lo, mut hi) = (0usize, r - 1);
            let (mut flo, fhi) = (at(0), at(r - 1));
            if target <= flo {
                x[c] = 0.0;
                continue;
            }
            if target >= fhi {
                x[c] = k_side;
                continue;
            }
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                let fm = at(mid);
                if fm <= target {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let fhi = at(hi);
            let t = if fhi > flo { (target - flo) / (fhi - flo) } else { 0.0 };
            x[c] = (lo as f64 + t.clamp(0.0, 1.0)) * h;
        }
    }

    /// Images of all grid nodes, flat `n` coordinates per node.
    pub fn node_images(&self) -> Vec<f64> {
        let n = self.grid.dim();
        let mut out = Vec::with_capacity(self.grid.len() * n);
        for i in 0..self.grid.len() {
            let mut p = self.grid.point(i);
            self.apply_in_place(&mut p);
            out.extend(p);
        }
        out
    }

    /// `sup |g(ψ(x)) det ∇ψ(x) − f(x)|` over interior nodes, `∇ψ` by centered differences.
    pub fn residual_pointwise(&self, f: &GridDensity, g: &GridDensity) -> Result<f64> {
        Ok(self.residual_field(f, g)?.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v))))
    }

    /// `g(ψ(x)) det ∇ψ(x) − f(x)` at every node; zero on the boundary layer.
    pub fn residual_field(&self, f: &GridDensity, g: &GridDensity) -> Result<Vec<f64>> {
        let grid = self.grid;
        if f.grid() != &grid || g.grid() != &grid {
            return Err(Error::ShapeMismatch("densities do not match the solution grid".into()));
        }
        let n = grid.dim();
        let r = grid.res();
        let h = grid.spacing();
        let img = self.node_images();
        let mut m = vec![0usize; n];
        let mut jac = [0.0f64; 16];
        let mut out = vec![0.0; grid.len()];
        for i in 0..grid.len() {
            grid.multi_index(i, &mut m);
            if m.iter().any(|&j| j == 0 || j == r - 1) {
                continue;
            }
            for din in 0..n {
                let s = grid.stride(din);
                for dout in 0..n {
                    jac[dout * n + din] = (img[(i + s) * n + dout] - img[(i - s) * n + dout]) / (2.0 * h);
                }
            }
            let det = linalg::det(&jac, n);
            out[i] = g.eval(&img[i * n..(i + 1) * n])? * det - f.values()[i];
        }
        Ok(out)
    }

    /// Weak-form defects `∫_E f − ∫_{ψ(E)} g` on random corner boxes `E = Π[0, c_i]`.
    ///
    /// `∫_E f` and `∫_E g` are exact for the multilinear interpolants; the
    /// remainder `∫ g (1[ψ⁻¹y ∈ E] − 1[y ∈ E]) dy` is estimated by Monte Carlo
    /// with shared samples.
    pub fn box_defects(&self, f: &GridDensity, g: &GridDensity, samples: usize, boxes: usize, seed: u64) -> Result<Vec<BoxDefect>> {
        let grid = self.grid;
        let n = grid.dim();
        let k = grid.side();
        let vol = grid.volume();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::with_capacity(samples * n);
        let mut pre = Vec::with_capacity(samples * n);
        let mut gy = Vec::with_capacity(samples);
        for _ in 0..samples {
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * k).collect();
            gy.push(g.eval(&y)?);
            let mut x = y.clone();
            self.inverse_in_place(&mut x);
            ys.extend_from_slice(&y);
            pre.extend(x);
        }
        let mut out = Vec::with_capacity(boxes);
        for _ in 0..boxes {
            let corner: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * k).collect();
            let inside = |p: &[f64]| p.iter().zip(&corner).all(|(a, c)| *a <= *c);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..samples {
                let a = if inside(&pre[j * n..(j + 1) * n]) { 1.0 } else { 0.0 };
                let b = if inside(&ys[j * n..(j + 1) * n]) { 1.0 } else { 0.0 };
                let d = gy[j] * (a - b);
                s1 += d;
                s2 += d * d;
            }
            let ns = samples as f64;
            let mean = s1 / ns;
            let var = (s2 / ns - mean * mean).max(0.0);
            let sigma = vol * libm::sqrt(var / ns);
            let exact_f = box_integral(f, &corner);
            let exact_g = box_integral(g, &corner);
            let defect = exact_f - (exact_g + vol * mean);
            let volume = corner.iter().product();
            out.push(BoxDefect { corner, volume, defect, sigma });
        }
        Ok(out)
    }

    pub fn residual(&self, f: &GridDensity, g: &GridDensity, samples: usize, boxes: usize, seed: u64) -> Result<ResidualReport> {
        Ok(ResidualReport { pointwise: self.residual_pointwise(f, g)?, boxes: self.box_defects(f, g, samples, boxes, seed)? })
    }

    /// Sampled `d̄(ψ, id)`: sups over nodes and over preimages of nodes, so
    /// both directions see the same point pairs.
    pub fn dbar_identity(&self) -> DbarReport {
        let n = self.grid.dim();
        let mut fwd = 0.0f64;
        let mut inv = 0.0f64;
        for i in 0..self.grid.len() {
            let x = self.grid.point(i);
            let mut y = x.clone();
            self.apply_in_place(&mut y);
            fwd = fwd.max(linalg::norm(&diff(&y, &x)));
            let mut back = y.clone();
            self.inverse_in_place(&mut back);
            inv = inv.max(linalg::norm(&diff(&back, &y)));
            let mut p = x.clone();
            self.inverse_in_place(&mut p);
            inv = inv.max(linalg::norm(&diff(&p, &x)));
            let mut q = p.clone();
            self.apply_in_place(&mut q);
            fwd = fwd.max(linalg::norm(&diff(&q, &p)));
        }
        let _ = n;
        DbarReport { forward: fwd, inverse: inv, dbar: fwd.max(inv) }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `∫_0^c φ_i` for every hat function of a uniform lattice on `[0, K]`.
fn hat_weights(r: usize, h: f64, c: f64) -> Vec<f64> {
    let mut w = vec![0.0; r];
    let clip = |lo: f64, hi: f64| (lo, hi.min(c));
    for i in 0..r {
        let xi = i as f64 * h;
        if i > 0 {
            let (lo, hi) = clip(xi - h, xi);
            if hi > lo {
                // ∫ (x − lo0)/h over [lo, hi], lo0 = xi − h
                let a = lo - (xi - h);
                let b = hi - (xi - h);
                w[i] += (b * b - a * a) / (2.0 * h);
            }
        }
        if i + 1 < r {
            let (lo, hi) = clip(xi, xi + h);
            if hi > lo {
                let a = xi + h - hi;
                let b = xi + h - lo;
                w[i] += (b * b - a * a) / (2.0 * h);
            }
        }
    }
    w
}

/// Exact integral of the multilinear interpolant of `d` over `Π[0, c_i]`.
pub(crate) fn box_integral(d: &GridDensity, corner: &[f64]) -> f64 {
    let grid = d.grid();
    let n = grid.dim();
    let r = grid.res();
    let h = grid.spacing();
    let mut cur: Vec<f64> = d.values().to_vec();
    for axis in (0..n).rev() {
        let w = hat_weights(r, h, corner[axis]);
        let next_len = cur.len() / r;
        let mut next = vec![0.0; next_len];
        for (o, slot) in next.iter_mut().enumerate() {
            let row = &cur[o * r..(o + 1) * r];
            *slot = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        }
        cur = next;
    }
    cur[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::dm_solve;
    use crate::instances;

    #[test]
    fn hat_weights_integrate_linears() {
        let grid = Grid::cube(2, 2.0, 9).unwrap();
        let d = GridDensity::from_fn(grid, |x| 1.0 + x[0] + 0.5 * x[1]).unwrap();
        let c = [1.3, 0.7];
        let exact = c[0] * c[1] + 0.5 * c[0] * c[0] * c[1] + 0.25 * c[0] * c[1] * c[1];
        assert!((box_integral(&d, &c) - exact).abs() < 1e-13);
        assert!((box_integral(&d, &[2.0, 2.0]) - d.mass()).abs() < 1e-13);
    }

    #[test]
    fn identity_solution_round_trip() {
        let inst = instances::interior_bump(65, 0.2).unwrap();
        let fam = CutoffFamily::build(2, 1.0, 0.1, 0.3).unwrap();
        let sol = dm_solve(&inst.g, &inst.g, &fam, &DmOptions { boxes: 10, mc_samples: 2000, ..DmOptions::default() }).unwrap();
        assert!(sol.is_identity());
        assert_eq!(sol.diagnostics().u_sup, 0.0);
        assert!(sol.diagnostics().residual_sup < 1e-13);
        assert_eq!(sol.apply(&[0.3, 0.6]).unwrap(), vec![0.3, 0.6]);
        assert!(sol.diagnostics().box_defect.unwrap() <= 3.0 * sol.diagnostics().box_defect_sigma.unwrap() + 1e-15);
    }

    #[test]
    fn solved_instance_round_trip_and_collar() {
        let inst = instances::interior_bump(65, 0.2).unwrap();
        let fam = CutoffFamily::build(2, 1.0, 0.1, 0.3).unwrap();
        let sol = dm_solve(&inst.f, &inst.g, &fam, &DmOptions::fast()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let y = sol.apply(&x).unwrap();
            let back = sol.apply_inverse(&y).unwrap();
            worst = worst.max((back[0] - x[0]).abs()).max((back[1] - x[1]).abs());
        }
        assert!(worst <= 1e-8, "{worst}");
        for x in [[0.0, 0.5], [0.04, 0.3], [0.5, 0.97], [1.0, 1.0]] {
            assert_eq!(sol.apply(&x).unwrap(), x.to_vec());
        }
        for l in sol.layers() {
            assert_eq!(*l.data().last().unwrap(), 0.0);
        }
        let d = sol.dbar_identity();
        assert!((d.forward - d.inverse).abs() <= 1e-8);
        assert!(d.forward > 0.0);
    }
}
