//! Linearization of the corner-box functional at `u = 0`.
//!
//! `(dΨ(0)·X)_j(a) = Σ_{k≥j} ∫_{x̃_k ≤ ã_k} X_k(a_k, x̃_k) C_jk(a_j..a_k, x̃_k) dx̃_k`
//! with `C_jk = ∫ ζ_k g` over `Q^{j−1} × Π_{j≤i<k}[0, a_i]`. All integrals
//! are tensor trapezoid cumulatives on the density lattice.

use alloc::vec::Vec;

use crate::cube::CutoffFamily;
use crate::error::{Error, Result};
use crate::field::SuffixField;
use crate::grid::{GridDensity, Topology};

/// Components `Y_1..Y_n`; component `j` (0-based) depends on axes `j..n` only.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFieldVector {
    components: Vec<SuffixField>,
}

impl TriangularFieldVector {
    pub fn zeros(n: usize, res: usize, side: f64) -> Self {
        TriangularFieldVector { components: (0..n).map(|c| SuffixField::zeros(n, c, res, side)).collect() }
    }

    pub fn new(components: Vec<SuffixField>) -> Result<Self> {
        let n = components.len();
        let ok = n > 0
            && components.iter().enumerate().all(|(c, s)| {
                s.first() == c && s.n() == n && s.res() == components[0].res() && s.side() == components[0].side()
            });
        if !ok {
            return Err(Error::ShapeMismatch("components are not a triangular family".into()));
        }
        Ok(TriangularFieldVector { components })
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }
    pub fn res(&self) -> usize {
        self.components[0].res()
    }
    pub fn side(&self) -> f64 {
        self.components[0].side()
    }
    pub fn component(&self, j: usize) -> &SuffixField {
        &self.components[j]
    }
    pub fn components(&self) -> &[SuffixField] {
        &self.components
    }
    pub fn into_components(self) -> Vec<SuffixField> {
        self.components
    }

    pub fn sup_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.sup_abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &TriangularFieldVector) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.components.iter_mut() {
            a.scale(alpha);
        }
    }

    /// Component values at the far corner `(K, …, K)`.
    pub fn corner(&self) -> Vec<f64> {
        self.components.iter().map(|c| *c.data().last().unwrap()).collect()
    }
}

/// Sampled kernels `C_jk` for `j ≤ k`; `C_jk` lives on axes `j..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorKernel {
    n: usize,
    res: usize,
    side: f64,
    blocks: Vec<Vec<SuffixField>>,
}

impl OperatorKernel {
    /// `C_jk`, or `None` below the diagonal.
    pub fn block(&self, j: usize, k: usize) -> Option<&SuffixField> {
        if k < j {
            None
        } else {
            Some(&self.blocks[j][k - j])
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.n).map(|j| self.blocks[j][0].min()).fold(f64::INFINITY, f64::min)
    }
}

fn full_field(d: &GridDensity) -> Result<SuffixField> {
    let g = d.grid();
    if g.topology() != Topology::Cube {
        return Err(Error::InvalidGrid("the linearization lives on a cube grid".into()));
    }
    Ok(SuffixField::from_data(g.dim(), 0, g.res(), g.side(), d.values().to_vec()))
}

/// `Ψ_j(a) = ∫_{Q_{a;j}} w` for a density-like field `w` on the full lattice.
pub fn corner_integrals(w: &SuffixField) -> TriangularFieldVector {
    let n = w.n();
    let mut comps = Vec::with_capacity(n);
    let mut lead = w.clone();
    for j in 0..n {
        let mut c = lead.clone();
        for axis in j..n {
            c.cumulate(axis);
        }
        comps.push(c);
        if j + 1 < n {
            lead = lead.integrate_leading();
        }
    }
    TriangularFieldVector { components: comps }
}

/// `Ψ(0)`: corner-box integrals of `g − f`.
pub fn psi0(f: &GridDensity, g: &GridDensity) -> Result<TriangularFieldVector> {
    if f.grid() != g.grid() {
        return Err(Error::ShapeMismatch("f and g live on different grids".into()));
    }
    let mut w = full_field(g)?;
    w.axpy(-1.0, &full_field(f)?);
    Ok(corner_integrals(&w))
}

pub fn build_kernel(g: &GridDensity, cutoffs: &CutoffFamily) -> Result<OperatorKernel> {
    let grid = g.grid();
    let n = grid.dim();
    if cutoffs.n() != n {
        return Err(Error::ShapeMismatch("cutoff family has the wrong dimension".into()));
    }
    let base = full_field(g)?;
    let h = grid.spacing();
    let mut blocks: Vec<Vec<SuffixField>> = (0..n).map(|_| Vec::new()).collect();
    for k in 0..n {
        // ζ_k(x^{k}) g(x)
        let mut hk = base.clone();
        let mut m = alloc::vec![0usize; n];
        let mut prefix = alloc::vec![0.0; k];
        for i in 0..hk.data().len() {
            hk.multi_index(i, &mut m);
            for d in 0..k {
                prefix[d] = m[d] as f64 * h;
            }
            hk.data_mut()[i] *= cutoffs.zeta(k, &prefix);
        }
        let mut lead = hk;
        for j in 0..=k {
            let mut c = lead.clone();
            for axis in j..k {
                c.cumulate(axis);
            }
            blocks[j].push(c);
            if j < k {
                lead = lead.integrate_leading();
            }
        }
    }
    Ok(OperatorKernel { n, res: grid.res(), side: grid.side(), blocks })
}

fn check_shapes(kernel: &OperatorKernel, x: &TriangularFieldVector) -> Result<()> {
    if kernel.n != x.n() || kernel.res != x.res() || kernel.side != x.side() {
        return Err(Error::ShapeMismatch("field does not match the kernel lattice".into()));
    }
    Ok(())
}

/// `T_jk(a) = ∫_{x̃_k ≤ ã_k} X_k C_jk`, on axes `j..n`.
fn term(kernel: &OperatorKernel, xk: &SuffixField, j: usize, k: usize) -> SuffixField {
    let mut t = xk.broadcast_to(j);
    t.mul_assign(&kernel.blocks[j][k - j]);
    for axis in k + 1..kernel.n {
        t.cumulate(axis);
    }
    t
}

pub fn apply_dpsi0(kernel: &OperatorKernel, x: &TriangularFieldVector) -> Result<TriangularFieldVector> {
    check_shapes(kernel, x)?;
    let n = kernel.n;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = SuffixField::zeros(n, j, kernel.res, kernel.side);
        for k in j..n {
            acc.axpy(1.0, &term(kernel, &x.components[k], j, k));
        }
        out.push(acc);
    }
    Ok(TriangularFieldVector { components: out })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertOptions {
    /// Refuse components whose mixed partials differ between the lattice and
    /// its every-other-node sublattice by more than this (relative).
    pub smoothness_tol: f64,
    pub check_smoothness: bool,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions { smoothness_tol: 0.1, check_smoothness: true }
    }
}

fn mixed_partial(y: &SuffixField, from: usize) -> SuffixField {
    let mut d = y.clone();
    for axis in from..y.n() {
        d.differentiate(axis);
    }
    d
}

/// Relative mismatch of the mixed partial on the lattice vs. the sublattice.
pub fn smoothness_mismatch(y: &SuffixField) -> Option<f64> {
    let from = y.first() + 1;
    if from >= y.n() || y.res() % 2 == 0 || y.res() < 9 {
        return None;
    }
    let fine = mixed_partial(y, from);
    let coarse = mixed_partial(&y.coarsen(), from);
    let fine_on_coarse = fine.coarsen();
    let scale = fine.sup_abs().max(1e-9);
    let diff = fine_on_coarse.data().iter().zip(coarse.data()).fold(0.0f64, |m, (a, b)| m.max(libm::fabs(a - b)));
    Some(diff / scale)
}

/// Downward back-substitution: `X_n = Y_n / C_nn`, then
/// `X_l = ∂_{a_{l+1}}…∂_{a_n}(Y_l − Σ_{k>l} T_lk(X_k)) / C_ll`.
pub fn invert_dpsi0(kernel: &OperatorKernel, y: &TriangularFieldVector) -> Result<TriangularFieldVector> {
    invert_dpsi0_with(kernel, y, &InvertOptions::default())
}

pub fn invert_dpsi0_with(kernel: &OperatorKernel, y: &TriangularFieldVector, opts: &InvertOptions) -> Result<TriangularFieldVector> {
    check_shapes(kernel, y)?;
    let n = kernel.n;
    let min = kernel.min_diagonal();
    if !(min >= 1e-14) {
        return Err(Error::SingularKernel { min });
    }
    if opts.check_smoothness {
        for (l, c) in y.components.iter().enumerate() {
            if let Some(m) = smoothness_mismatch(c) {
                if m > opts.smoothness_tol {
                    return Err(Error::RoughField { component: l, mismatch: m });
                }
            }
        }
    }
    let mut xs: Vec<Option<SuffixField>> = (0..n).map(|_| None).collect();
    for l in (0..n).rev() {
        let mut rem = y.components[l].clone();
        for k in l + 1..n {
            let xk = xs[k].as_ref().expect("solved above");
            rem.axpy(-1.0, &term(kernel, xk, l, k));
        }
        let mut xl = mixed_partial(&rem, l + 1);
        for (v, c) in xl.data_mut().iter_mut().zip(kernel.blocks[l][0].data()) {
            *v /= c;
        }
        xs[l] = Some(xl);
    }
    Ok(TriangularFieldVector { components: xs.into_iter().map(|x| x.unwrap()).collect() })
}

/// `n! · max{(1/min g)(max g/min g)^{n−1}, 1}`.
pub fn mg_bound(g: &GridDensity, n: usize) -> f64 {
    mg_from_range(g.min(), g.max(), n)
}

pub fn mg_from_range(min: f64, max: f64, n: usize) -> f64 {
    let fact = (1..=n).fold(1.0, |a, i| a * i as f64);
    fact * ((1.0 / min) * libm::pow(max / min, (n - 1) as f64)).max(1.0)
}

/// `u₀ = −(dΨ(0))⁻¹ Ψ(0)`.
pub fn linearized_guess(f: &GridDensity, g: &GridDensity, cutoffs: &CutoffFamily) -> Result<TriangularFieldVector> {
    let kernel = build_kernel(g, cutoffs)?;
    let y = psi0(f, g)?;
    let mut x = invert_dpsi0(&kernel, &y)?;
    x.scale(-1.0);
    Ok(x)
}
