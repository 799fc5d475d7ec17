//! Real fields sampled over the trailing axes `first..n` of a cube lattice.
//!
//! Triangular objects (layers, kernel blocks, field components) all depend
//! on a suffix of the coordinates only, so they share this representation.

use alloc::vec;
use alloc::vec::Vec;

use crate::fiber;

#[derive(Debug, Clone, PartialEq)]
pub struct SuffixField {
    n: usize,
    first: usize,
    res: usize,
    side: f64,
    data: Vec<f64>,
}

impl SuffixField {
    pub fn zeros(n: usize, first: usize, res: usize, side: f64) -> Self {
        assert!(first < n, "suffix must keep at least one axis");
        let len = res.pow((n - first) as u32);
        SuffixField { n, first, res, side, data: vec![0.0; len] }
    }

    pub fn from_data(n: usize, first: usize, res: usize, side: f64, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), res.pow((n - first) as u32));
        SuffixField { n, first, res, side, data }
    }

    /// Samples `f` at the lattice points; `f` receives the suffix coordinates.
    pub fn from_fn(n: usize, first: usize, res: usize, side: f64, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(n, first, res, side);
        let mut m = vec![0usize; n - first];
        let mut x = vec![0.0; n - first];
        let h = out.spacing();
        for i in 0..out.data.len() {
            out.multi_index(i, &mut m);
            for d in 0..m.len() {
                x[d] = m[d] as f64 * h;
            }
            out.data[i] = f(&x);
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn first(&self) -> usize {
        self.first
    }
    pub fn res(&self) -> usize {
        self.res
    }
    pub fn side(&self) -> f64 {
        self.side
    }
    pub fn dims(&self) -> usize {
        self.n - self.first
    }
    pub fn spacing(&self) -> f64 {
        self.side / (self.res - 1) as f64
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat stride of the global axis `axis` (must be in the suffix).
    pub fn stride(&self, axis: usize) -> usize {
        debug_assert!(axis >= self.first && axis < self.n);
        self.res.pow((self.n - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.dims()).rev() {
            out[d] = flat % self.res;
            flat /= self.res;
        }
    }

    pub fn index(&self, local: &[usize]) -> usize {
        local.iter().fold(0, |acc, &i| acc * self.res + i)
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation at suffix coordinates `x` (clamped to the cube).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let dims = self.dims();
        debug_assert_eq!(x.len(), dims);
        let h = self.spacing();
        let r = self.res;
        let mut lo = [0usize; 4];
        let mut t = [0.0f64; 4];
        for d in 0..dims {
            let y = x[d].clamp(0.0, self.side);
            let mut i = libm::floor(y / h) as usize;
            if i >= r - 1 {
                i = r - 2;
            }
            lo[d] = i;
            t[d] = ((y - i as f64 * h) / h).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = 0;
            for d in 0..dims {
                let up = (corner >> (dims - 1 - d)) & 1;
                w *= if up == 1 { t[d] } else { 1.0 - t[d] };
                idx = idx * r + lo[d] + up;
            }
            if w != 0.0 {
                acc += w * self.data[idx];
            }
        }
        acc
    }

    /// Values along the fiber of global axis `axis` at lattice index `at` of
    /// the other axes (given as a base flat index with the axis entry zero).
    pub fn fiber_into(&self, axis: usize, base: usize, out: &mut [f64]) {
        let s = self.stride(axis);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.data[base + k * s];
        }
    }

    /// Base flat indices of all fibers along `axis`.
    pub fn fiber_bases(&self, axis: usize) -> Vec<usize> {
        let s = self.stride(axis);
        let r = self.res;
        let count = self.data.len() / r;
        (0..count).map(|f| (f / s) * s * r + f % s).collect()
    }

    fn map_fibers(&mut self, axis: usize, mut op: impl FnMut(&[f64], &mut [f64])) {
        let r = self.res;
        let s = self.stride(axis);
        let mut inp = vec![0.0; r];
        let mut out = vec![0.0; r];
        for base in self.fiber_bases(axis) {
            self.fiber_into(axis, base, &mut inp);
            op(&inp, &mut out);
            for k in 0..r {
                self.data[base + k * s] = out[k];
            }
        }
    }

    /// Replaces each fiber along `axis` by its trapezoid cumulative.
    pub fn cumulate(&mut self, axis: usize) {
        let h = self.spacing();
        self.map_fibers(axis, |p, o| fiber::cumulate(p, h, o));
    }

    /// Replaces each fiber along `axis` by its finite-difference derivative.
    pub fn differentiate(&mut self, axis: usize) {
        let h = self.spacing();
        self.map_fibers(axis, |p, o| fiber::derivative(p, h, o));
    }

    /// Integrates out the leading axis (trapezoid), dropping it.
    pub fn integrate_leading(&self) -> SuffixField {
        let r = self.res;
        let h = self.spacing();
        let mut out = SuffixField::zeros(self.n, self.first + 1, r, self.side);
        let block = out.data.len();
        for k in 0..r {
            let w = if k == 0 || k == r - 1 { 0.5 * h } else { h };
            for (o, v) in out.data.iter_mut().zip(&self.data[k * block..(k + 1) * block]) {
                *o += w * v;
            }
        }
        out
    }

    /// Repeats this field along the leading axes down to `first`.
    pub fn broadcast_to(&self, first: usize) -> SuffixField {
        assert!(first <= self.first);
        let reps = self.res.pow((self.first - first) as u32);
        let mut data = Vec::with_capacity(reps * self.data.len());
        for _ in 0..reps {
            data.extend_from_slice(&self.data);
        }
        SuffixField { n: self.n, first, res: self.res, side: self.side, data }
    }

    pub fn mul_assign(&mut self, other: &SuffixField) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &SuffixField) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    /// Samples on every other lattice point (requires odd `res`).
    pub fn coarsen(&self) -> SuffixField {
        assert!(self.res % 2 == 1);
        let rc = (self.res + 1) / 2;
        let dims = self.dims();
        let mut out = SuffixField::zeros(self.n, self.first, rc, self.side);
        let mut m = vec![0usize; dims];
        for i in 0..out.data.len() {
            out.multi_index(i, &mut m);
            let fine = m.iter().fold(0, |acc, &j| acc * self.res + 2 * j);
            out.data[i] = self.data[fine];
        }
        out
    }
}
