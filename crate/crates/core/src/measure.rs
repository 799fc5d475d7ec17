//! Atomic measures and the bounded-Lipschitz metrics `Lid_b`.
//!
//! `Lid_b(μ, ν) = sup |Σ f_i (μ_i − ν_i)|` over `f` that are 1-Lipschitz
//! on the atoms and valued in `[0, b]`. The linear program is solved
//! exactly through its dual, a min-cost transshipment on the atoms plus a
//! ground node (atom → ground costs `b`, ground → atom costs 0).

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity, Topology};

pub const DEFAULT_ATOM_CAP: usize = 2000;
pub const BRUTE_FORCE_CAP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Cube { side: f64 },
    Torus { side: f64 },
}

impl Domain {
    pub fn of(grid: &Grid) -> Self {
        match grid.topology() {
            Topology::Cube => Domain::Cube { side: grid.side() },
            Topology::Torus => Domain::Torus { side: grid.side() },
        }
    }

    pub fn side(&self) -> f64 {
        match *self {
            Domain::Cube { side } | Domain::Torus { side } => side,
        }
    }

    /// Euclidean distance on the cube, flat quotient distance on the torus.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            let mut d = libm::fabs(x - y);
            if let Domain::Torus { side } = *self {
                d %= side;
                d = d.min(side - d);
            }
            s += d * d;
        }
        libm::sqrt(s)
    }

    /// Brings a point into the domain (wrapping on the torus) or fails.
    fn normalize(&self, p: &mut [f64]) -> Result<()> {
        match *self {
            Domain::Cube { side } => {
                let tol = 1e-12 * side;
                for x in p.iter_mut() {
                    if !(*x >= -tol && *x <= side + tol) {
                        return Err(Error::Domain { point: p.to_vec() });
                    }
                    *x = x.clamp(0.0, side);
                }
            }
            Domain::Torus { side } => {
                for x in p.iter_mut() {
                    if !x.is_finite() {
                        return Err(Error::Domain { point: p.to_vec() });
                    }
                    let mut y = *x - side * libm::floor(*x / side);
                    if y >= side {
                        y -= side;
                    }
                    *x = y;
                }
            }
        }
        Ok(())
    }
}

fn cmp_points(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Finite nonnegative combination of point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    dim: usize,
    domain: Domain,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    /// Builds a measure from flat coordinates; coincident atoms are merged.
    pub fn new(dim: usize, domain: Domain, mut points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} coordinates for {} atoms of dim {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(alloc::format!("atom weight {w} is not a nonnegative real")));
        }
        for p in points.chunks_mut(dim) {
            domain.normalize(p)?;
        }
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&i, &j| cmp_points(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]));
        let mut pts = Vec::with_capacity(points.len());
        let mut ws: Vec<f64> = Vec::with_capacity(weights.len());
        for &i in &order {
            let p = &points[i * dim..(i + 1) * dim];
            if let Some(last) = ws.last_mut() {
                if cmp_points(&pts[pts.len() - dim..], p) == Ordering::Equal {
                    *last += weights[i];
                    continue;
                }
            }
            pts.extend_from_slice(p);
            ws.push(weights[i]);
        }
        Ok(AtomicMeasure { dim, domain, points: pts, weights: ws })
    }

    pub fn empty(dim: usize, domain: Domain) -> Self {
        AtomicMeasure { dim, domain, points: Vec::new(), weights: Vec::new() }
    }

    /// One atom per node, weighted by quadrature weight times value.
    pub fn atomize(d: &GridDensity) -> Self {
        let g = d.grid();
        let mut points = Vec::with_capacity(g.len() * g.dim());
        let mut weights = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            points.extend(g.point(i));
            weights.push(g.weight(i) * d.values()[i]);
        }
        // nodes are distinct and inside the domain
        AtomicMeasure { dim: g.dim(), domain: Domain::of(g), points, weights }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn domain(&self) -> Domain {
        self.domain
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Relocates every atom; weights are unchanged.
    pub fn pushforward(&self, mut map: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut points = Vec::with_capacity(self.points.len());
        for i in 0..self.len() {
            let q = map(self.point(i));
            if q.len() != self.dim {
                return Err(Error::ShapeMismatch("map changed the dimension".into()));
            }
            points.extend(q);
        }
        Self::new(self.dim, self.domain, points, self.weights.clone())
    }

    /// Cloud-in-cell deposit onto the nodes of `grid` (same domain); mass is kept.
    pub fn deposit(&self, grid: &Grid) -> Result<Self> {
        if grid.dim() != self.dim || Domain::of(grid) != self.domain {
            return Err(Error::ShapeMismatch("deposit grid does not match the measure's domain".into()));
        }
        let n = self.dim;
        let r = grid.res();
        let h = grid.spacing();
        let mut acc = vec![0.0; grid.len()];
        for a in 0..self.len() {
            let p = self.point(a);
            let mut lo = [0usize; 4];
            let mut hi = [0usize; 4];
            let mut t = [0.0; 4];
            for d in 0..n {
                let x = p[d];
                let mut i = libm::floor(x / h) as usize;
                if grid.is_torus() {
                    i = i.min(r - 1);
                    lo[d] = i;
                    hi[d] = (i + 1) % r;
                } else {
                    i = i.min(r - 2);
                    lo[d] = i;
                    hi[d] = i + 1;
                }
                t[d] = ((x - i as f64 * h) / h).clamp(0.0, 1.0);
            }
            for corner in 0..(1usize << n) {
                let mut w = self.weights[a];
                let mut idx = 0;
                for d in 0..n {
                    let up = (corner >> (n - 1 - d)) & 1 == 1;
                    w *= if up { t[d] } else { 1.0 - t[d] };
                    idx = idx * r + if up { hi[d] } else { lo[d] };
                }
                acc[idx] += w;
            }
        }
        let mut points = Vec::with_capacity(grid.len() * n);
        let mut weights = Vec::new();
        for (i, w) in acc.into_iter().enumerate() {
            if w > 0.0 {
                points.extend(grid.point(i));
                weights.push(w);
            }
        }
        Ok(AtomicMeasure { dim: n, domain: self.domain, points, weights })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lp,
    Brute,
    BoxLowerBound,
}

/// Result of a `Lid_b` evaluation with its optimal test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub value: f64,
    pub b: f64,
    pub method: Method,
    /// Optimal test function at the merged support atoms.
    pub certificate: Vec<f64>,
    /// Merged support, flat coordinates.
    pub support: Vec<f64>,
    /// `μ − ν` on the merged support.
    pub difference: Vec<f64>,
}

impl MetricReport {
    /// `|Σ certificate · (μ − ν)|`.
    pub fn certified_value(&self) -> f64 {
        libm::fabs(self.certificate.iter().zip(&self.difference).map(|(f, c)| f * c).sum::<f64>())
    }
}

struct Support {
    dim: usize,
    domain: Domain,
    points: Vec<f64>,
    diff: Vec<f64>,
}

fn merged_support(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<Support> {
    if mu.dim != nu.dim || mu.domain != nu.domain {
        return Err(Error::ShapeMismatch("measures live on different domains".into()));
    }
    let dim = mu.dim;
    let (mut i, mut j) = (0, 0);
    let mut points = Vec::new();
    let mut diff = Vec::new();
    while i < mu.len() || j < nu.len() {
        let o = if i == mu.len() {
            Ordering::Greater
        } else if j == nu.len() {
            Ordering::Less
        } else {
            cmp_points(mu.point(i), nu.point(j))
        };
        match o {
            Ordering::Less => {
                points.extend_from_slice(mu.point(i));
                diff.push(mu.weights[i]);
                i += 1;
            }
            Ordering::Greater => {
                points.extend_from_slice(nu.point(j));
                diff.push(-nu.weights[j]);
                j += 1;
            }
            Ordering::Equal => {
                points.extend_from_slice(mu.point(i));
                diff.push(mu.weights[i] - nu.weights[j]);
                i += 1;
                j += 1;
            }
        }
    }
    Ok(Support { dim, domain: mu.domain, points, diff })
}

fn check_b(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(alloc::format!("b = {b} must be positive")))
    }
}

/// `Lid_b(μ, ν)` by exact linear programming, with the default atom cap.
pub fn lid_metric(mu: &AtomicMeasure, nu: &AtomicMeasure, b: f64) -> Result<MetricReport> {
    lid_metric_capped(mu, nu, b, DEFAULT_ATOM_CAP)
}

pub fn lid_metric_capped(mu: &AtomicMeasure, nu: &AtomicMeasure, b: f64, cap: usize) -> Result<MetricReport> {
    check_b(b)?;
    let s = merged_support(mu, nu)?;
    // atoms where μ = ν never help: any optimal f on the rest extends to them
    let active: Vec<usize> = (0..s.diff.len()).filter(|&i| s.diff[i] != 0.0).collect();
    let n = active.len();
    if n > cap {
        return Err(Error::TooManyAtoms { count: n, cap });
    }
    let pt = |i: usize| &s.points[i * s.dim..(i + 1) * s.dim];
    let mut dist = vec![0.0; n * n];
    for a in 0..n {
        for c in a + 1..n {
            let d = s.domain.distance(pt(active[a]), pt(active[c]));
            dist[a * n + c] = d;
            dist[c * n + a] = d;
        }
    }
    let pos: Vec<f64> = active.iter().map(|&i| s.diff[i]).collect();
    let neg: Vec<f64> = pos.iter().map(|c| -c).collect();
    let (v1, f1) = transshipment(&pos, &dist, b);
    let (v2, f2) = transshipment(&neg, &dist, b);
    let (value, reduced) = if v1 >= v2 { (v1, f1) } else { (v2, f2) };
    let certificate = (0..s.diff.len())
        .map(|i| {
            let ext = active
                .iter()
                .zip(&reduced)
                .fold(b, |m, (&j, fj)| m.min(fj + s.domain.distance(pt(i), pt(j))));
            ext.clamp(0.0, b)
        })
        .collect();
    Ok(MetricReport {
        value: value.max(0.0),
        b,
        method: Method::Lp,
        certificate,
        support: s.points,
        difference: s.diff,
    })
}

/// Successive shortest paths on the dense transshipment network. Returns
/// the optimal value `max Σ f_i c_i` and the maximizing `f`.
fn transshipment(c: &[f64], dist: &[f64], b: f64) -> (f64, Vec<f64>) {
    let n = c.len();
    let v = n + 1;
    let ground = n;
    let cost = |u: usize, w: usize| -> f64 {
        if u == ground {
            0.0
        } else if w == ground {
            b
        } else {
            dist[u * n + w]
        }
    };
    let mut excess: Vec<f64> = c.to_vec();
    excess.push(-c.iter().sum::<f64>());
    let scale = c.iter().map(|x| libm::fabs(*x)).sum::<f64>().max(f64::MIN_POSITIVE);
    let tiny = 1e-15 * scale;
    for e in excess.iter_mut() {
        if libm::fabs(*e) <= tiny {
            *e = 0.0;
        }
    }
    // inflow[u * v + w] = flow on arc w -> u
    let mut inflow = vec![0.0; v * v];
    let mut pot = vec![0.0; v];
    let mut dist_to = vec![0.0; v];
    let mut done = vec![false; v];
    let mut pred = vec![usize::MAX; v];
    let mut pred_rev = vec![false; v];

    loop {
        if !excess.iter().any(|&e| e > tiny) {
            break;
        }
        for u in 0..v {
            dist_to[u] = if excess[u] > tiny { 0.0 } else { f64::INFINITY };
            done[u] = false;
            pred[u] = usize::MAX;
        }
        let mut sink = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for w in 0..v {
                if !done[w] && dist_to[w] < best {
                    best = dist_to[w];
                    u = w;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if excess[u] < -tiny {
                sink = u;
                break;
            }
            let du = dist_to[u];
            for w in 0..v {
                if done[w] || w == u {
                    continue;
                }
                let fwd = (cost(u, w) + pot[u] - pot[w]).max(0.0);
                let mut cand = du + fwd;
                let mut rev = false;
                if inflow[u * v + w] > 0.0 {
                    let r = (-cost(w, u) + pot[u] - pot[w]).max(0.0);
                    if du + r < cand {
                        cand = du + r;
                        rev = true;
                    }
                }
                if cand < dist_to[w] {
                    dist_to[w] = cand;
                    pred[w] = u;
                    pred_rev[w] = rev;
                }
            }
        }
        // only rounding leftovers can leave a surplus without a deficit
        if sink == usize::MAX {
            break;
        }
        let dt = dist_to[sink];
        for u in 0..v {
            pot[u] += dist_to[u].min(dt);
        }
        // bottleneck
        let mut delta = -excess[sink];
        let mut w = sink;
        while pred[w] != usize::MAX {
            let u = pred[w];
            if pred_rev[w] {
                delta = delta.min(inflow[u * v + w]);
            }
            w = u;
        }
        let source = w;
        delta = delta.min(excess[source]);
        let mut w = sink;
        while pred[w] != usize::MAX {
            let u = pred[w];
            if pred_rev[w] {
                let x = &mut inflow[u * v + w];
                *x = if *x <= delta { 0.0 } else { *x - delta };
            } else {
                inflow[w * v + u] += delta;
            }
            w = u;
        }
        excess[source] = if excess[source] <= delta + tiny { 0.0 } else { excess[source] - delta };
        excess[sink] = if -excess[sink] <= delta + tiny { 0.0 } else { excess[sink] + delta };
    }
    let f: Vec<f64> = (0..n).map(|i| (pot[ground] - pot[i]).clamp(0.0, b)).collect();
    let value = f.iter().zip(c).map(|(a, b)| a * b).sum();
    (value, f)
}

/// Exact `Lid_b` by enumerating every vertex of the constraint polytope.
///
/// A vertex fixes each `f_i` by one tight constraint: `f_i = 0`, `f_i = b`
/// or `f_i = f_j ± d_ij`, with the tight graph acyclic. Only for tiny inputs.
pub fn brute_force_lid(mu: &AtomicMeasure, nu: &AtomicMeasure, b: f64) -> Result<f64> {
    check_b(b)?;
    let s = merged_support(mu, nu)?;
    let n = s.diff.len();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::TooManyAtoms { count: n, cap: BRUTE_FORCE_CAP });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = s.domain.distance(&s.points[i * s.dim..(i + 1) * s.dim], &s.points[j * s.dim..(j + 1) * s.dim]);
        }
    }
    let options = 2 * n; // 0, b, then (j, +), (j, -) for j != i
    let mut choice = vec![0usize; n];
    let mut val = vec![0.0; n];
    let mut state = vec![0u8; n];
    let mut best = 0.0f64;

    fn resolve(i: usize, n: usize, b: f64, dist: &[f64], choice: &[usize], val: &mut [f64], state: &mut [u8]) -> bool {
        match state[i] {
            2 => return true,
            1 => return false,
            _ => {}
        }
        state[i] = 1;
        let c = choice[i];
        let v = if c == 0 {
            0.0
        } else if c == 1 {
            b
        } else {
            let k = (c - 2) / 2;
            let j = if k >= i { k + 1 } else { k };
            if !resolve(j, n, b, dist, choice, val, state) {
                return false;
            }
            if (c - 2) % 2 == 0 {
                val[j] + dist[i * n + j]
            } else {
                val[j] - dist[i * n + j]
            }
        };
        val[i] = v;
        state[i] = 2;
        true
    }

    'outer: loop {
        state.iter_mut().for_each(|s| *s = 0);
        let mut ok = true;
        for i in 0..n {
            if !resolve(i, n, b, &dist, &choice, &mut val, &mut state) {
                ok = false;
                break;
            }
        }
        if ok {
            let tol = 1e-12 * (1.0 + b);
            let feasible = (0..n).all(|i| {
                val[i] >= -tol && val[i] <= b + tol && (0..n).all(|j| val[i] - val[j] <= dist[i * n + j] + tol)
            });
            if feasible {
                let obj: f64 = val.iter().zip(&s.diff).map(|(f, c)| f * c).sum();
                best = best.max(libm::fabs(obj));
            }
        }
        for i in 0..n {
            choice[i] += 1;
            if choice[i] < options {
                continue 'outer;
            }
            choice[i] = 0;
        }
        break;
    }
    Ok(best)
}

/// `sup |μ(B) − ν(B)|` over corner boxes `B = Π[0, a_i]` with `a` on the grid.
///
/// An atom at coordinate `x` counts toward every corner `a ≥ x`; on the
/// torus the corner `a = K` (the full period) is included.
pub fn box_discrepancy(mu: &AtomicMeasure, nu: &AtomicMeasure, grid: &Grid) -> Result<f64> {
    let s = merged_support(mu, nu)?;
    if s.dim != grid.dim() || Domain::of(grid) != s.domain {
        return Err(Error::ShapeMismatch("grid does not match the measures' domain".into()));
    }
    let n = s.dim;
    let r = grid.res();
    let h = grid.spacing();
    let m = if grid.is_torus() { r + 1 } else { r };
    let len = m.pow(n as u32);
    let mut hist = vec![0.0; len];
    for a in 0..s.diff.len() {
        let p = &s.points[a * n..(a + 1) * n];
        let mut idx = 0;
        for &x in p {
            let k = libm::ceil(x / h - 1e-9).max(0.0) as usize;
            idx = idx * m + k.min(m - 1);
        }
        hist[idx] += s.diff[a];
    }
    for axis in 0..n {
        let stride = m.pow((n - 1 - axis) as u32);
        for i in 0..len {
            if (i / stride) % m != 0 {
                hist[i] += hist[i - stride];
            }
        }
    }
    Ok(hist.iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT: Domain = Domain::Cube { side: 1.0 };

    fn atom(x: &[f64], w: f64) -> AtomicMeasure {
        AtomicMeasure::new(x.len(), UNIT, x.to_vec(), vec![w]).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, atoms: usize, dim: usize, domain: Domain) -> AtomicMeasure {
        let pts: Vec<f64> = (0..atoms * dim).map(|_| rng.gen::<f64>() * domain.side()).collect();
        let ws: Vec<f64> = (0..atoms).map(|_| rng.gen::<f64>()).collect();
        AtomicMeasure::new(dim, domain, pts, ws).unwrap()
    }

    #[test]
    fn atomize_weights() {
        let g = Grid::cube(1, 1.0, 3).unwrap();
        let m = AtomicMeasure::atomize(&GridDensity::constant(g, 1.0).unwrap());
        assert_eq!(m.weights(), &[0.25, 0.5, 0.25]);
        assert_eq!(m.point(1), &[0.5]);
        let t = Grid::torus(1, 1.0, 4).unwrap();
        let m = AtomicMeasure::atomize(&GridDensity::constant(t, 1.0).unwrap());
        assert_eq!(m.weights(), &[0.25; 4]);
    }

    #[test]
    fn merges_duplicates() {
        let m = AtomicMeasure::new(1, UNIT, vec![0.5, 0.2, 0.5], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[2.0, 4.0]);
        let t = AtomicMeasure::new(1, Domain::Torus { side: 1.0 }, vec![1.25, 0.25], vec![1.0, 1.0]).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn lid_examples() {
        let mu = atom(&[0.0], 1.0);
        assert_eq!(lid_metric(&mu, &mu, 1.0).unwrap().value, 0.0);
        for x in [0.1, 0.37, 0.9, 1.0] {
            let r = lid_metric(&mu, &atom(&[x], 1.0), 1.0).unwrap();
            assert!((r.value - x).abs() < 1e-12);
        }
        let two = atom(&[0.3, 0.4], 2.0);
        let zero = AtomicMeasure::empty(2, UNIT);
        let r = lid_metric(&two, &zero, 1.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!((brute_force_lid(&two, &zero, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(brute_force_lid(&zero, &zero, 1.0).unwrap(), 0.0);
        let w = brute_force_lid(&atom(&[0.5], 0.3), &atom(&[0.5], 0.8), 1.0).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lid_far_atoms_saturate_at_b() {
        let d = Domain::Cube { side: 10.0 };
        let mu = AtomicMeasure::new(1, d, vec![0.0], vec![1.0]).unwrap();
        let nu = AtomicMeasure::new(1, d, vec![7.0], vec![1.0]).unwrap();
        for b in [0.5, 1.0, 2.0] {
            assert!((lid_metric(&mu, &nu, b).unwrap().value - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_measure(&mut rng, 6, 1, UNIT);
        let nu = random_measure(&mut rng, 6, 1, UNIT);
        assert!(matches!(lid_metric_capped(&mu, &nu, 1.0, 10), Err(Error::TooManyAtoms { count: 12, cap: 10 })));
        assert!(matches!(brute_force_lid(&mu, &nu, 1.0), Err(Error::TooManyAtoms { .. })));
    }

    #[test]
    fn lid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..20 {
            let dom = if t % 2 == 0 { UNIT } else { Domain::Torus { side: 1.0 } };
            let dim = 1 + t % 3;
            let mu = random_measure(&mut rng, 1 + t % 3, dim, dom);
            let nu = random_measure(&mut rng, 1 + (t / 3) % 3, dim, dom);
            let b = [0.5, 1.0, 2.0][t % 3];
            let lp = lid_metric(&mu, &nu, b).unwrap();
            let bf = brute_force_lid(&mu, &nu, b).unwrap();
            assert!((lp.value - bf).abs() <= 1e-9, "{} vs {}", lp.value, bf);
            assert!((lp.value - lp.certified_value()).abs() <= 1e-9);
        }
    }

    #[test]
    fn box_examples() {
        let g = Grid::cube(1, 1.0, 101).unwrap();
        let uni = AtomicMeasure::atomize(&GridDensity::constant(g, 1.0).unwrap());
        assert_eq!(box_discrepancy(&uni, &uni, &g).unwrap(), 0.0);
        let a = atom(&[0.0], 1.0);
        let v = box_discrepancy(&uni, &a, &g).unwrap();
        assert!((v - 1.0).abs() <= g.spacing());
    }

    #[test]
    fn pushforward_preserves_mass() {
        let t = Grid::torus(2, 1.0, 8).unwrap();
        let uni = AtomicMeasure::atomize(&GridDensity::constant(t, 1.0).unwrap());
        let moved = uni.pushforward(|p| vec![p[0] + 0.25, p[1] - 0.5]).unwrap();
        assert_eq!(moved, uni);
        let c = Grid::cube(1, 1.0, 5).unwrap();
        let m = AtomicMeasure::atomize(&GridDensity::constant(c, 1.0).unwrap());
        assert!(matches!(m.pushforward(|p| vec![p[0] + 0.5]), Err(Error::Domain { .. })));
        assert_eq!(m.pushforward(|p| p.to_vec()).unwrap(), m);
    }

    #[test]
    fn deposit_keeps_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dom in [UNIT, Domain::Torus { side: 1.0 }] {
            let mu = random_measure(&mut rng, 40, 2, dom);
            let g = Grid::new(2, 1.0, 5, if dom == UNIT { Topology::Cube } else { Topology::Torus }).unwrap();
            let c = mu.deposit(&g).unwrap();
            assert!((c.total_mass() - mu.total_mass()).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn metric_axioms(seed in 0u64..10_000, torus in proptest::bool::ANY) {
            let dom = if torus { Domain::Torus { side: 1.0 } } else { UNIT };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_measure(&mut rng, 1 + (seed % 10) as usize, 2, dom);
            let b = random_measure(&mut rng, 1 + (seed / 10 % 10) as usize, 2, dom);
            let c = random_measure(&mut rng, 1 + (seed / 100 % 10) as usize, 2, dom);
            let ab = lid_metric(&a, &b, 1.0).unwrap().value;
            let ba = lid_metric(&b, &a, 1.0).unwrap().value;
            let bc = lid_metric(&b, &c, 1.0).unwrap().value;
            let ac = lid_metric(&a, &c, 1.0).unwrap().value;
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(ab > 0.0);
            prop_assert_eq!(lid_metric(&a, &a, 1.0).unwrap().value, 0.0);
        }

        #[test]
        fn bi_lipschitz_family(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_measure(&mut rng, 5, 2, UNIT);
            let b = random_measure(&mut rng, 4, 2, UNIT);
            let l1 = lid_metric(&a, &b, 1.0).unwrap().value;
            for bb in [0.5, 1.0, 2.0] {
                let lb = lid_metric(&a, &b, bb).unwrap().value;
                prop_assert!(lb >= bb.min(1.0) * l1 - 1e-9);
                prop_assert!(lb <= bb.max(1.0) * l1 + 1e-9);
            }
        }

        #[test]
        fn certificate_is_feasible(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_measure(&mut rng, 12, 2, UNIT);
            let b = random_measure(&mut rng, 9, 2, UNIT);
            let r = lid_metric(&a, &b, 0.7).unwrap();
            let n = r.certificate.len();
            for i in 0..n {
                prop_assert!(r.certificate[i] >= 0.0 && r.certificate[i] <= 0.7);
                for j in 0..n {
                    let d = UNIT.distance(&r.support[2 * i..2 * i + 2], &r.support[2 * j..2 * j + 2]);
                    prop_assert!(r.certificate[i] - r.certificate[j] <= d + 1e-9);
                }
            }
            prop_assert!((r.value - r.certified_value()).abs() <= 1e-9);
        }

        #[test]
        fn pushforward_continuity(seed in 0u64..10_000, amp in 0.0f64..0.05) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dom = Domain::Torus { side: 1.0 };
            let mu = random_measure(&mut rng, 20, 2, dom);
            let moved = mu.pushforward(|p| vec![p[0] + amp * libm::sin(6.0 * p[1]), p[1] + amp]).unwrap();
            let v = lid_metric(&moved, &mu, 1.0).unwrap().value;
            prop_assert!(v <= amp * core::f64::consts::SQRT_2 * mu.total_mass() + 1e-9);
        }

        #[test]
        fn box_bounded_by_total_variation(seed in 0u64..10_000) {
            let g = Grid::cube(2, 1.0, 9).unwrap();
            let vals = |s: u64| -> Vec<f64> { (0..81).map(|i| 0.5 + ((i as u64 * 7919 + s) % 13) as f64 / 13.0).collect() };
            let a = AtomicMeasure::atomize(&GridDensity::new(g, vals(seed)).unwrap());
            let b = AtomicMeasure::atomize(&GridDensity::new(g, vals(seed + 5)).unwrap());
            let tv: f64 = a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(box_discrepancy(&a, &b, &g).unwrap() <= tv + 1e-12);
        }

        #[test]
        fn density_embedding_is_lipschitz(seed in 0u64..10_000) {
            let g = Grid::cube(2, 1.0, 6).unwrap();
            let vals = |s: u64| -> Vec<f64> { (0..36).map(|i| 1.0 + ((i as u64 * 104729 + s) % 17) as f64 / 40.0).collect() };
            let f = GridDensity::new(g, vals(seed)).unwrap();
            let f2 = GridDensity::new(g, vals(seed * 3 + 1)).unwrap();
            let sup = f.values().iter().zip(f2.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let v = lid_metric(&AtomicMeasure::atomize(&f), &AtomicMeasure::atomize(&f2), 1.0).unwrap().value;
            prop_assert!(v <= g.volume() * sup + 1e-12);
        }
    }
}
