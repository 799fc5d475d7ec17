//! One-dimensional piecewise-linear profiles on a uniform lattice `[0, K]`.
//!
//! The solvers integrate the linear interpolant exactly, so the fiber
//! antiderivative is piecewise quadratic and its derivative is the
//! interpolated density itself.

/// Trapezoid cumulative of `p` with spacing `h`; `out[0] = 0`.
pub fn cumulate(p: &[f64], h: f64, out: &mut [f64]) {
    out[0] = 0.0;
    for k in 1..p.len() {
        out[k] = out[k - 1] + 0.5 * h * (p[k - 1] + p[k]);
    }
}

#[inline]
fn cell(t: f64, h: f64, n: usize) -> usize {
    let i = libm::floor(t / h);
    if i <= 0.0 {
        0
    } else if i as usize >= n - 1 {
        n - 2
    } else {
        i as usize
    }
}

/// Linear interpolant of `p` at `t`, constant beyond the ends.
#[inline]
pub fn value(p: &[f64], h: f64, t: f64) -> f64 {
    let n = p.len();
    let top = (n - 1) as f64 * h;
    if t <= 0.0 {
        return p[0];
    }
    if t >= top {
        return p[n - 1];
    }
    let i = cell(t, h, n);
    let s = (t - i as f64 * h) / h;
    p[i] + s * (p[i + 1] - p[i])
}

/// `∫_0^t` of the linear interpolant of `p`, extended linearly beyond
/// `[0, K]` with the end values. `cum` is the trapezoid cumulative of `p`.
#[inline]
pub fn integral(p: &[f64], cum: &[f64], h: f64, t: f64) -> f64 {
    let n = p.len();
    let top = (n - 1) as f64 * h;
    if t <= 0.0 {
        return t * p[0];
    }
    if t >= top {
        return cum[n - 1] + (t - top) * p[n - 1];
    }
    let i = cell(t, h, n);
    let d = t - i as f64 * h;
    cum[i] + d * p[i] + 0.5 * d * d * (p[i + 1] - p[i]) / h
}

/// Solves `integral(p, cum, h, t) = target` for `t` in `[0, K]` when `p > 0`.
pub fn invert(p: &[f64], cum: &[f64], h: f64, target: f64) -> f64 {
    let n = p.len();
    if target <= 0.0 {
        return 0.0;
    }
    if target >= cum[n - 1] {
        return (n - 1) as f64 * h;
    }
    // last index with cum[i] <= target
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cum[mid] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    let r = target - cum[i];
    let a = p[i];
    let slope = (p[i + 1] - p[i]) / h;
    // 0.5*slope*d^2 + a*d - r = 0, stable root
    let disc = (a * a + 2.0 * slope * r).max(0.0);
    let d = 2.0 * r / (a + libm::sqrt(disc));
    (i as f64 * h + d).clamp(i as f64 * h, (i + 1) as f64 * h)
}

/// Derivative of samples by centered differences, second-order one-sided at the ends.
pub fn derivative(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    if n == 2 {
        let d = (u[1] - u[0]) / h;
        out[0] = d;
        out[1] = d;
        return;
    }
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    out[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    for k in 1..n - 1 {
        out[k] = (u[k + 1] - u[k - 1]) / (2.0 * h);
    }
}
