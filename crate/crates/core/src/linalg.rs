//! Tiny dense helpers for Jacobians of dimension at most 4.

/// Determinant of the row-major `n × n` matrix `a` by partial pivoting.
pub fn det(a: &[f64], n: usize) -> f64 {
    let mut m = [0.0f64; 16];
    m[..n * n].copy_from_slice(&a[..n * n]);
    let mut d = 1.0;
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if libm::fabs(m[r * n + c]) > libm::fabs(m[p * n + c]) {
                p = r;
            }
        }
        if m[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
            }
            d = -d;
        }
        let piv = m[c * n + c];
        d *= piv;
        for r in c + 1..n {
            let f = m[r * n + c] / piv;
            for k in c..n {
                m[r * n + k] -= f * m[c * n + k];
            }
        }
    }
    d
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}
