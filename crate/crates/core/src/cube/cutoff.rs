//! Plateau cut-offs `ζ_s` on `Q^{s−1}(K)`.
//!
//! `κ` vanishes on the `ηK/2` collar, climbs along a C² quintic ramp of
//! width `wK` and equals 1 on the rest; `ζ_s` is the tensor product of
//! `κ` over the first `s − 1` axes divided by its mean, so its mean is 1.
//! All `ε` figures are volume-normalized (means over the cube).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quintic smoothstep, C² at both ends.
#[inline]
fn smoothstep(z: f64) -> f64 {
    z * z * z * (10.0 + z * (-15.0 + 6.0 * z))
}

/// `∫_0^z smoothstep`.
#[inline]
fn smoothstep_integral(z: f64) -> f64 {
    let z4 = z * z * z * z;
    z4 * (2.5 + z * (-3.0 + z))
}

/// Inverse of `smoothstep` on `[0, 1]`.
fn smoothstep_inverse(y: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut z = y;
    for _ in 0..100 {
        let r = smoothstep(z) - y;
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let d = 30.0 * z * z * (1.0 - z) * (1.0 - z);
        let next = if d > 1e-300 { z - r / d } else { 0.5 * (lo + hi) };
        z = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-16 {
            break;
        }
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    n: usize,
    side: f64,
    eta: f64,
    /// Ramp width as a fraction of the side.
    ramp: f64,
    eps0: f64,
    eps1: f64,
    /// Per `s = 2..=n`: (plateau value, mean |ζ_s − 1|).
    stats: Vec<(f64, f64)>,
}

impl CutoffFamily {
    /// Widest ramp whose `ε₀` meets the target; halves the ramp up to four times.
    pub fn build(n: usize, side: f64, eta: f64, eps0_target: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 0.5) {
            return Err(Error::InvalidParameter(alloc::format!("eta = {eta} must lie in (0, 1/2)")));
        }
        if !(eps0_target > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("eps0 target {eps0_target} must be positive")));
        }
        if n == 0 || !(side > 0.0) {
            return Err(Error::InvalidParameter("need n >= 1 and a positive side".into()));
        }
        let mut ramp = 0.5 * eta;
        for _ in 0..5 {
            let fam = Self::with_ramp(n, side, eta, ramp);
            if fam.eps0 <= eps0_target {
                return Ok(fam);
            }
            ramp *= 0.5;
        }
        Err(Error::CutoffInfeasible { target: eps0_target, limit: Self::limit(n, eta) })
    }

    /// Infimum of `ε₀` over ramp widths (the zero-width plateau).
    pub fn limit(n: usize, eta: f64) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let q = libm::pow(1.0 - eta, (n - 1) as f64);
        (1.0 / q - 1.0).max(2.0 * (1.0 - q))
    }

    pub fn with_ramp(n: usize, side: f64, eta: f64, ramp: f64) -> Self {
        let m = 1.0 - eta - ramp;
        let mut stats = Vec::new();
        let mut eps0 = 0.0f64;
        let mut eps1 = 0.0f64;
        for s in 2..=n {
            let d = s - 1;
            let plateau = libm::pow(m, -(d as f64));
            let l1 = 2.0 * deficit_mean(d, eta, ramp, plateau);
            eps0 = eps0.max(plateau - 1.0).max(l1);
            eps1 = eps1.max(l1);
            stats.push((plateau, l1));
        }
        CutoffFamily { n, side, eta, ramp, eps0, eps1, stats }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn side(&self) -> f64 {
        self.side
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn ramp(&self) -> f64 {
        self.ramp
    }
    pub fn eps0(&self) -> f64 {
        self.eps0
    }
    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    /// `sup ζ` for the cut-off attached to axis `axis` (0-based; axis 0 has `ζ ≡ 1`).
    pub fn plateau(&self, axis: usize) -> f64 {
        if axis == 0 {
            1.0
        } else {
            self.stats[axis - 1].0
        }
    }

    /// Mean of `|ζ − 1|` for axis `axis`.
    pub fn l1_defect(&self, axis: usize) -> f64 {
        if axis == 0 {
            0.0
        } else {
            self.stats[axis - 1].1
        }
    }

    /// One-dimensional profile `κ(x)` on `[0, K]`.
    pub fn kappa(&self, x: f64) -> f64 {
        let t = x / self.side;
        let t = t.min(1.0 - t);
        let a = 0.5 * self.eta;
        if t <= a {
            0.0
        } else if t >= a + self.ramp {
            1.0
        } else {
            smoothstep((t - a) / self.ramp)
        }
    }

    /// `ζ` for axis `axis`, evaluated at the preceding coordinates `prefix`
    /// (`prefix.len() == axis`).
    pub fn zeta(&self, axis: usize, prefix: &[f64]) -> f64 {
        debug_assert_eq!(prefix.len(), axis);
        if axis == 0 {
            return 1.0;
        }
        let mut p = self.plateau(axis);
        for &x in prefix {
            p *= self.kappa(x);
            if p == 0.0 {
                break;
            }
        }
        p
    }

    /// Distance from the boundary inside which every `ζ` vanishes.
    pub fn collar(&self) -> f64 {
        0.5 * self.eta * self.side
    }
}

/// Mean over `[0,1]^d` of `(1 − Π κ_i · P)_+`.
///
/// Each `κ_i` is 0 with probability `η`, 1 with probability `1 − η − 2w`
/// and `smoothstep(Z)` with probability `2w`, `Z` uniform.
fn deficit_mean(d: usize, eta: f64, w: f64, plateau: f64) -> f64 {
    let p_zero = eta;
    let p_one = 1.0 - eta - 2.0 * w;
    let p_ramp = 2.0 * w;
    // enumerate counts of zero / ramp axes; ones fill the rest
    let mut total = 0.0;
    for zeros in 0..=d {
        for ramps in 0..=(d - zeros) {
            let ones = d - zeros - ramps;
            let mult = multinomial(d, zeros, ramps);
            let prob = mult * libm::pow(p_zero, zeros as f64) * libm::pow(p_ramp, ramps as f64) * libm::pow(p_one, ones as f64);
            if prob == 0.0 {
                continue;
            }
            let e = if zeros > 0 { 1.0 } else { ramp_deficit(ramps, plateau) };
            total += prob * e;
        }
    }
    total
}

fn multinomial(d: usize, a: usize, b: usize) -> f64 {
    let f = |k: usize| (1..=k).fold(1.0, |acc, i| acc * i as f64);
    f(d) / (f(a) * f(b) * f(d - a - b))
}

/// `E[(1 − t Π_{i≤r} smoothstep(Z_i))_+]` for iid uniform `Z_i`.
fn ramp_deficit(r: usize, t: f64) -> f64 {
    if r == 0 {
        return (1.0 - t).max(0.0);
    }
    if r == 1 {
        if t <= 1.0 {
            return 1.0 - 0.5 * t;
        }
        let z = smoothstep_inverse(1.0 / t);
        return z - t * smoothstep_integral(z);
    }
    // integrate over the first ramp variable; the integrand has a kink where t·S(z) = 1
    let f = |z: f64| ramp_deficit(r - 1, t * smoothstep(z));
    if t > 1.0 {
        let zk = smoothstep_inverse(1.0 / t);
        gauss_legendre(&f, 0.0, zk, 16) + gauss_legendre(&f, zk, 1.0, 16)
    } else {
        gauss_legendre(&f, 0.0, 1.0, 16)
    }
}

const GL_NODES: [f64; 10] = [
    -0.973_906_528_517_171_7,
    -0.865_063_366_688_984_5,
    -0.679_409_568_299_024_4,
    -0.433_395_394_129_247_2,
    -0.148_874_338_981_631_2,
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 10] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
    0.295_524_224_714_752_87,
    0.269_266_719_309_996_35,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_14,
];

/// Composite 10-point Gauss–Legendre over `panels` equal panels.
pub(crate) fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            s += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * s
}
