//! Modified Bessel functions of complex argument and the heat kernels.
//!
//! The Laplace-transformed heat equation `ΔU − sU = 0` has the fundamental
//! solution `G(s; x, y) = K₀(√s |x − y|) / 2π`, with `√s` the principal root.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Point;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_RADIUS: f64 = 3.0;
const ASYMPTOTIC_RADIUS: f64 = 17.0;

/// A Laplace-domain frequency `s ∈ ℂ \ (−∞, 0]` with its principal square root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceFrequency {
    s: Complex64,
    root: Complex64,
}

impl LaplaceFrequency {
    pub fn new(s: Complex64) -> Result<Self> {
        if !(s.re.is_finite() && s.im.is_finite()) || (s.im == 0.0 && s.re <= 0.0) {
            return Err(Error::Domain {
                function: "LaplaceFrequency",
                detail: format!("s = {s} lies on the closed negative real axis"),
            });
        }
        let root = s.sqrt();
        if root.re <= 0.0 {
            return Err(Error::Domain {
                function: "LaplaceFrequency",
                detail: format!("Re √s = {} is not positive for s = {s}", root.re),
            });
        }
        Ok(LaplaceFrequency { s, root })
    }

    pub fn real(s: f64) -> Result<Self> {
        Self::new(Complex64::new(s, 0.0))
    }

    pub fn value(&self) -> Complex64 {
        self.s
    }

    pub fn root(&self) -> Complex64 {
        self.root
    }

    /// `s / m`, the frequency seen by a medium with diffusivity `m`.
    pub fn scaled(&self, m: f64) -> Self {
        LaplaceFrequency {
            s: self.s / m,
            root: self.root / m.sqrt(),
        }
    }
}

fn check_arg(z: Complex64, function: &'static str) -> Result<()> {
    if !(z.re > 0.0) || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::Domain {
            function,
            detail: format!("requires Re z > 0, got z = {z}"),
        });
    }
    Ok(())
}

/// `K₀(z)` for `Re z > 0`.
pub fn bessel_k0(z: Complex64) -> Result<Complex64> {
    check_arg(z, "bessel_k0")?;
    Ok(k01_unchecked(z).0)
}

/// `K₁(z)` for `Re z > 0`.
pub fn bessel_k1(z: Complex64) -> Result<Complex64> {
    check_arg(z, "bessel_k1")?;
    Ok(k01_unchecked(z).1)
}

/// `(K₀(z), K₁(z))` for `Re z > 0`.
pub fn bessel_k01(z: Complex64) -> Result<(Complex64, Complex64)> {
    check_arg(z, "bessel_k01")?;
    Ok(k01_unchecked(z))
}

/// `(K₀(z), K₁(z))` without argument validation. `Re z > 0` is assumed.
#[inline]
pub(crate) fn k01_unchecked(z: Complex64) -> (Complex64, Complex64) {
    let r = z.norm();
    if z.re > 700.0 {
        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    } else if r <= SERIES_RADIUS {
        k01_series(z)
    } else if r < ASYMPTOTIC_RADIUS {
        k01_steed(z)
    } else {
        k01_asymptotic(z)
    }
}

/// Ascending series with the logarithmic term.
fn k01_series(z: Complex64) -> (Complex64, Complex64) {
    let half = z * 0.5;
    let q = half * half;
    let log_half = half.ln();
    // term_k = q^k / (k!)^2 ; I0 = Σ term_k ; Σ ψ(k+1) term_k
    let mut term = Complex64::new(1.0, 0.0);
    let mut i0 = term;
    let mut psi = -EULER_GAMMA;
    let mut s0 = term * psi;
    // for K1: t1_k = q^k / (k!(k+1)!) ; I1 = (z/2) Σ t1_k ; Σ (ψ(k+1)+ψ(k+2)) t1_k
    let mut t1 = Complex64::new(1.0, 0.0);
    let mut i1s = t1;
    let mut s1 = t1 * (psi + (1.0 - EULER_GAMMA));
    for k in 1..60 {
        let kf = k as f64;
        term *= q / (kf * kf);
        t1 *= q / (kf * (kf + 1.0));
        psi += 1.0 / kf;
        i0 += term;
        s0 += term * psi;
        i1s += t1;
        s1 += t1 * (2.0 * psi + 1.0 / (kf + 1.0));
        if term.norm_sqr() < 1e-34 * i0.norm_sqr() && t1.norm_sqr() < 1e-34 * i1s.norm_sqr() {
            break;
        }
    }
    let k0 = -log_half * i0 + s0;
    let i1 = half * i1s;
    let k1 = z.inv() + log_half * i1 - half * 0.5 * s1;
    (k0, k1)
}

/// Steed's continued fraction (Temme's CF2) for `K₀` and `K₁`.
fn k01_steed(z: Complex64) -> (Complex64, Complex64) {
    let one = Complex64::new(1.0, 0.0);
    let a1 = 0.25;
    let mut b = (one + z) * 2.0;
    let mut d = b.inv();
    let mut delh = d;
    let mut h = delh;
    let mut q1 = Complex64::new(0.0, 0.0);
    let mut q2 = one;
    let mut q = Complex64::new(a1, 0.0);
    let mut c = a1;
    let mut a = -a1;
    let mut s = one + q * delh;
    for i in 1..20_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += qnew * c;
        b += 2.0;
        d = (b + d * a).inv();
        delh *= b * d - one;
        h += delh;
        let dels = q * delh;
        s += dels;
        if dels.norm_sqr() < 1e-34 * s.norm_sqr() {
            break;
        }
    }
    let h = h * a1;
    let k0 = (PI / (2.0 * z)).sqrt() * (-z).exp() / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    (k0, k1)
}

/// Large-argument asymptotic expansion.
fn k01_asymptotic(z: Complex64) -> (Complex64, Complex64) {
    let pref = (PI / (2.0 * z)).sqrt() * (-z).exp();
    let inv8z = (8.0 * z).inv();
    let mut t0 = Complex64::new(1.0, 0.0);
    let mut t1 = Complex64::new(1.0, 0.0);
    let mut s0 = t0;
    let mut s1 = t1;
    for k in 1..80 {
        let odd = (2 * k - 1) as f64;
        let kf = k as f64;
        let n0 = t0 * ((0.0 - odd * odd) / kf) * inv8z;
        let n1 = t1 * ((4.0 - odd * odd) / kf) * inv8z;
        // stop before the divergent tail sets in
        if n0.norm_sqr() > t0.norm_sqr() || n1.norm_sqr() > t1.norm_sqr() {
            break;
        }
        t0 = n0;
        t1 = n1;
        s0 += t0;
        s1 += t1;
        if t0.norm_sqr() < 1e-34 && t1.norm_sqr() < 1e-34 {
            break;
        }
    }
    (pref * s0, pref * s1)
}

/// `G(s; x, y) = K₀(√s |x − y|) / 2π`.
pub fn fundamental_solution(s: &LaplaceFrequency, x: &Point, y: &Point) -> Result<Complex64> {
    let r = (x - y).norm();
    if r < 1e-14 * x.norm().max(y.norm()).max(1.0) {
        return Err(Error::SingularPoint { distance: r });
    }
    Ok(k01_unchecked(s.root() * r).0 / (2.0 * PI))
}

/// `∇_y G(s; x, y) = √s K₁(√s r) (x − y) / (2π r)`.
pub fn grad_y_fundamental_solution(
    s: &LaplaceFrequency,
    x: &Point,
    y: &Point,
) -> Result<[Complex64; 2]> {
    let d = x - y;
    let r = d.norm();
    if r < 1e-14 * x.norm().max(y.norm()).max(1.0) {
        return Err(Error::SingularPoint { distance: r });
    }
    let f = s.root() * k01_unchecked(s.root() * r).1 / (2.0 * PI * r);
    Ok([f * d.x, f * d.y])
}

/// Heat kernel `(4π m t)^{-1} exp(−|x − x_src|² / 4mt)` for `t > 0`, zero otherwise.
pub fn heat_kernel_time(m: f64, x: &Point, x_src: &Point, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let r2 = (x - x_src).norm_squared();
    (-r2 / (4.0 * m * t)).exp() / (4.0 * PI * m * t)
}

/// Time derivative and spatial gradient of [`heat_kernel_time`] with respect to `x`.
pub fn heat_kernel_time_derivatives(m: f64, x: &Point, x_src: &Point, t: f64) -> (f64, Point) {
    if t <= 0.0 {
        return (0.0, Point::zeros());
    }
    let g = heat_kernel_time(m, x, x_src, t);
    let d = x - x_src;
    let r2 = d.norm_squared();
    let dt = g * (r2 / (4.0 * m * t * t) - 1.0 / t);
    let grad = d * (-g / (2.0 * m * t));
    (dt, grad)
}
