//! Voigt line shape (Gaussian convolved with Lorentzian).
//!
//! The profile is `Re w(z) / (sigma sqrt(2 pi))` with `z = (x + i gamma) / (sigma sqrt 2)`
//! and `w` the Faddeeva function. `w` is evaluated with Weideman's rational
//! approximation (N = 32) except close to the real axis far from the centre,
//! where `Re w` is dominated by terms far below the rational approximation's
//! absolute error. There `w = exp(-z^2) + (2i/sqrt(pi)) D(z)` is used with the
//! asymptotic series of the Dawson function `D`, summed in polar form so that
//! tiny imaginary parts keep full relative precision.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::integrate;

const WEIDEMAN_N: usize = 32;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6;

struct Weideman {
    l: f64,
    coeffs: [f64; WEIDEMAN_N],
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = WEIDEMAN_N as f64;
        let m = 2 * WEIDEMAN_N;
        let l = (n / SQRT_2).sqrt();
        // f(k) = exp(-t^2) (L^2 + t^2) at t = L tan(k pi / 2M), k = -M+1 .. M-1
        let samples: Vec<(f64, f64)> = (-(m as i64) + 1..m as i64)
            .map(|k| {
                let theta = k as f64 * PI / m as f64;
                let t = l * (theta / 2.0).tan();
                (k as f64, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        let mut coeffs = [0.0; WEIDEMAN_N];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let order = (j + 1) as f64;
            let s: f64 = samples
                .iter()
                .map(|&(k, f)| f * (PI * k * order / m as f64).cos())
                .sum();
            *c = s / (2 * m) as f64;
        }
        Weideman { l, coeffs }
    })
}

/// Faddeeva function `w(z) = exp(-z^2) erfc(-iz)` for `Im z >= 0` (rational approximation).
pub fn faddeeva(z: Complex64) -> Complex64 {
    let Weideman { l, coeffs } = weideman();
    let iz = Complex64::new(-z.im, z.re);
    let denom = Complex64::new(*l, 0.0) - iz;
    let zz = (Complex64::new(*l, 0.0) + iz) / denom;
    let mut p = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        p = p * zz + c;
    }
    2.0 * p / (denom * denom) + FRAC_1_SQRT_PI / denom
}

/// `Re w(x + iy)` for `y >= 0` with full relative accuracy in the far tails.
pub fn faddeeva_re(x: f64, y: f64) -> f64 {
    let ax = x.abs();
    if ax >= 4.5 && y < 1.0 {
        return re_w_near_axis(ax, y);
    }
    faddeeva(Complex64::new(ax, y)).re
}

fn re_w_near_axis(x: f64, y: f64) -> f64 {
    let gauss = (y * y - x * x).exp() * (2.0 * x * y).cos();
    if y == 0.0 {
        return gauss;
    }
    let r = x.hypot(y);
    let phi = y.atan2(x);
    let inv_r2 = 1.0 / (r * r);
    // D(z) ~ sum_k a_k z^-(2k+1), a_0 = 1/2, a_{k+1} = a_k (2k+1)/2
    let mut a = 0.5;
    let mut rpow = 1.0 / r;
    let mut sum = 0.0;
    for k in 0..80 {
        let m = (2 * k + 1) as f64;
        let term = a * rpow * (m * phi).sin();
        sum += term;
        let ratio = m / 2.0 * inv_r2;
        if ratio >= 1.0 || term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        a *= m / 2.0;
        rpow *= inv_r2;
    }
    gauss + FRAC_2_SQRT_PI * sum
}

/// Unit-area Voigt profile centred at zero.
pub fn voigt_profile(x: f64, sigma: f64, gamma: f64) -> f64 {
    if sigma <= 0.0 {
        return gamma / PI / (x * x + gamma * gamma);
    }
    let scale = FRAC_1_SQRT_2 / sigma;
    faddeeva_re(x * scale, gamma * scale) / (sigma * (2.0 * PI).sqrt())
}

/// One photon-number cluster on the projection axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtComponent {
    /// ps
    pub center: f64,
    /// Gaussian standard deviation, ps.
    pub sigma: f64,
    /// Lorentzian half width at half maximum, ps.
    pub gamma: f64,
    pub weight: f64,
}

impl VoigtComponent {
    pub fn new(center: f64, sigma: f64, gamma: f64, weight: f64) -> Result<Self> {
        let c = Self { center, sigma, gamma, weight };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::InvalidParameter(format!("weight must lie in (0, 1], got {}", self.weight)));
        }
        if !self.center.is_finite() {
            return Err(Error::InvalidParameter("center must be finite".into()));
        }
        Ok(())
    }

    /// Unit-area density of this component.
    pub fn density(&self, x: f64) -> f64 {
        voigt_profile(x - self.center, self.sigma, self.gamma)
    }

    /// Approximate full width at half maximum (Olivero-Longbothum).
    pub fn fwhm(&self) -> f64 {
        let fg = 2.0 * (2.0 * 2f64.ln()).sqrt() * self.sigma;
        let fl = 2.0 * self.gamma;
        0.5346 * fl + (0.2166 * fl * fl + fg * fg).sqrt()
    }

    /// `P(X <= x)` of the unit-area profile.
    pub fn cdf(&self, x: f64) -> f64 {
        self.tail(x, false)
    }

    /// `P(X > x)` of the unit-area profile.
    pub fn sf(&self, x: f64) -> f64 {
        self.tail(x, true)
    }

    /// Probability mass of the unit-area profile on `(a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let m = if a >= self.center { self.sf(a) - self.sf(b) } else { self.cdf(b) - self.cdf(a) };
        m.max(0.0)
    }

    /// Tail probability via the convolution representation
    /// `P(X > x) = E_G[ S_cauchy(x - c - G) ]`, integrated over the Gaussian variable.
    fn tail(&self, x: f64, upper: bool) -> f64 {
        let u = x - self.center;
        if self.gamma == 0.0 {
            let z = u / (self.sigma * SQRT_2);
            return 0.5 * statrs::function::erf::erfc(if upper { z } else { -z });
        }
        let (s, g) = (self.sigma, self.gamma);
        let cauchy = |v: f64| if upper { g.atan2(v) / PI } else { g.atan2(-v) / PI };
        let integrand = |t: f64| (-0.5 * (t / s).powi(2)).exp() / (s * (2.0 * PI).sqrt()) * cauchy(u - t);
        let reach = 40.0 * s;
        let (lo, hi) = (-reach, reach);
        let split = u.clamp(lo, hi);
        let mut total = 0.0;
        for (a, b) in [(lo, split), (split, hi)] {
            if b > a {
                total += integrate(integrand, a, b, 1e-16, 1e-13).value;
            }
        }
        total.clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let gauss: f64 = rng.sample(StandardNormal);
        let lorentz = if self.gamma > 0.0 {
            let u: f64 = rng.random();
            self.gamma * (PI * (u - 0.5)).tan()
        } else {
            0.0
        };
        self.center + self.sigma * gauss + lorentz
    }
}

/// Weighted component density: the profile integrates to `c.weight`.
pub fn voigt_pdf(x: f64, c: &VoigtComponent) -> f64 {
    c.weight * c.density(x)
}

/// Draws from the mixture defined by `components` (weights are renormalised).
pub fn sample_mixture<R: Rng + ?Sized>(components: &[VoigtComponent], n: usize, rng: &mut R) -> Vec<(usize, f64)> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let index = rand_distr::weighted::WeightedIndex::new(components.iter().map(|c| c.weight / total))
        .expect("positive weights");
    (0..n)
        .map(|_| {
            let k = index.sample(rng);
            (k, components[k].sample(rng))
        })
        .collect()
}
