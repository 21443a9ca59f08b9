//! Physical parameters and the elementary functions shared by every equation:
//! `coth`, the bare energy `e`, and the kernels `K` and `K_alpha`.
//!
//! All functions are `i*pi` periodic. Arithmetic is complex double precision.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Minimum distance to a pole `i*pi*k` accepted by [`coth_safe`].
pub const POLE_FLOOR: f64 = 1e-12;

/// Default lower bound on `|q^alpha - q^-alpha|`.
pub const ALPHA_FLOOR: f64 = 1e-8;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// Reduce `z` modulo `i*pi` so that `Im z` lies in `[-pi/2, pi/2)`.
pub fn reduce_period(z: Complex64) -> Complex64 {
    let k = ((z.im + FRAC_PI_2) / PI).floor();
    Complex64::new(z.re, z.im - k * PI)
}

/// Distance from `z` to the nearest point of the lattice `i*pi*Z`.
pub fn pole_distance(z: Complex64) -> f64 {
    reduce_period(z).norm()
}

/// `coth(z)` evaluated without overflow for large `|Re z|`.
///
/// Fails with [`Error::PoleProximity`] within [`POLE_FLOOR`] of `i*pi*k`.
pub fn coth_safe(z: Complex64) -> Result<Complex64> {
    let distance = pole_distance(z);
    if distance < POLE_FLOOR {
        return Err(Error::PoleProximity { at: z, distance });
    }
    Ok(coth(z))
}

#[inline]
pub(crate) fn coth(z: Complex64) -> Complex64 {
    if z.re >= 0.0 {
        let e = (-2.0 * z).exp();
        (1.0 + e) / (1.0 - e)
    } else {
        let e = (2.0 * z).exp();
        -(1.0 + e) / (1.0 - e)
    }
}

/// `ln sinh(z)` on a branch that is continuous in `Re z` for large `|Re z|`.
#[inline]
pub(crate) fn ln_sinh(z: Complex64) -> Complex64 {
    if z.re >= 0.0 {
        z - std::f64::consts::LN_2 + (1.0 - (-2.0 * z).exp()).ln()
    } else {
        -z - std::f64::consts::LN_2 + (-(1.0 - (2.0 * z).exp())).ln()
    }
}

/// Physical and derived parameters of the spin chain.
///
/// `eta = i*gamma` with `0 < gamma < pi/2` (critical regime). The twist
/// `kappa` is either derived from the field, `kappa = h / (2 T eta)`, or
/// supplied directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub eta: Complex64,
    pub gamma: f64,
    pub q: Complex64,
    pub j: f64,
    pub t: f64,
    pub h: f64,
    pub kappa: Complex64,
    pub beta: Complex64,
    pub delta: Complex64,
}

impl ModelParams {
    /// Parameters with the twist derived from the magnetic field.
    pub fn from_field(gamma: f64, j: f64, t: f64, h: f64) -> Result<Self> {
        let eta = I * gamma;
        let kappa = Complex64::new(h, 0.0) / (2.0 * t * eta);
        Self::build(gamma, j, t, h, kappa)
    }

    /// Parameters with an explicitly given (possibly complex) twist. The
    /// stored field is `Re(2 T kappa eta)`.
    pub fn from_twist(gamma: f64, j: f64, t: f64, kappa: Complex64) -> Result<Self> {
        let h = (2.0 * t * kappa * I * gamma).re;
        Self::build(gamma, j, t, h, kappa)
    }

    fn build(gamma: f64, j: f64, t: f64, h: f64, kappa: Complex64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < FRAC_PI_2) {
            return Err(Error::InvalidParams(format!(
                "gamma = {gamma} outside (0, pi/2)"
            )));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParams(format!("temperature T = {t} must be positive")));
        }
        if !j.is_finite() || !h.is_finite() || !kappa.re.is_finite() || !kappa.im.is_finite() {
            return Err(Error::InvalidParams("non-finite coupling, field or twist".into()));
        }
        let eta = I * gamma;
        Ok(Self {
            eta,
            gamma,
            q: eta.exp(),
            j,
            t,
            h,
            kappa,
            beta: 2.0 * j * eta.sinh() / t,
            delta: eta.cosh(),
        })
    }

    /// `q^x = exp(x * eta)`.
    #[inline]
    pub fn q_pow(&self, x: Complex64) -> Complex64 {
        (x * self.eta).exp()
    }

    /// Same model at a different field (twist re-derived).
    pub fn with_field(&self, h: f64) -> Result<Self> {
        Self::from_field(self.gamma, self.j, self.t, h)
    }

    /// Same model at a different temperature, keeping the twist fixed.
    pub fn with_temperature_fixed_twist(&self, t: f64) -> Result<Self> {
        Self::from_twist(self.gamma, self.j, t, self.kappa)
    }

    /// Same model with the twist replaced.
    pub fn with_twist(&self, kappa: Complex64) -> Result<Self> {
        Self::from_twist(self.gamma, self.j, self.t, kappa)
    }
}

/// Disorder parameter `alpha` entering the deformed kernel and the measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderParam {
    pub alpha: Complex64,
}

impl DisorderParam {
    pub fn new(alpha: Complex64) -> Self {
        Self { alpha }
    }

    pub fn real(alpha: f64) -> Self {
        Self::new(Complex64::new(alpha, 0.0))
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.alpha)
    }

    /// `q^alpha - q^-alpha`.
    pub fn q_difference(&self, p: &ModelParams) -> Complex64 {
        p.q_pow(self.alpha) - p.q_pow(-self.alpha)
    }

    /// Returns `q^alpha - q^-alpha`, rejecting values below `floor`.
    pub fn checked_q_difference(&self, p: &ModelParams, floor: f64) -> Result<Complex64> {
        let diff = self.q_difference(p);
        if diff.norm() <= floor {
            return Err(Error::AlphaSingular(diff.norm()));
        }
        Ok(diff)
    }
}

/// Bare energy `e(lambda) = coth(lambda) - coth(lambda + eta)`.
pub fn bare_energy(lambda: Complex64, p: &ModelParams) -> Result<Complex64> {
    Ok(coth_safe(lambda)? - coth_safe(lambda + p.eta)?)
}

/// Kernel `K(lambda) = coth(lambda - eta) - coth(lambda + eta)`.
pub fn kernel(lambda: Complex64, p: &ModelParams) -> Result<Complex64> {
    Ok(coth_safe(lambda - p.eta)? - coth_safe(lambda + p.eta)?)
}

/// Deformed kernel `K_alpha(lambda) = q^-alpha coth(lambda - eta) - q^alpha coth(lambda + eta)`.
pub fn kernel_alpha(lambda: Complex64, alpha: &DisorderParam, p: &ModelParams) -> Result<Complex64> {
    let qa = p.q_pow(alpha.alpha);
    Ok(coth_safe(lambda - p.eta)? / qa - qa * coth_safe(lambda + p.eta)?)
}

// Unchecked variants for assembly loops where the geometry already keeps
// arguments away from the poles.
#[inline]
pub(crate) fn bare_energy_raw(lambda: Complex64, eta: Complex64) -> Complex64 {
    coth(lambda) - coth(lambda + eta)
}

#[inline]
pub(crate) fn kernel_raw(lambda: Complex64, eta: Complex64) -> Complex64 {
    coth(lambda - eta) - coth(lambda + eta)
}

#[inline]
pub(crate) fn kernel_alpha_raw(lambda: Complex64, eta: Complex64, q_alpha: Complex64) -> Complex64 {
    coth(lambda - eta) / q_alpha - q_alpha * coth(lambda + eta)
}
