//! The explicit Liouville profile family
//!
//! `W(x) = ln[4 k^2 e^l |x|^(g + 2n) / (1 + e^l |x^k + a|^2)^2]`, `k = n + g/2 + 1`,
//!
//! its regular part, the kernel modes `Z0, Z1, Z2` of `Delta + 2 e^W0`, and
//! the auxiliary functions `xi_ij` solving `Delta xi + 2 e^W0 xi = 2 Zi Zj e^W0`.
//!
//! Everything is evaluated in log-radius so that `|x|^(2k)` never overflows.
//! `x^k` uses the principal angle in `(-pi, pi]`; for non-integer `k` the
//! functions built from `cos(k theta)` jump across the negative real axis.

use crate::geom::Vec2;
use crate::quadrature::{self, Estimate, PolarOptions, QuadratureError, QuadratureSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("gamma1 must exceed 2 (got {0})")]
    GammaTooSmall(f64),
    #[error("profile parameters must be finite")]
    NonFinite,
    #[error("W has a logarithmic singularity at the origin")]
    AtSingularity,
    #[error("kernel modes are defined at lambda1 = 0, a = 0")]
    NotBasePoint,
    #[error("xi index must be 1 or 2 (got {0}, {1})")]
    BadXiIndex(u8, u8),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Parameters of one member of the Liouville family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleParams {
    gamma1: f64,
    n2: u32,
    lambda1: f64,
    a: Vec2,
    kappa: f64,
}

impl LiouvilleParams {
    pub fn new(gamma1: f64, n2: u32, lambda1: f64, a: Vec2) -> Result<Self, ProfileError> {
        if !(gamma1.is_finite() && lambda1.is_finite() && a.is_finite()) {
            return Err(ProfileError::NonFinite);
        }
        if gamma1 <= 2.0 {
            return Err(ProfileError::GammaTooSmall(gamma1));
        }
        Ok(LiouvilleParams {
            gamma1,
            n2,
            lambda1,
            a,
            kappa: n2 as f64 + gamma1 / 2.0 + 1.0,
        })
    }

    /// The member with `lambda1 = 0`, `a = 0`.
    pub fn base(gamma1: f64, n2: u32) -> Result<Self, ProfileError> {
        Self::new(gamma1, n2, 0.0, Vec2::ZERO)
    }

    pub fn with_a(self, a: Vec2) -> Result<Self, ProfileError> {
        Self::new(self.gamma1, self.n2, self.lambda1, a)
    }

    pub fn with_lambda(self, lambda1: f64) -> Result<Self, ProfileError> {
        Self::new(self.gamma1, self.n2, lambda1, self.a)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }
    pub fn n2(&self) -> u32 {
        self.n2
    }
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn a(&self) -> Vec2 {
        self.a
    }
    /// Exponent of the complex power, `n2 + gamma1/2 + 1`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    /// Strength of the log singularity at the origin, `gamma1 + 2 n2`.
    pub fn singular_exponent(&self) -> f64 {
        self.gamma1 + 2.0 * self.n2 as f64
    }
    pub fn is_base_point(&self) -> bool {
        self.lambda1 == 0.0 && self.a == Vec2::ZERO
    }
    /// True when `kappa` is an integer, the case where `Z1`, `Z2` are smooth
    /// and the projection onto them is active.
    pub fn kappa_is_integer(&self) -> bool {
        self.kappa.fract() == 0.0
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(1 + e^l |x^k + a|^2)`.
fn log_denominator(p: &LiouvilleParams, x: Vec2) -> f64 {
    let r = x.norm();
    let a = p.a;
    if r == 0.0 {
        return (p.lambda1.exp() * a.norm_sq()).ln_1p();
    }
    let s = r.ln();
    let phase = p.kappa * x.angle();
    let u = Vec2::new(phase.cos(), phase.sin());
    if s <= 0.0 {
        let rk = (p.kappa * s).exp();
        let q = (rk * u + a).norm_sq();
        return (p.lambda1.exp() * q).ln_1p();
    }
    // |x^k + a|^2 = r^(2k) |1 + a r^-k e^{-ik theta}|^2
    let rk_inv = (-p.kappa * s).exp();
    let inner = (u + rk_inv * a).norm_sq();
    if inner == 0.0 {
        return 0.0;
    }
    softplus(p.lambda1 + 2.0 * p.kappa * s + inner.ln())
}

/// `W(x)`; the origin is rejected because `W` is `-inf` there.
pub fn liouville_eval(p: &LiouvilleParams, x: Vec2) -> Result<f64, ProfileError> {
    if x == Vec2::ZERO {
        return Err(ProfileError::AtSingularity);
    }
    Ok(regular_part(p, x) + p.singular_exponent() * x.norm().ln())
}

/// `e^W(x)`, finite everywhere and zero at the origin.
pub fn liouville_exp(p: &LiouvilleParams, x: Vec2) -> f64 {
    if x == Vec2::ZERO {
        return 0.0;
    }
    (regular_part(p, x) + p.singular_exponent() * x.norm().ln()).exp()
}

/// `W(x) - (gamma1 + 2 n2) ln|x|`, continuous through the origin.
pub fn liouville_regular_part(p: &LiouvilleParams, x: Vec2) -> f64 {
    regular_part(p, x)
}

fn regular_part(p: &LiouvilleParams, x: Vec2) -> f64 {
    if x == Vec2::ZERO {
        let k2 = p.kappa * p.kappa;
        return (4.0 * k2).ln() + p.lambda1 - 2.0 * (p.lambda1.exp() * p.a.norm_sq()).ln_1p();
    }
    (4.0 * p.kappa * p.kappa).ln() + p.lambda1 - 2.0 * log_denominator(p, x)
}

/// Quadrature of `integral 2 e^W dx` over the plane.
pub fn liouville_flux(p: &LiouvilleParams, spec: &QuadratureSpec) -> Result<Estimate, ProfileError> {
    let e = if p.a == Vec2::ZERO {
        quadrature::integrate_radial(|r| 2.0 * liouville_exp(p, Vec2::new(r, 0.0)), spec)?
    } else {
        quadrature::integrate_polar(
            |r, t| 2.0 * liouville_exp(p, Vec2::from_polar(r, t)),
            spec,
            &PolarOptions::default(),
        )?
    };
    Ok(e)
}

/// `e^W0(x) = kappa^2 / (r^2 cosh^2(kappa ln r))` at the base point.
pub fn base_exp(kappa: f64, x: Vec2) -> f64 {
    let r = x.norm();
    if r == 0.0 {
        return 0.0;
    }
    let c = (kappa * r.ln()).cosh();
    kappa * kappa / (r * r * c * c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelIndex {
    Z0,
    Z1,
    Z2,
}

impl KernelIndex {
    pub const ALL: [KernelIndex; 3] = [KernelIndex::Z0, KernelIndex::Z1, KernelIndex::Z2];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Kernel mode at the base point for exponent `kappa`.
pub fn kernel_at(kappa: f64, k: KernelIndex, x: Vec2) -> f64 {
    let r = x.norm();
    if r == 0.0 {
        return match k {
            KernelIndex::Z0 => 1.0,
            _ => 0.0,
        };
    }
    let s = r.ln();
    match k {
        KernelIndex::Z0 => -(kappa * s).tanh(),
        KernelIndex::Z1 => (kappa * x.angle()).cos() / (2.0 * (kappa * s).cosh()),
        KernelIndex::Z2 => (kappa * x.angle()).sin() / (2.0 * (kappa * s).cosh()),
    }
}

/// `Z0 = dW/dlambda1`, `Z1 = -dW/da1 / 4`, `Z2 = -dW/da2 / 4` at the base point.
pub fn kernel_eval(p: &LiouvilleParams, k: KernelIndex, x: Vec2) -> Result<f64, ProfileError> {
    if !p.is_base_point() {
        return Err(ProfileError::NotBasePoint);
    }
    Ok(kernel_at(p.kappa, k, x))
}

/// `xi_r = 1 / (4 (1 + r^(2k))^2)`.
pub fn xi_r(kappa: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.25;
    }
    0.25 * (-2.0 * softplus(2.0 * kappa * r.ln())).exp()
}

/// `xi_theta = -r^(2k) / (4 (1 + r^(2k))^2)`.
pub fn xi_theta(kappa: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let c = (kappa * r.ln()).cosh();
    -1.0 / (16.0 * c * c)
}

/// `xi_11`, `xi_12 = xi_21`, `xi_22` at the base point.
pub fn xi_eval(p: &LiouvilleParams, i: u8, j: u8, x: Vec2) -> Result<f64, ProfileError> {
    if !p.is_base_point() {
        return Err(ProfileError::NotBasePoint);
    }
    let r = x.norm();
    let phase = 2.0 * p.kappa * x.angle();
    let (xr, xt) = (xi_r(p.kappa, r), xi_theta(p.kappa, r));
    match (i, j) {
        (1, 1) => Ok(xr + xt * phase.cos()),
        (1, 2) | (2, 1) => Ok(xt * phase.sin()),
        (2, 2) => Ok(xr - xt * phase.cos()),
        _ => Err(ProfileError::BadXiIndex(i, j)),
    }
}
