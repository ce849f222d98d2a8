//! Geometry of the flux plane `(beta_1, beta_2)` and the mass identities
//! of radial SU(3) solutions.

use crate::shooting::{Classification, RadialSolution, ShootingError, System, TWICE_F1, TWICE_F2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Default tolerance for membership on the boundary lines.
pub const LINE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("mass identities need a two-component solution")]
    NotTwoComponent,
    #[error("solution is {0:?}; mass identities need a non-topological run with fitted exponents")]
    NotNontopological(Classification),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
}

/// Flux exponents together with the vortex multiplicities at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    pub beta1: f64,
    pub beta2: f64,
    pub n1: u32,
    pub n2: u32,
}

impl FluxPoint {
    pub fn new(beta1: f64, beta2: f64, n1: u32, n2: u32) -> Self {
        FluxPoint { beta1, beta2, n1, n2 }
    }

    fn n(&self) -> (f64, f64) {
        (self.n1 as f64, self.n2 as f64)
    }

    fn both_above_one(&self) -> bool {
        self.beta1 > 1.0 && self.beta2 > 1.0
    }
}

/// The quadratic form `x^2 + xy + y^2`.
pub fn j(x: f64, y: f64) -> f64 {
    // grouped so the result is exactly symmetric in floating point
    (x * x + y * y) + x * y
}

/// Exponents admitted by the Pohozaev-type constraint.
pub fn in_omega(p: &FluxPoint) -> bool {
    let (n1, n2) = p.n();
    p.both_above_one() && j(p.beta1 - 1.0, p.beta2 - 1.0) > j(n1 + 1.0, n2 + 1.0)
}

/// The open region bounded by the two lines and `beta_i > 1`.
pub fn in_sn(p: &FluxPoint) -> bool {
    let (n1, n2) = p.n();
    let d = p.beta2 - p.beta1;
    p.both_above_one()
        && -2.0 * n1 - n2 - 3.0 < d
        && d < n1 + 2.0 * n2 + 3.0
        && 2.0 * p.beta1 + p.beta2 > n1 + 2.0 * n2 + 6.0
        && p.beta1 + 2.0 * p.beta2 > 2.0 * n1 + n2 + 6.0
}

/// `beta_2 - beta_1 = N_1 + 2 N_2 + 3` within `tol`.
pub fn on_ell1_within(p: &FluxPoint, tol: f64) -> bool {
    let (n1, n2) = p.n();
    p.both_above_one() && (p.beta2 - p.beta1 - (n1 + 2.0 * n2 + 3.0)).abs() <= tol
}

/// `2 beta_1 + beta_2 = N_1 + 2 N_2 + 6` within `tol`.
pub fn on_ell2_within(p: &FluxPoint, tol: f64) -> bool {
    let (n1, n2) = p.n();
    p.both_above_one() && (2.0 * p.beta1 + p.beta2 - (n1 + 2.0 * n2 + 6.0)).abs() <= tol
}

pub fn on_ell1(p: &FluxPoint) -> bool {
    on_ell1_within(p, LINE_TOL)
}

pub fn on_ell2(p: &FluxPoint) -> bool {
    on_ell2_within(p, LINE_TOL)
}

/// Flux of the first component's scalar limit, `(2/3)(2N_1 + 2beta_1 + N_2 + beta_2)`.
pub fn gamma1(p: &FluxPoint) -> f64 {
    let (n1, n2) = p.n();
    2.0 / 3.0 * (2.0 * n1 + 2.0 * p.beta1 + n2 + p.beta2)
}

/// The point of the first boundary line with first exponent `beta1`.
pub fn ell1_point(beta1: f64, n1: u32, n2: u32) -> FluxPoint {
    FluxPoint::new(beta1, beta1 + n1 as f64 + 2.0 * n2 as f64 + 3.0, n1, n2)
}

/// The point of the second boundary line with first exponent `beta1`.
pub fn ell2_point(beta1: f64, n1: u32, n2: u32) -> FluxPoint {
    FluxPoint::new(beta1, n1 as f64 + 2.0 * n2 as f64 + 6.0 - 2.0 * beta1, n1, n2)
}

/// Index `k` when a scalar flux target sits within `tol` of the value
/// `2 N k / (k - 1)`, `k = 2..=N`, where existence of radial solutions for
/// `N`-fold vortices is not settled. Purely diagnostic.
pub fn exceptional_flux(n: u32, gamma: f64, tol: f64) -> Option<u32> {
    (2..=n).find(|&k| {
        let k = k as f64;
        (gamma - 2.0 * n as f64 * k / (k - 1.0)).abs() <= tol
    })
}

/// Quadratures of `2F_1`, `2F_2` against their closed-form values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassResiduals {
    pub integrals: [f64; 2],
    pub expected: [f64; 2],
    /// `|integral - expected| / expected`.
    pub relative: [f64; 2],
}

impl MassResiduals {
    pub fn max_relative(&self) -> f64 {
        self.relative[0].max(self.relative[1])
    }
}

/// Checks `integral 2F_1 = (8 pi / 3)(2N_1 + 2beta_1 + N_2 + beta_2)` and its
/// mirror, with the exponents taken from the solution's window fit.
///
/// The quadratures cover the grid and add the power-law tail beyond it
/// under the same fitted exponents.
pub fn mass_identities(sol: &RadialSolution) -> Result<MassResiduals, FluxError> {
    if sol.system() != System::Su3 {
        return Err(FluxError::NotTwoComponent);
    }
    let fit = sol
        .betas()
        .ok_or(FluxError::NotNontopological(sol.classification()))?;
    let b = &fit.betas;
    let n1 = sol.multiplicities()[0] as f64;
    let n2 = sol.multiplicities()[1] as f64;
    let integrals = [sol.mass_integral(&TWICE_F1, b)?, sol.mass_integral(&TWICE_F2, b)?];
    let expected = [
        8.0 * PI / 3.0 * (2.0 * n1 + 2.0 * b[0] + n2 + b[1]),
        8.0 * PI / 3.0 * (n1 + b[0] + 2.0 * n2 + 2.0 * b[1]),
    ];
    let relative = [
        ((integrals[0] - expected[0]) / expected[0]).abs(),
        ((integrals[1] - expected[1]) / expected[1]).abs(),
    ];
    Ok(MassResiduals {
        integrals,
        expected,
        relative,
    })
}
