//! Named identity checks with residuals and pass/fail against fixed
//! tolerances.
//!
//! Every check is deterministic; randomized inputs come from a seeded
//! generator.

use crate::approx::{ApproxError, ApproxSolution, ScalarProfile, VortexConfig};
use crate::geom::Vec2;
use crate::linearized::{
    apply_linearized, green_representation_check, integration_by_parts, kernel_fields, project_q, y_norm,
    Extrapolation, FieldOnGrid, LinearizedError, PolarGrid, Space, WeightedNormSpec,
};
use crate::profiles::{
    base_exp, kernel_at, liouville_flux, xi_eval, KernelIndex, LiouvilleParams, ProfileError,
};
use crate::quadrature::{fd_laplacian, integrate_radial, richardson_slope, QuadratureError, QuadratureSpec};
use crate::shooting::{shoot_scalar_for_gamma, ShootOptions, ShootingError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error(transparent)]
    Linearized(#[from] LinearizedError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        IdentityReport {
            name: name.to_string(),
            residual,
            tolerance,
            // NaN residuals fail
            pass: residual <= tolerance,
        }
    }
}

/// Everything [`run_suite`] knows, in execution order.
pub const IDENTITIES: &[&str] = &[
    "flux_quantization",
    "kernel_annihilation",
    "kernel_fd_order",
    "xi_identity",
    "xi_fd_order",
    "z_orthogonality",
    "y_norm_quadrature",
    "q_idempotent",
    "q_annihilates_z1",
    "q_moments",
    "integration_by_parts",
    "green_representation",
    "linearity",
    "k2_moments",
];

/// Seed for the randomized checks.
pub const DEFAULT_SEED: u64 = 20_261_017;

/// Showcase exponent: `gamma1 = 8`, `N2 = 0`.
const KAPPA: f64 = 5.0;

/// Step of the finite-difference residual checks.
pub const FD_STEP: f64 = 1e-3;

/// Twelve fixed points, log-spread in radius over `[0.3, 3]` with angles
/// stepping by 2.4 rad.
pub fn sample_points() -> [Vec2; 12] {
    std::array::from_fn(|k| {
        let r = 0.3 * 10f64.powf(k as f64 / 11.0);
        Vec2::from_polar(r, 0.7 + 2.4 * k as f64)
    })
}

/// Runs the named checks; an empty list runs all of them.
pub fn run_suite(names: &[String], seed: u64) -> Result<Vec<IdentityReport>, VerifyError> {
    if let Some(bad) = names.iter().find(|n| !IDENTITIES.contains(&n.as_str())) {
        return Err(VerifyError::UnknownIdentity(bad.clone()));
    }
    IDENTITIES
        .iter()
        .filter(|id| names.is_empty() || names.iter().any(|n| n == *id))
        .map(|id| run_identity(id, seed))
        .collect()
}

pub fn run_identity(name: &str, seed: u64) -> Result<IdentityReport, VerifyError> {
    let report = match name {
        "flux_quantization" => IdentityReport::new(name, flux_quantization()?, 1e-8),
        "kernel_annihilation" => IdentityReport::new(name, kernel_annihilation().refined, 1e-6),
        "kernel_fd_order" => IdentityReport::new(name, kernel_annihilation().order_error, 0.2),
        "xi_identity" => IdentityReport::new(name, xi_identity().refined, 1e-6),
        "xi_fd_order" => IdentityReport::new(name, xi_identity().order_error, 0.2),
        "z_orthogonality" => IdentityReport::new(name, z_orthogonality()?, 1e-10),
        "y_norm_quadrature" => IdentityReport::new(name, y_norm_quadrature()?, 1e-8),
        "q_idempotent" => IdentityReport::new(name, projection(seed)?.idempotence, 1e-10),
        "q_annihilates_z1" => IdentityReport::new(name, projection(seed)?.kernel_image, 1e-10),
        "q_moments" => IdentityReport::new(name, projection(seed)?.moments, 1e-10),
        "integration_by_parts" => IdentityReport::new(name, integration_by_parts_residual()?, 1e-8),
        "green_representation" => IdentityReport::new(name, green_residual()?, 1e-6),
        "linearity" => IdentityReport::new(name, linearity(seed)?, 1e-12),
        "k2_moments" => IdentityReport::new(name, k2_moments()?, 1e-10),
        other => return Err(VerifyError::UnknownIdentity(other.to_string())),
    };
    Ok(report)
}

/// Worst relative error of `integral 2 e^W = 8 pi kappa` over
/// `gamma1 in {6, 8, 10}`, `N2 in {0, 1}`, `a in {0, 0.3 + 0.4i}`.
pub fn flux_quantization() -> Result<f64, VerifyError> {
    let spec = QuadratureSpec::default();
    let mut worst = 0.0f64;
    for g in [6.0, 8.0, 10.0] {
        for n2 in [0, 1] {
            for a in [Vec2::ZERO, Vec2::new(0.3, 0.4)] {
                let p = LiouvilleParams::new(g, n2, 0.0, a)?;
                let want = 8.0 * PI * p.kappa();
                let got = liouville_flux(&p, &spec)?.value;
                worst = worst.max((got / want - 1.0).abs());
            }
        }
    }
    Ok(worst)
}

/// Residuals below this are rounding noise for `O(1)` fields at
/// [`FD_STEP`] and carry no order information.
pub const ROUNDING_FLOOR: f64 = 100.0 * f64::EPSILON / (FD_STEP * FD_STEP);

/// Stencil residuals over [`sample_points`] at [`FD_STEP`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilCheck {
    /// Largest five-point residual.
    pub plain: f64,
    /// Largest residual after one Richardson step.
    pub refined: f64,
    /// Largest `|order - 2|` over points above [`ROUNDING_FLOOR`], with the
    /// order fitted on steps `4h, 2h, h`.
    pub order_error: f64,
    /// Points that entered the order fit.
    pub order_points: usize,
}

impl StencilCheck {
    fn empty() -> Self {
        StencilCheck {
            plain: 0.0,
            refined: 0.0,
            order_error: 0.0,
            order_points: 0,
        }
    }

    fn merge(self, o: StencilCheck) -> Self {
        StencilCheck {
            plain: self.plain.max(o.plain),
            refined: self.refined.max(o.refined),
            order_error: if o.order_error.is_nan() { f64::NAN } else { self.order_error.max(o.order_error) },
            order_points: self.order_points + o.order_points,
        }
    }
}

fn stencil_check(residual: impl Fn(Vec2, f64) -> f64) -> StencilCheck {
    let mut out = StencilCheck::empty();
    for x in sample_points() {
        let (coarse, fine) = (residual(x, FD_STEP), residual(x, 0.5 * FD_STEP));
        out.plain = out.plain.max(coarse.abs());
        out.refined = out.refined.max(((4.0 * fine - coarse) / 3.0).abs());
        if coarse.abs() < ROUNDING_FLOOR {
            continue;
        }
        let pts: Vec<(f64, f64)> = [4.0 * FD_STEP, 2.0 * FD_STEP, FD_STEP]
            .iter()
            .map(|&h| (h, residual(x, h)))
            .collect();
        let order = richardson_slope(&pts).unwrap_or(f64::NAN);
        out.order_points += 1;
        out.order_error = if order.is_nan() { f64::NAN } else { out.order_error.max((order - 2.0).abs()) };
    }
    out
}

/// `Lap Z_i + 2 e^W0 Z_i` on the five-point stencil, for all three modes.
pub fn kernel_annihilation() -> StencilCheck {
    let checks = KernelIndex::ALL.map(|k| {
        stencil_check(|x, h| {
            fd_laplacian(|y| kernel_at(KAPPA, k, y), x, h) + 2.0 * base_exp(KAPPA, x) * kernel_at(KAPPA, k, x)
        })
    });
    worst(&checks)
}

/// `Lap xi_ij + 2 e^W0 xi_ij - 2 Z_i Z_j e^W0` on the five-point stencil.
pub fn xi_identity() -> StencilCheck {
    let p = LiouvilleParams::base(2.0 * (KAPPA - 1.0), 0).expect("valid exponent");
    let mode = |i: u8| if i == 1 { KernelIndex::Z1 } else { KernelIndex::Z2 };
    let checks = [(1u8, 1u8), (1, 2), (2, 2)].map(|(i, j)| {
        stencil_check(|x, h| {
            let xi = |y| xi_eval(&p, i, j, y).expect("valid indices");
            let e = base_exp(KAPPA, x);
            fd_laplacian(xi, x, h) + 2.0 * e * xi(x)
                - 2.0 * kernel_at(KAPPA, mode(i), x) * kernel_at(KAPPA, mode(j), x) * e
        })
    });
    worst(&checks)
}

fn worst(checks: &[StencilCheck]) -> StencilCheck {
    checks.iter().fold(StencilCheck::empty(), |a, c| a.merge(*c))
}

fn showcase_grid(n_angles: usize) -> PolarGrid {
    PolarGrid::new(1e-3, 1e3, 1400, n_angles).expect("valid grid")
}

fn showcase_norm() -> WeightedNormSpec {
    WeightedNormSpec::new(0.2, Space::Y, 8.0, 0).expect("alpha in range")
}

/// `|integral Z1 Z2 e^W0| + |integral Z1 Z2| + |integral Z1^2 - integral Z2^2|`,
/// relative to `integral Z1^2`, in the grid inner product.
pub fn z_orthogonality() -> Result<f64, VerifyError> {
    let g = showcase_grid(64);
    let [z1, z2] = kernel_fields(g, KAPPA);
    let weighted = FieldOnGrid::sample(g, |x| base_exp(KAPPA, x) * kernel_at(KAPPA, KernelIndex::Z1, x));
    let n1 = z1.dot(&z1)?;
    let n2 = z2.dot(&z2)?;
    Ok((weighted.dot(&z2)?.abs() + z1.dot(&z2)?.abs() + (n1 - n2).abs()) / n1)
}

/// Relative gap between the grid `Y` norm of `e^W0` and a one-dimensional
/// adaptive quadrature.
pub fn y_norm_quadrature() -> Result<f64, VerifyError> {
    let g = PolarGrid::new(1e-4, 1e3, 3200, 4)?;
    let h = FieldOnGrid::sample(g, |x| base_exp(KAPPA, x));
    let grid_value = y_norm(&h, &showcase_norm())?;
    let oracle = integrate_radial(
        |r| base_exp(KAPPA, Vec2::new(r, 0.0)).powi(2) * (1.0 + r).powf(2.2),
        &QuadratureSpec::default().with_tail(4.0 * KAPPA - 0.2),
    )?
    .value
    .sqrt();
    Ok((grid_value / oracle - 1.0).abs())
}

/// Sum of three Gaussians with seeded centers, widths and amplitudes, with
/// their exact Laplacian attached.
pub fn random_field(grid: PolarGrid, rng: &mut impl Rng) -> FieldOnGrid {
    let bumps: Vec<(Vec2, f64, f64)> = (0..3)
        .map(|_| {
            let c = Vec2::from_polar(rng.gen_range(0.0..2.0), rng.gen_range(-PI..PI));
            (c, rng.gen_range(0.4..1.0), rng.gen_range(-1.0..1.0))
        })
        .collect();
    let value = |x: Vec2| -> f64 {
        bumps
            .iter()
            .map(|(c, w, a)| a * (-(x - *c).norm_sq() / (w * w)).exp())
            .sum()
    };
    let lap = |x: Vec2| -> f64 {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let q = (x - *c).norm_sq() / (w * w);
                a * 4.0 * (q - 1.0) / (w * w) * (-q).exp()
            })
            .sum()
    };
    FieldOnGrid::sample(grid, value).with_laplacian_fn(lap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    /// `sup |Q Q h - Q h|` over the test set.
    pub idempotence: f64,
    /// `sup |Q Z1|`.
    pub kernel_image: f64,
    /// Largest `|integral (Q h) Z_i|`.
    pub moments: f64,
    /// Largest `||Q h||_Y / ||h||_Y`.
    pub norm_ratio: f64,
}

/// Projection properties over eight seeded random fields.
pub fn projection(seed: u64) -> Result<ProjectionCheck, VerifyError> {
    let g = showcase_grid(64);
    let spec = showcase_norm();
    let params = LiouvilleParams::base(8.0, 0)?;
    let [z1, z2] = kernel_fields(g, KAPPA);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ProjectionCheck {
        idempotence: 0.0,
        kernel_image: project_q(&z1, &params, &spec)?.sup(),
        moments: 0.0,
        norm_ratio: 0.0,
    };
    for _ in 0..8 {
        let h = random_field(g, &mut rng);
        let q = project_q(&h, &params, &spec)?;
        let qq = project_q(&q, &params, &spec)?;
        out.idempotence = out.idempotence.max(qq.combine(1.0, &q, -1.0)?.sup());
        out.moments = out.moments.max(q.dot(&z1)?.abs()).max(q.dot(&z2)?.abs());
        out.norm_ratio = out.norm_ratio.max(y_norm(&q, &spec)? / y_norm(&h, &spec)?);
    }
    Ok(out)
}

/// `exp(-1 / (1 - q^2))`, `q = |x - c| / radius`, with its exact Laplacian.
pub fn smooth_bump(grid: PolarGrid, c: Vec2, radius: f64) -> FieldOnGrid {
    let q2 = move |x: Vec2| (x - c).norm_sq() / (radius * radius);
    FieldOnGrid::sample(grid, |x| {
        let q2 = q2(x);
        if q2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - q2)).exp()
        }
    })
    .with_laplacian_fn(|x| {
        let q2 = q2(x);
        if q2 >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - q2;
        (-1.0 / u).exp() * (-4.0 / (u * u) - 8.0 * q2 / u.powi(3) + 4.0 * q2 / u.powi(4)) / (radius * radius)
    })
}

/// Worst `|integral (Lap w) Z_i + 2 integral e^W0 Z_i w|` for an off-center
/// bump.
pub fn integration_by_parts_residual() -> Result<f64, VerifyError> {
    let g = PolarGrid::new(1e-3, 3.0, 2400, 256)?;
    let w = smooth_bump(g, Vec2::new(0.5, 0.2), 1.5);
    let mut worst = 0.0f64;
    for k in [KernelIndex::Z1, KernelIndex::Z2] {
        worst = worst.max(integration_by_parts(&w, KAPPA, k)?.residual());
    }
    Ok(worst)
}

/// Sup residual of the logarithmic-potential representation for a radial
/// bump.
pub fn green_residual() -> Result<f64, VerifyError> {
    let g = PolarGrid::new(1e-4, 3.0, 2000, 4)?;
    Ok(green_representation_check(&smooth_bump(g, Vec2::ZERO, 1.5))?.residual)
}

fn showcase_profile() -> Result<ScalarProfile, VerifyError> {
    let opts = ShootOptions {
        gamma_tol: 1e-8,
        ..Default::default()
    };
    let sol = shoot_scalar_for_gamma(1, 8.0, &opts)?.1;
    Ok(ScalarProfile::new(sol, Vec2::ZERO)?)
}

/// Superposition defect of the linearized operator on seeded random pairs,
/// relative to the size of the outputs.
pub fn linearity(seed: u64) -> Result<f64, VerifyError> {
    let profile = showcase_profile()?;
    let eps = 0.05;
    let g1 = PolarGrid::new(1e-2, 1e2, 200, 16)?;
    let g2 = g1.scaled(eps);
    let p = LiouvilleParams::base(8.0, 0)?;
    let ex = Extrapolation::Forbid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (u1, v1) = (random_field(g1, &mut rng), random_field(g1, &mut rng));
        let (u2, v2) = (random_field(g2, &mut rng), random_field(g2, &mut rng));
        let (lu1, lu2) = apply_linearized(&u1, &u2, eps, &p, &profile, ex)?;
        let (lv1, lv2) = apply_linearized(&v1, &v2, eps, &p, &profile, ex)?;
        let (ls1, ls2) = apply_linearized(&u1.combine(a, &v1, b)?, &u2.combine(a, &v2, b)?, eps, &p, &profile, ex)?;
        for (ls, lu, lv) in [(&ls1, &lu1, &lv1), (&ls2, &lu2, &lv2)] {
            let scale = (a.abs() * lu.sup() + b.abs() * lv.sup()).max(1.0);
            worst = worst.max(ls.combine(1.0, &lu.combine(a, lv, b)?, -1.0)?.sup() / scale);
        }
    }
    Ok(worst)
}

/// `|integral k2 Z_j|` relative to `||k2||_Y` for the showcase blow-up point
/// at `eps = 1e-2`.
pub fn k2_moments() -> Result<f64, VerifyError> {
    let p1 = Vec2::new(1.0, 0.0);
    let profile = showcase_profile()?.translated(p1);
    let cfg = VortexConfig::new(vec![p1], vec![]);
    let spec = QuadratureSpec::default();
    let s = ApproxSolution::new(&profile, &cfg, 1e-2, Vec2::ZERO, &spec)?;
    let m = s.k2_kernel_moments(&spec)?;
    Ok(m[0].abs().max(m[1].abs()) / s.k2_norm(0.2, &spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_points_are_spread() {
        let pts = sample_points();
        assert!((pts[0].norm() - 0.3).abs() < 1e-12);
        assert!((pts[11].norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn selector_rules() {
        assert_eq!(
            run_suite(&["nope".to_string()], DEFAULT_SEED).unwrap_err(),
            VerifyError::UnknownIdentity("nope".into())
        );
        let one = run_suite(&["z_orthogonality".to_string()], DEFAULT_SEED).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].pass);
    }

    #[test]
    fn full_suite_passes() {
        let reports = run_suite(&[], DEFAULT_SEED).unwrap();
        assert_eq!(reports.len(), IDENTITIES.len());
        let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn stencil_orders() {
        let k = kernel_annihilation();
        assert!(k.order_error <= 0.2 && k.order_points >= 30, "{k:?}");
        // the five-point truncation term of Z0 peaks near |x| = 0.85
        assert!(k.plain > 1e-4 && k.plain < 3e-4, "{k:?}");
        let xi = xi_identity();
        assert!(xi.plain <= 1e-4 && xi.order_error <= 0.2, "{xi:?}");
    }

    #[test]
    fn projection_keeps_norms_bounded() {
        assert!(projection(DEFAULT_SEED).unwrap().norm_ratio <= 5.0);
    }
}
