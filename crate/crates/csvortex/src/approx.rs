//! Leading-order two-scale approximation of a blow-up family.
//!
//! A non-topological scalar profile `V` (F-normalized) describes the first
//! component on the unit scale; a Liouville bubble `W_a` describes the
//! second component on scale `eps`. The correction potentials `u1*` and
//! `u2*` glue the two, and the error terms `k1`, `k2` measure what the
//! glued pair misses.
//!
//! Coordinates: `x` is the unit (first-component) scale and `y = eps x` the
//! bubble scale. `u2_star` and the second-equation residual take `y`.

use crate::geom::Vec2;
use crate::profiles::{
    base_exp, kernel_at, liouville_exp, liouville_regular_part, KernelIndex, LiouvilleParams, ProfileError,
};
use crate::quadrature::{
    gauss_kronrod, integrate_polar, integrate_to_infinity, Estimate, PolarOptions, QuadratureError,
    QuadratureSpec,
};
use crate::shooting::{Classification, Normalization, RadialSolution, ShootingError, System};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("profile must be a non-topological F-normalized scalar solution: {0}")]
    BadProfile(String),
    #[error("invalid vortex configuration: {0}")]
    InvalidConfig(String),
    #[error("eps must be positive and finite (got {0})")]
    BadEps(f64),
    #[error("the point must differ from the origin")]
    AtOrigin,
    #[error("reduced equation did not converge in {iterations} iterations (|G| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Shooting(#[from] ShootingError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// `f(t) = 2 e^t (1 - 2 e^t)`, exact zero at the vacuum.
pub fn f_nonlinearity(t: f64) -> f64 {
    2.0 * t.exp() * -(t + LN_2).exp_m1()
}

/// `f(v) - f(v + u)` without cancellation for small `u`.
fn f_drop(v: f64, u: f64) -> f64 {
    let e = v.exp();
    -2.0 * e * u.exp_m1() + 4.0 * e * e * (2.0 * u).exp_m1()
}

/// A radial F-normalized non-topological solution placed at `center`.
///
/// Besides pointwise values it carries the far-field data
/// `V = -2 (gamma - N) ln r + I + o(1)` and suffix tables of
/// `integral_rho^inf t f t dt` and `integral_rho^inf t f ln t dt` used by the
/// logarithmic potential.
#[derive(Clone, Debug)]
pub struct ScalarProfile {
    sol: RadialSolution,
    center: Vec2,
    n: u32,
    flux: f64,
    tail_flux: f64,
    tail_const: f64,
    tail_spread: f64,
    log_grid: Vec<f64>,
    above: Vec<f64>,
    above_log: Vec<f64>,
    beta: f64,
}

impl ScalarProfile {
    pub fn new(sol: RadialSolution, center: Vec2) -> Result<Self, ApproxError> {
        if sol.system() != System::Scalar(Normalization::F) {
            return Err(ApproxError::BadProfile(format!("system is {:?}", sol.system())));
        }
        if sol.classification() != Classification::Nontopological {
            return Err(ApproxError::BadProfile(format!("classified {:?}", sol.classification())));
        }
        if !center.is_finite() {
            return Err(ApproxError::InvalidConfig("profile center must be finite".into()));
        }
        let fit = sol.betas().expect("non-topological runs carry a fit").clone();
        let beta = fit.asymptotic[0];
        let n = sol.multiplicities()[0];
        let flux = sol.scalar_flux()?;
        let tail_flux = n as f64 + beta;

        // I from the last decade: w + 2 gamma ln r is flat there
        let s_end = sol.r_end().ln();
        let samples: Vec<f64> = (0..65)
            .map(|k| {
                let s = s_end - LN_10 * k as f64 / 64.0;
                sol.regular_at_log(0, s).0 + 2.0 * tail_flux * s
            })
            .collect();
        let tail_const = samples.iter().sum::<f64>() / samples.len() as f64;
        let tail_spread = samples.iter().cloned().fold(f64::MIN, f64::max)
            - samples.iter().cloned().fold(f64::MAX, f64::min);

        let log_grid = sol.log_grid();
        let terms = sol.system().terms(0);
        let mut above = vec![0.0; log_grid.len()];
        let mut above_log = vec![0.0; log_grid.len()];
        let last = log_grid.len() - 1;
        above[last] = sol.power_tail(terms, &fit.asymptotic)?;
        above_log[last] = sol.power_log_tail(terms, &fit.asymptotic, 1.0)?;
        for k in (0..last).rev() {
            let (a, b) = (log_grid[k], log_grid[k + 1]);
            let m = gauss_kronrod(|s| radial_weight(&sol, s), a, b)?.value;
            let ml = gauss_kronrod(|s| s * radial_weight(&sol, s), a, b)?.value;
            above[k] = above[k + 1] + m;
            above_log[k] = above_log[k + 1] + ml;
        }
        Ok(ScalarProfile {
            sol,
            center,
            n,
            flux,
            tail_flux,
            tail_const,
            tail_spread,
            log_grid,
            above,
            above_log,
            beta,
        })
    }

    /// The same profile centered at `center + shift`.
    pub fn translated(&self, shift: Vec2) -> ScalarProfile {
        ScalarProfile {
            center: self.center + shift,
            ..self.clone()
        }
    }

    pub fn solution(&self) -> &RadialSolution {
        &self.sol
    }
    pub fn center(&self) -> Vec2 {
        self.center
    }
    pub fn multiplicity(&self) -> u32 {
        self.n
    }
    /// `(1/4 pi) integral f(V)` by quadrature.
    pub fn flux(&self) -> f64 {
        self.flux
    }
    /// `N + beta` with `beta` the tail-corrected decay exponent.
    pub fn tail_flux(&self) -> f64 {
        self.tail_flux
    }
    /// `I` in `V = -2 (gamma - N) ln r + I + o(1)`.
    pub fn tail_constant(&self) -> f64 {
        self.tail_const
    }
    /// Spread of `V + 2 (gamma - N) ln r` over the last decade.
    pub fn tail_spread(&self) -> f64 {
        self.tail_spread
    }
    /// Decay exponent `beta` of `V ~ -2 beta ln r`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `V` at distance `rho` from the center.
    pub fn radial_value(&self, rho: f64) -> f64 {
        if rho == 0.0 {
            return if self.n == 0 { self.sol.regular_at_log(0, f64::NEG_INFINITY).0 } else { f64::NEG_INFINITY };
        }
        self.sol.v(0, rho)
    }

    /// Regular part `V - 2N ln rho`.
    pub fn radial_regular(&self, rho: f64) -> f64 {
        self.sol.regular_at_log(0, rho.ln()).0
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.radial_value((x - self.center).norm())
    }

    pub fn f_at(&self, x: Vec2) -> f64 {
        f_nonlinearity(self.value(x))
    }

    /// `V + 2 (gamma - N) ln rho - I`, which decays like `rho^-sigma`.
    pub fn tail_deviation(&self, rho: f64) -> f64 {
        self.sol.regular_shifted(0, rho.ln(), 2.0 * self.tail_flux, -self.tail_const)
    }

    /// Observed `sigma` in `tail_deviation ~ rho^-sigma`, fitted where the
    /// deviation sits between `1e-8` and `1e-3`. `None` when too few radii
    /// qualify.
    pub fn tail_order(&self) -> Option<f64> {
        let r_end = self.sol.r_end();
        let pts: Vec<(f64, f64)> = (0..400)
            .map(|k| r_end.powf(k as f64 / 399.0))
            .map(|rho| (1.0 / rho, self.tail_deviation(rho)))
            .filter(|(_, d)| (1e-8..1e-3).contains(&d.abs()))
            .collect();
        crate::quadrature::richardson_slope(&pts).ok()
    }

    /// `(integral_rho^inf t f dt, integral_rho^inf t f ln t dt)`.
    fn suffix(&self, rho: f64) -> (f64, f64) {
        let s = rho.ln();
        let last = self.log_grid.len() - 1;
        if s >= self.log_grid[last] {
            // power-law continuation: f ~ sum c e^{a v}, v affine in s
            let v = self.sol.v(0, rho);
            let mut m = 0.0;
            let mut ml = 0.0;
            for t in self.sol.system().terms(0) {
                let q = 2.0 * t.powers[0] * self.beta - 2.0;
                let e = t.coef * (t.powers[0] * v).exp() * rho * rho;
                m += e / q;
                ml += e * (1.0 / (q * q) + s / q);
            }
            return (m, ml);
        }
        if s <= self.log_grid[0] {
            return (self.above[0], self.above_log[0]);
        }
        let k = self.log_grid.partition_point(|&g| g <= s) - 1;
        let b = self.log_grid[k + 1];
        let m = gauss_kronrod(|u| radial_weight(&self.sol, u), s, b).map_or(f64::NAN, |e| e.value);
        let ml = gauss_kronrod(|u| u * radial_weight(&self.sol, u), s, b).map_or(f64::NAN, |e| e.value);
        (self.above[k + 1] + m, self.above_log[k + 1] + ml)
    }

    /// `(1/2) integral_{rho*}^inf t f(t) ln(t / rho*) dt` written so that it
    /// stays finite as `rho* -> 0`: returns the potential part
    /// `gamma ln rho* + (1/2) integral t f ln(t/rho*) dt`.
    fn log_potential(&self, rho_star: f64) -> f64 {
        let (m, ml) = self.suffix(rho_star);
        if rho_star == 0.0 {
            return 0.5 * ml;
        }
        let l = rho_star.ln();
        if rho_star < 1.0 {
            let inner = 2.0 * self.flux - m;
            0.5 * ml + 0.5 * l * inner
        } else {
            self.flux * l + 0.5 * (ml - l * m)
        }
    }
}

const LN_10: f64 = std::f64::consts::LN_10;

/// `t^2 f(V(t))` with `t = e^s`, the integrand of `integral t f dt` in `s`.
fn radial_weight(sol: &RadialSolution, s: f64) -> f64 {
    let r = s.exp();
    f_nonlinearity(sol.v(0, r)) * r * r
}

/// Vortex positions of the two components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexConfig {
    pub p: Vec<Vec2>,
    pub q: Vec<Vec2>,
}

impl VortexConfig {
    pub fn new(p: Vec<Vec2>, q: Vec<Vec2>) -> Self {
        VortexConfig { p, q }
    }

    pub fn shifted(&self, by: Vec2) -> VortexConfig {
        VortexConfig {
            p: self.p.iter().map(|&v| v - by).collect(),
            q: self.q.iter().map(|&v| v - by).collect(),
        }
    }

    /// `2 * max |vortex| + 1`, a radius enclosing all vortices with margin.
    pub fn enclosing_radius(&self) -> f64 {
        2.0 * self.p.iter().chain(&self.q).map(|v| v.norm()).fold(0.0, f64::max) + 1.0
    }

    pub fn n2(&self) -> u32 {
        self.q.len() as u32
    }

    fn q_sum(&self) -> Vec2 {
        self.q.iter().copied().sum()
    }
}

fn polar_about(center: Vec2) -> PolarOptions {
    PolarOptions::centered_at(center)
}

fn coord(v: Vec2, i: usize) -> f64 {
    if i == 0 {
        v.x
    } else {
        v.y
    }
}

/// `(1/4 pi) integral y f(V(y)) dy`, by polar quadrature about `about`.
pub fn c_vector_about(profile: &ScalarProfile, about: Vec2, spec: &QuadratureSpec) -> Result<Vec2, ApproxError> {
    let spec = spec.with_tail(2.0 * profile.beta - 1.0);
    let opts = polar_about(about);
    let comp = |j: usize| {
        integrate_polar(
            |r, t| {
                let y = about + Vec2::from_polar(r, t);
                let c = if j == 0 { y.x } else { y.y };
                c * profile.f_at(y)
            },
            &spec,
            &opts,
        )
    };
    Ok(Vec2::new(comp(0)?.value, comp(1)?.value) / (4.0 * PI))
}

/// `c = (1/4 pi) integral y f(V(y)) dy`, split as `center * mass` plus the
/// moment of `y - center`, both by quadrature about the profile center.
pub fn c_vector(profile: &ScalarProfile, spec: &QuadratureSpec) -> Result<Vec2, ApproxError> {
    Ok(Moments::compute(profile, spec)?.c_vector())
}

/// Mass, first and second moments of `f(V)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub first: Vec2,
    /// `integral y_i y_j f(V)`.
    pub second: [[f64; 2]; 2],
    /// `C1 = integral (y1^2 - y2^2) f`, `C2 = 2 integral y1 y2 f`, integrated
    /// directly rather than differenced from `second`.
    pub harmonic: (f64, f64),
}

impl Moments {
    /// Quadratures are taken in coordinates relative to the profile center
    /// and shifted afterwards, which keeps `first = center * mass` exact up
    /// to the odd part of the integrand.
    pub fn compute(profile: &ScalarProfile, spec: &QuadratureSpec) -> Result<Self, ApproxError> {
        let c = profile.center;
        let q = |p: f64, g: &dyn Fn(Vec2) -> f64| -> Result<f64, ApproxError> {
            Ok(integrate_polar(
                |r, t| {
                    let z = Vec2::from_polar(r, t);
                    g(z) * f_nonlinearity(profile.radial_value(r))
                },
                &spec.with_tail(2.0 * profile.beta - p),
                &PolarOptions::default(),
            )?
            .value)
        };
        let mass = q(0.0, &|_| 1.0)?;
        let rel = Vec2::new(q(1.0, &|z| z.x)?, q(1.0, &|z| z.y)?);
        let xx = q(2.0, &|z| z.x * z.x)?;
        let yy = q(2.0, &|z| z.y * z.y)?;
        let xy = q(2.0, &|z| z.x * z.y)?;
        let diff = q(2.0, &|z| z.x * z.x - z.y * z.y)?;
        let first = mass * c + rel;
        let shift = |i: usize, j: usize, m: f64| {
            let (ci, cj) = (coord(c, i), coord(c, j));
            m + ci * cj * mass + ci * coord(rel, j) + cj * coord(rel, i)
        };
        let c1 = diff + (c.x * c.x - c.y * c.y) * mass + 2.0 * (c.x * rel.x - c.y * rel.y);
        let c2 = 2.0 * shift(0, 1, xy);
        Ok(Moments {
            mass,
            first,
            second: [[shift(0, 0, xx), shift(0, 1, xy)], [shift(1, 0, xy), shift(1, 1, yy)]],
            harmonic: (c1, c2),
        })
    }

    pub fn c_vector(&self) -> Vec2 {
        self.first / (4.0 * PI)
    }

    /// `d(x) = ((x1^2 - x2^2) C1 + 2 x1 x2 C2) / (8 pi |x|^4)`.
    pub fn d(&self, x: Vec2) -> f64 {
        let (c1, c2) = self.harmonic;
        let r2 = x.norm_sq();
        ((x.x * x.x - x.y * x.y) * c1 + 2.0 * x.x * x.y * c2) / (8.0 * PI * r2 * r2)
    }

    /// `A(x)` from the second moments.
    pub fn a_of_x(&self, cfg: &VortexConfig, x: Vec2) -> f64 {
        a_from_d(cfg, x, self.d(x))
    }
}

fn a_from_d(cfg: &VortexConfig, x: Vec2, d: f64) -> f64 {
    let r2 = x.norm_sq();
    let sq: f64 = cfg.q.iter().map(|q| q.norm_sq()).sum();
    let proj: f64 = cfg.q.iter().map(|q| x.dot(*q).powi(2)).sum();
    sq - d * r2 - 2.0 * proj / r2
}

/// `d(x) = integral (2 (x.y)^2 - |x|^2 |y|^2) f(V(y)) dy / (8 pi |x|^4)` by
/// direct quadrature.
pub fn d_of_x(profile: &ScalarProfile, x: Vec2, spec: &QuadratureSpec) -> Result<f64, ApproxError> {
    if x == Vec2::ZERO {
        return Err(ApproxError::AtOrigin);
    }
    let r2 = x.norm_sq();
    let e = integrate_polar(
        |r, t| {
            let y = profile.center + Vec2::from_polar(r, t);
            (2.0 * x.dot(y).powi(2) - r2 * y.norm_sq()) * profile.f_at(y)
        },
        &spec.with_tail(2.0 * profile.beta - 2.0),
        &polar_about(profile.center).with_angular_tol(RING_ANGULAR_TOL),
    )?;
    Ok(e.value / (8.0 * PI * r2 * r2))
}

/// `A(x) = sum |q|^2 - d(x) |x|^2 - 2 sum (x.q)^2 / |x|^2`.
pub fn a_of_x(cfg: &VortexConfig, profile: &ScalarProfile, x: Vec2, spec: &QuadratureSpec) -> Result<f64, ApproxError> {
    Ok(a_from_d(cfg, x, d_of_x(profile, x, spec)?))
}

/// `A` written as a second angular harmonic in the direction of `x`.
pub fn a_fourier(cfg: &VortexConfig, c1: f64, c2: f64, theta: f64) -> f64 {
    let (s2, c2t) = (2.0 * theta).sin_cos();
    let vortex: f64 = cfg
        .q
        .iter()
        .map(|q| -2.0 * q.x * q.y * s2 - (q.x * q.x - q.y * q.y) * c2t)
        .sum();
    vortex - (c1 * c2t + c2 * s2) / (8.0 * PI)
}

/// `prod |x - eps q|^2 / |x|^(2 N2)` through second order in `eps`.
pub fn vortex_product_expansion(q: &[Vec2], x: Vec2, eps: f64) -> f64 {
    let r2 = x.norm_sq();
    let lin: f64 = 2.0 * q.iter().map(|qi| qi.dot(x)).sum::<f64>();
    let sq: f64 = q.iter().map(|qi| qi.norm_sq()).sum();
    let proj: f64 = q.iter().map(|qi| qi.dot(x).powi(2)).sum();
    1.0 - lin / r2 * eps + (sq + lin * lin / (2.0 * r2) - 2.0 * proj / r2) * eps * eps / r2
}

/// Result of shifting the origin so that `2 sum q + c = 0`.
#[derive(Clone, Debug)]
pub struct Recentered {
    pub shift: Vec2,
    pub config: VortexConfig,
    pub profile: ScalarProfile,
    pub cvec: Vec2,
    /// `|2 sum q + c|` after the shift.
    pub residual: f64,
}

/// Moves the origin to `y0 = (2 sum q + c) / (2 N2 + gamma)`.
pub fn recenter(cfg: &VortexConfig, profile: &ScalarProfile, spec: &QuadratureSpec) -> Result<Recentered, ApproxError> {
    let moments = Moments::compute(profile, spec)?;
    let gamma = moments.mass / (4.0 * PI);
    let denom = 2.0 * cfg.n2() as f64 + gamma;
    let shift = (2.0 * cfg.q_sum() + moments.c_vector()) / denom;
    let config = cfg.shifted(shift);
    let profile = profile.translated(-shift);
    let cvec = c_vector(&profile, spec)?;
    let residual = (2.0 * config.q_sum() + cvec).norm();
    Ok(Recentered {
        shift,
        config,
        profile,
        cvec,
        residual,
    })
}

/// `u1*(x) = (W~_a(0) - W~_a(eps x)) / 2`.
///
/// Near the origin the difference is taken inside one `ln_1p`, since
/// `W~_a(eps x) - W~_a(0)` is far below the size of either term.
pub fn u1_star(eps: f64, params: &LiouvilleParams, x: Vec2) -> f64 {
    let y = eps * x;
    let r = y.norm();
    if r == 0.0 {
        return 0.0;
    }
    let kappa = params.kappa();
    let rk = (kappa * r.ln()).exp();
    if rk >= 1.0 {
        return 0.5 * (liouville_regular_part(params, Vec2::ZERO) - liouville_regular_part(params, y));
    }
    // ln(1 + l |y^k + a|^2) - ln(1 + l |a|^2)
    let l = params.lambda1().exp();
    let a = params.a();
    let t = Vec2::from_polar(rk, kappa * y.angle());
    let num = l * (t.norm_sq() + 2.0 * t.dot(a));
    (num / (1.0 + l * a.norm_sq())).ln_1p()
}

/// Which formula produces `u2*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum U2Branch {
    /// Closed form through the profile and its tail constant; single vortex only.
    Closed,
    /// Logarithmic potential of `f(V(y/eps)) / (2 eps^2)`.
    Green,
}

/// `ln(|y - c| / |y|)`, accurate when `|c| << |y|`.
fn log_distance_ratio(y: Vec2, c: Vec2) -> f64 {
    0.5 * ((c.norm_sq() - 2.0 * y.dot(c)) / y.norm_sq()).ln_1p()
}

/// `u2*(y) - gamma ln|y|` at bubble-scale `y != 0`, with `gamma` the
/// profile's tail flux.
fn u2_deviation(eps: f64, profile: &ScalarProfile, branch: U2Branch, y: Vec2) -> f64 {
    let gamma = profile.tail_flux;
    let rel = y - eps * profile.center;
    let rho = rel.norm() / eps;
    match branch {
        U2Branch::Closed => {
            if rho >= 1.0 {
                -0.5 * profile.tail_deviation(rho) + gamma * log_distance_ratio(y, eps * profile.center)
            } else {
                u2_star(eps, profile, y, branch) - gamma * y.norm().ln()
            }
        }
        U2Branch::Green => u2_star(eps, profile, y, branch) - gamma * y.norm().ln(),
    }
}

/// `u2*(y)` at bubble-scale `y`.
///
/// `Closed`: `-(V(y/eps) - 2 ln|y/eps - p1|) / 2 + gamma ln eps + I / 2`.
/// `Green`: `(1/2 pi) integral ln|y - z| f(V(z/eps)) / (2 eps^2) dz`, reduced
/// to one radial integral because the circle average of `ln|y - z|` is
/// `ln max(|y - c|, |z - c|)` about the profile center `c`.
pub fn u2_star(eps: f64, profile: &ScalarProfile, y: Vec2, branch: U2Branch) -> f64 {
    let rho = (y - eps * profile.center).norm() / eps;
    match branch {
        U2Branch::Closed => {
            -0.5 * (profile.radial_regular(rho) - profile.tail_const) + profile.tail_flux * eps.ln()
        }
        U2Branch::Green => profile.flux * eps.ln() + profile.log_potential(rho),
    }
}

/// Bubble flux for a profile of measured flux `gamma`: moved onto the
/// nearest value with integer `kappa` when within [`KAPPA_SNAP`] of it, so
/// that `W_a` is single-valued for `a != 0`.
pub fn snapped_gamma(gamma: f64, n2: u32) -> f64 {
    let kappa = n2 as f64 + gamma / 2.0 + 1.0;
    if (kappa - kappa.round()).abs() <= KAPPA_SNAP {
        2.0 * (kappa.round() - n2 as f64 - 1.0)
    } else {
        gamma
    }
}

/// Rings that cross the profile off-center see the interpolant's `C^2`
/// seams, amplified by `1/eps^2` inside the core, so the angular sums settle
/// only algebraically near the `1e-8` level.
const RING_ANGULAR_TOL: f64 = 1e-7;

fn ring_opts() -> PolarOptions {
    PolarOptions::default().with_angular_tol(RING_ANGULAR_TOL)
}

/// Everything needed to evaluate the approximate pair at one `(eps, a)`.
#[derive(Clone, Debug)]
pub struct ApproxSolution {
    eps: f64,
    a: Vec2,
    profile: ScalarProfile,
    params: LiouvilleParams,
    vortices: VortexConfig,
    cvec: Vec2,
    shift: Vec2,
    recenter_residual: f64,
    branch: U2Branch,
    moments: Moments,
}

impl ApproxSolution {
    /// Recenters `cfg` and the profile, then fixes `eps` and `a`.
    ///
    /// The profile must sit on the first-component vortices: at `p1` for a
    /// single vortex, or at the common position of all `p_j`.
    pub fn new(
        profile: &ScalarProfile,
        cfg: &VortexConfig,
        eps: f64,
        a: Vec2,
        spec: &QuadratureSpec,
    ) -> Result<Self, ApproxError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(ApproxError::BadEps(eps));
        }
        if cfg.p.len() != profile.n as usize {
            return Err(ApproxError::InvalidConfig(format!(
                "{} first-component vortices for a profile of multiplicity {}",
                cfg.p.len(),
                profile.n
            )));
        }
        let scale = 1.0 + profile.center.norm();
        if cfg.p.iter().any(|p| (*p - profile.center).norm() > 1e-12 * scale) {
            return Err(ApproxError::InvalidConfig(
                "first-component vortices must coincide with the profile center".into(),
            ));
        }
        let r = recenter(cfg, profile, spec)?;
        let moments = Moments::compute(&r.profile, spec)?;
        let gamma = snapped_gamma(profile.tail_flux, cfg.n2());
        let params = LiouvilleParams::new(gamma, cfg.n2(), 0.0, a)?;
        let branch = if profile.n == 1 { U2Branch::Closed } else { U2Branch::Green };
        Ok(ApproxSolution {
            eps,
            a,
            profile: r.profile,
            params,
            vortices: r.config,
            cvec: r.cvec,
            shift: r.shift,
            recenter_residual: r.residual,
            branch,
            moments,
        })
    }

    /// Same construction at another `(eps, a)`, reusing the recentering.
    pub fn at(&self, eps: f64, a: Vec2) -> Result<Self, ApproxError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(ApproxError::BadEps(eps));
        }
        Ok(ApproxSolution {
            eps,
            a,
            params: self.params.with_a(a)?,
            ..self.clone()
        })
    }

    pub fn with_branch(mut self, branch: U2Branch) -> Result<Self, ApproxError> {
        if branch == U2Branch::Closed && self.profile.n != 1 {
            return Err(ApproxError::InvalidConfig("closed-form u2* needs a single vortex".into()));
        }
        self.branch = branch;
        Ok(self)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn a(&self) -> Vec2 {
        self.a
    }
    pub fn profile(&self) -> &ScalarProfile {
        &self.profile
    }
    pub fn params(&self) -> &LiouvilleParams {
        &self.params
    }
    pub fn vortices(&self) -> &VortexConfig {
        &self.vortices
    }
    pub fn cvec(&self) -> Vec2 {
        self.cvec
    }
    /// The `y0` subtracted from all positions.
    pub fn shift(&self) -> Vec2 {
        self.shift
    }
    pub fn recenter_residual(&self) -> f64 {
        self.recenter_residual
    }
    pub fn branch(&self) -> U2Branch {
        self.branch
    }
    pub fn moments(&self) -> &Moments {
        &self.moments
    }
    pub fn gamma(&self) -> f64 {
        self.params.gamma1()
    }
    pub fn kappa(&self) -> f64 {
        self.params.kappa()
    }

    pub fn u1_star(&self, x: Vec2) -> f64 {
        u1_star(self.eps, &self.params, x)
    }

    pub fn u2_star(&self, y: Vec2) -> f64 {
        u2_star(self.eps, &self.profile, y, self.branch)
    }

    /// `u2*(y) - gamma ln|y|` with `gamma` the profile's tail flux.
    pub fn u2_deviation(&self, y: Vec2) -> f64 {
        u2_deviation(self.eps, &self.profile, self.branch, y)
    }

    pub fn d(&self, x: Vec2) -> f64 {
        self.moments.d(x)
    }

    pub fn a_of_x(&self, x: Vec2) -> f64 {
        self.moments.a_of_x(&self.vortices, x)
    }

    /// `W~_a(y) + 2 sum ln|y - eps q| + u2*(y) - W_a(y)` at `y != 0`.
    fn log_ratio(&self, y: Vec2) -> f64 {
        let vort: f64 = self.vortices.q.iter().map(|q| 2.0 * log_distance_ratio(y, self.eps * *q)).sum();
        let offset = self.profile.tail_flux - self.params.gamma1();
        vort + self.u2_deviation(y) + offset * y.norm().ln()
    }

    /// `W~_a(y) + 2 sum ln|y - eps q| + u2*(y)`, the second component on the
    /// bubble scale.
    pub fn second_bubble(&self, y: Vec2) -> f64 {
        let vort: f64 = self.vortices.q.iter().map(|q| 2.0 * (y - self.eps * *q).norm().ln()).sum();
        liouville_regular_part(&self.params, y) + vort + self.u2_star(y)
    }

    /// `e^{W~_a + 2 sum ln|y - eps q| + u2*} / e^{W_a}` at `y != 0`.
    pub fn bubble_ratio(&self, y: Vec2) -> f64 {
        self.log_ratio(y).exp()
    }

    /// `(U1(x), U2(x))`.
    pub fn build_u(&self, x: Vec2) -> (f64, f64) {
        let u1 = self.profile.value(x) + self.u1_star(x);
        let u2 = self.second_bubble(self.eps * x) + 2.0 * self.eps.ln();
        (u1, u2)
    }

    /// `k1` at bubble-scale `y`.
    fn k1_scaled(&self, y: Vec2) -> f64 {
        let e2 = self.eps * self.eps;
        if y == Vec2::ZERO {
            let l = self.second_bubble(y).exp();
            return e2 * l - 2.0 * e2 * e2 * l * l;
        }
        let w = liouville_exp(&self.params, y);
        let d = self.log_ratio(y);
        e2 * w * d.exp_m1() - 2.0 * e2 * e2 * w * w * (2.0 * d).exp()
    }

    /// `k2` at `x`.
    fn k2(&self, x: Vec2) -> f64 {
        if x == Vec2::ZERO {
            return 0.0;
        }
        let w = base_exp(self.kappa(), x);
        self.eps * self.eps * (4.0 * w * w - 2.0 * w * self.a_of_x(x) / x.norm_sq())
    }

    /// `(k1(x), k2(x))`.
    pub fn k_terms(&self, x: Vec2) -> (f64, f64) {
        (self.k1_scaled(self.eps * x), self.k2(x))
    }

    /// Decay exponent of `k^2 (1 + |x|)^(2 + alpha)`.
    fn k_tail(&self, alpha: f64) -> f64 {
        4.0 * self.kappa() + 6.0 - alpha
    }

    /// `||k1||_Y`, integrated on the bubble scale.
    pub fn k1_norm(&self, alpha: f64, spec: &QuadratureSpec) -> Result<f64, ApproxError> {
        let eps = self.eps;
        let e = integrate_polar(
            |r, t| {
                let k = self.k1_scaled(Vec2::from_polar(r, t));
                k * k * (1.0 + r / eps).powf(2.0 + alpha)
            },
            &spec.with_tail(self.k_tail(alpha)),
            &ring_opts(),
        )?;
        Ok(e.value.sqrt() / eps)
    }

    /// `||k2||_Y`.
    pub fn k2_norm(&self, alpha: f64, spec: &QuadratureSpec) -> Result<f64, ApproxError> {
        let e = integrate_polar(
            |r, t| {
                let k = self.k2(Vec2::from_polar(r, t));
                k * k * (1.0 + r).powf(2.0 + alpha)
            },
            &spec.with_tail(self.k_tail(alpha)),
            &ring_opts(),
        )?;
        Ok(e.value.sqrt())
    }

    /// `integral k2 Z_j`, `j = 1, 2`.
    pub fn k2_kernel_moments(&self, spec: &QuadratureSpec) -> Result<[f64; 2], ApproxError> {
        let kappa = self.kappa();
        let mut out = [0.0; 2];
        for (slot, k) in out.iter_mut().zip([KernelIndex::Z1, KernelIndex::Z2]) {
            *slot = integrate_polar(
                |r, t| {
                    let x = Vec2::from_polar(r, t);
                    self.k2(x) * kernel_at(kappa, k, x)
                },
                &spec.with_tail(3.0 * kappa + 2.0),
                &ring_opts(),
            )?
            .value;
        }
        Ok(out)
    }

    /// Residual of the second equation at the approximate pair, on the
    /// bubble scale (away from the vortices).
    pub fn second_residual(&self, y: Vec2) -> f64 {
        self.second_residual_terms(y).iter().sum()
    }

    /// The three pieces of [`ApproxSolution::second_residual`]: the bubble
    /// mismatch `2 k1 / eps^2`, the profile shift `(f(V) - f(U1)) / 2 eps^2`
    /// and the coupling `e^{U1 + u2}`.
    pub fn second_residual_terms(&self, y: Vec2) -> [f64; 3] {
        let e2 = self.eps * self.eps;
        let x = y / self.eps;
        let v = self.profile.value(x);
        let u = self.u1_star(x);
        let coupling = if v == f64::NEG_INFINITY {
            0.0
        } else {
            (v + u + self.second_bubble(y)).exp()
        };
        let drop = if v == f64::NEG_INFINITY { 0.0 } else { f_drop(v, u) };
        [2.0 * self.k1_scaled(y) / e2, drop / (2.0 * e2), coupling]
    }

    /// `integral R2(y) Z_j(y) dy`, `j = 1, 2`, with the kernel modes built on
    /// exponent `kappa`.
    pub fn residual_kernel_moments(&self, kappa: f64, spec: &QuadratureSpec) -> Result<Vec2, ApproxError> {
        let mut out = [0.0; 2];
        for (slot, k) in out.iter_mut().zip([KernelIndex::Z1, KernelIndex::Z2]) {
            *slot = integrate_polar(
                |r, t| {
                    let y = Vec2::from_polar(r, t);
                    self.second_residual(y) * kernel_at(kappa, k, y)
                },
                &spec.with_tail(3.0 * kappa + 4.0),
                &ring_opts(),
            )?
            .value;
        }
        Ok(Vec2::new(out[0], out[1]))
    }

    /// `-r d/dr` of the angular means of `(U1, U2)`, halved, at radius `r`.
    pub fn far_field_exponents(&self, r: f64) -> [f64; 2] {
        let h: f64 = 1e-3;
        let mean = |rr: f64| {
            let n = 64;
            let mut acc = [0.0; 2];
            for k in 0..n {
                let (u1, u2) = self.build_u(Vec2::from_polar(rr, 2.0 * PI * (k as f64 + 0.5) / n as f64));
                acc[0] += u1;
                acc[1] += u2;
            }
            [acc[0] / n as f64, acc[1] / n as f64]
        };
        let (up, dn) = (mean(r * h.exp()), mean(r * (-h).exp()));
        [-(up[0] - dn[0]) / (4.0 * h), -(up[1] - dn[1]) / (4.0 * h)]
    }

    /// Sampled maxima of `u2* - gamma ln|y|` for `|y| >= eps R0` and of
    /// `u2* - gamma ln eps` for `|y| <= eps R0`.
    pub fn u2_bounds(&self) -> U2Bounds {
        let r0 = self.vortices.enclosing_radius();
        let edge = self.eps * r0;
        let gamma = self.profile.tail_flux;
        let mut outer = f64::MIN;
        let mut inner = f64::MIN;
        for i in 0..=160 {
            let r = edge * 10f64.powf(-3.0 + 6.0 * i as f64 / 160.0);
            for k in 0..32 {
                let y = Vec2::from_polar(r, 2.0 * PI * k as f64 / 32.0);
                if r >= edge {
                    outer = outer.max(self.u2_deviation(y));
                } else {
                    inner = inner.max(self.u2_star(y) - gamma * self.eps.ln());
                }
            }
        }
        U2Bounds { r0, outer, inner }
    }
}

/// Constants observed in the two-sided bound on `u2*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct U2Bounds {
    pub r0: f64,
    pub outer: f64,
    pub inner: f64,
}

/// `T` with a flag for the regime `kappa < 2` where its first coefficient
/// turns negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionConstant {
    pub value: f64,
    pub error: f64,
    pub kappa: f64,
    pub kappa_below_two: bool,
}

/// `T = integral_0^inf [(1 - 2/k) t^(2 N2 + g) + t^(3 N2 + 3g/2 + 1)] / (1 + t^k)^5 dt`.
pub fn reduction_t(gamma: f64, n2: u32, spec: &QuadratureSpec) -> Result<ReductionConstant, ApproxError> {
    let n2 = n2 as f64;
    let kappa = n2 + gamma / 2.0 + 1.0;
    let (p1, p2) = (2.0 * n2 + gamma, 3.0 * n2 + 1.5 * gamma + 1.0);
    let c1 = 1.0 - 2.0 / kappa;
    let e = integrate_to_infinity(
        |t| {
            if t == 0.0 {
                return 0.0;
            }
            let l = t.ln();
            let den = 5.0 * crate::profiles::softplus(kappa * l);
            c1 * (p1 * l - den).exp() + (p2 * l - den).exp()
        },
        0.0,
        spec,
    )?;
    Ok(ReductionConstant {
        value: e.value,
        error: e.error,
        kappa,
        kappa_below_two: kappa < 2.0,
    })
}

/// `T` from its unsimplified plane integral,
/// `(1 / 16 pi k^4) integral e^{2 W0} (1 - 2/u + 16 Z1^2 - 2/u^2)`, `u = 1 + |x|^(2k)`.
pub fn reduction_t_polar(gamma: f64, n2: u32, spec: &QuadratureSpec) -> Result<Estimate, ApproxError> {
    let kappa = n2 as f64 + gamma / 2.0 + 1.0;
    let e = integrate_polar(
        |r, t| {
            if r == 0.0 {
                return 0.0;
            }
            let x = Vec2::from_polar(r, t);
            let w = base_exp(kappa, x);
            let inv_u = (-crate::profiles::softplus(2.0 * kappa * r.ln())).exp();
            let z = kernel_at(kappa, KernelIndex::Z1, x);
            w * w * (1.0 - 2.0 * inv_u + 16.0 * z * z - 2.0 * inv_u * inv_u)
        },
        &spec.with_tail(2.0 * gamma + 4.0 * n2 as f64 + 8.0),
        &PolarOptions::default(),
    )?;
    let norm = 16.0 * PI * kappa.powi(4);
    Ok(Estimate {
        value: e.value / norm,
        error: e.error / norm,
    })
}

/// The correction `E(eps, a)` in the reduced equation `T a + E = 0`.
pub trait ResidualModel {
    fn residual(&self, eps: f64, a: Vec2) -> Result<Vec2, ApproxError>;
}

impl<F> ResidualModel for F
where
    F: Fn(f64, Vec2) -> Result<Vec2, ApproxError>,
{
    fn residual(&self, eps: f64, a: Vec2) -> Result<Vec2, ApproxError> {
        self(eps, a)
    }
}

/// Largest distance from an integer at which a measured `kappa` still
/// counts as integral.
pub const KAPPA_SNAP: f64 = 1e-6;

/// The computable leading-order model: projections of the second-equation
/// residual onto `Z1`, `Z2`, normalized so that the reduced equation reads
/// `integral R2 Z_j / (32 pi k^4 eps^2) = 0`.
///
/// The corrections from the linearized solve are not included, so the `a`
/// it produces is the leading-order reduced solution.
#[derive(Clone, Debug)]
pub struct MomentResidual {
    base: ApproxSolution,
    kappa: f64,
    t: f64,
    spec: QuadratureSpec,
}

impl MomentResidual {
    /// `Z1`, `Z2` are smooth only for integer `kappa`; otherwise there is
    /// nothing to reduce.
    pub fn new(base: ApproxSolution, spec: QuadratureSpec) -> Result<Self, ApproxError> {
        let kappa = base.kappa();
        if !base.params.kappa_is_integer() {
            return Err(ApproxError::InvalidConfig(format!(
                "kappa = {} is not an integer; the reduced problem is empty",
                base.kappa()
            )));
        }
        let t = reduction_t(base.gamma(), base.vortices.n2(), &spec)?.value;
        Ok(MomentResidual { base, kappa, t, spec })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `integral R2 Z / (32 pi k^4 eps^2)` at `(eps, a)`.
    pub fn projected(&self, eps: f64, a: Vec2) -> Result<Vec2, ApproxError> {
        let sol = self.base.at(eps, a)?;
        let m = sol.residual_kernel_moments(self.kappa, &self.spec)?;
        Ok(m / (32.0 * PI * self.kappa.powi(4) * eps * eps))
    }
}

impl ResidualModel for MomentResidual {
    fn residual(&self, eps: f64, a: Vec2) -> Result<Vec2, ApproxError> {
        Ok(self.projected(eps, a)? - self.t * a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedOptions {
    pub max_iterations: usize,
    /// Stop once `|T a + E| <= tol * max(eps, |E(eps, 0)|)`.
    pub tol: f64,
    /// Finite-difference step for the Jacobian, relative to `eps`.
    pub fd_step: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            max_iterations: 50,
            tol: 1e-10,
            fd_step: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub a: Vec2,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `T a + E(eps, a) = 0` by damped Newton with a finite-difference
/// Jacobian, starting from `a = 0`.
pub fn solve_reduced_a(
    eps: f64,
    t: f64,
    model: &dyn ResidualModel,
    opts: &ReducedOptions,
) -> Result<ReducedSolution, ApproxError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ApproxError::BadEps(eps));
    }
    if !(t > 0.0) {
        return Err(ApproxError::InvalidConfig(format!("T must be positive (got {t})")));
    }
    let g = |a: Vec2| -> Result<Vec2, ApproxError> { Ok(t * a + model.residual(eps, a)?) };
    let mut a = Vec2::ZERO;
    let mut ga = g(a)?;
    let scale = eps.max(ga.norm());
    let h = opts.fd_step * eps;
    for it in 0..opts.max_iterations {
        if ga.norm() <= opts.tol * scale {
            return Ok(ReducedSolution {
                a,
                iterations: it,
                residual: ga.norm(),
            });
        }
        let c1 = (g(a + Vec2::new(h, 0.0))? - ga) / h;
        let c2 = (g(a + Vec2::new(0.0, h))? - ga) / h;
        let det = c1.x * c2.y - c2.x * c1.y;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let step = Vec2::new(c2.y * ga.x - c2.x * ga.y, -c1.y * ga.x + c1.x * ga.y) / det;
        let mut lambda = 1.0;
        loop {
            let trial = a - lambda * step;
            let gt = g(trial)?;
            if gt.norm() < ga.norm() || lambda < 1.0 / 64.0 {
                a = trial;
                ga = gt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if ga.norm() <= opts.tol * scale {
        return Ok(ReducedSolution {
            a,
            iterations: opts.max_iterations,
            residual: ga.norm(),
        });
    }
    Err(ApproxError::NoConvergence {
        iterations: opts.max_iterations,
        residual: ga.norm(),
    })
}
