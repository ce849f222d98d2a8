//! Weighted norms, the kernel projection and the linearized two-scale
//! operator, all acting on fields sampled on log-polar grids.
//!
//! A [`PolarGrid`] is uniform in `s = ln r` and in angle. Fields are
//! interpolated cubically in `s` and trigonometrically in angle, and their
//! Laplacians come either from the caller or from differences on the grid
//! (fourth order in `s`, spectral in angle).

use crate::approx::ScalarProfile;
use crate::geom::Vec2;
use crate::profiles::{base_exp, kernel_at, liouville_exp, KernelIndex, LiouvilleParams};
use crate::quadrature::uniform_weights;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, PI};
use std::sync::OnceLock;
use thiserror::Error;

/// Tail integrands must fall at least this fast in `ln r` before a tail
/// correction is trusted.
pub const TAIL_DECAY_MIN: f64 = 0.05;

/// A fitted `ln r` coefficient above this counts as logarithmic growth.
pub const LOG_GROWTH_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizedError {
    #[error("alpha = {alpha} must lie in (0, {bound})")]
    AlphaOutOfRange { alpha: f64, bound: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("expected {expected} samples, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("radius {radius:e} is outside the grid [{r_min:e}, {r_max:e}] and extrapolation is off")]
    ScaleMismatch { radius: f64, r_min: f64, r_max: f64 },
    #[error("weighted integrand does not decay (log-log slope {slope:.3}); the norm diverges")]
    TailDiverges { slope: f64 },
    #[error("kernel modes need kappa > 1 + alpha/2 to be square integrable (kappa = {kappa})")]
    KappaTooSmall { kappa: f64 },
    #[error("eps must be non-negative and finite (got {0})")]
    BadEps(f64),
}

pub type Result<T> = std::result::Result<T, LinearizedError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    X1,
    X2,
    Y,
}

/// Which of the two growth weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weight {
    /// `(1 + |x|)^-1 (ln(2 + |x|))^(-1 - alpha/2)`.
    Log,
    /// `(1 + |x|)^(-1 - alpha/2)`.
    Power,
}

/// Exponent `alpha` and target space of a weighted norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormSpec {
    alpha: f64,
    space: Space,
}

/// Upper end of the admissible `alpha` range for flux `gamma1` and bubble
/// multiplicity `n2`.
pub fn alpha_bound(gamma1: f64, n2: u32) -> f64 {
    (2.0 * (n2 as f64 + (gamma1 - 2.0) / 2.0)).min(1.0 / 3.0)
}

impl WeightedNormSpec {
    pub fn new(alpha: f64, space: Space, gamma1: f64, n2: u32) -> Result<Self> {
        let bound = alpha_bound(gamma1, n2);
        if !(alpha > 0.0 && alpha < bound) {
            return Err(LinearizedError::AlphaOutOfRange { alpha, bound });
        }
        Ok(WeightedNormSpec { alpha, space })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn with_space(self, space: Space) -> Self {
        WeightedNormSpec { space, ..self }
    }

    pub fn rho(&self, which: Weight, x: Vec2) -> f64 {
        weight_rho(self.alpha, which, x)
    }

    /// `(1 + |x|)^(2 + alpha)`.
    pub fn y_weight(&self, x: Vec2) -> f64 {
        (1.0 + x.norm()).powf(2.0 + self.alpha)
    }
}

pub fn weight_rho(alpha: f64, which: Weight, x: Vec2) -> f64 {
    let r = x.norm();
    match which {
        Weight::Log => 1.0 / ((1.0 + r) * (2.0 + r).ln().powf(1.0 + alpha / 2.0)),
        Weight::Power => (1.0 + r).powf(-1.0 - alpha / 2.0),
    }
}

/// Log-polar sample points `r_i = r_min e^(i ds)`, `theta_j = 2 pi j / n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    log_r_min: f64,
    ds: f64,
    n_radii: usize,
    n_angles: usize,
}

impl PolarGrid {
    pub fn new(r_min: f64, r_max: f64, n_radii: usize, n_angles: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
            return Err(LinearizedError::BadGrid(format!("need 0 < r_min < r_max, got [{r_min}, {r_max}]")));
        }
        if n_radii < 8 {
            return Err(LinearizedError::BadGrid("need at least 8 radii".into()));
        }
        if n_angles < 4 || n_angles % 2 != 0 {
            return Err(LinearizedError::BadGrid("angle count must be even and at least 4".into()));
        }
        let log_r_min = r_min.ln();
        Ok(PolarGrid {
            log_r_min,
            ds: (r_max.ln() - log_r_min) / (n_radii - 1) as f64,
            n_radii,
            n_angles,
        })
    }

    pub fn n_radii(&self) -> usize {
        self.n_radii
    }
    pub fn n_angles(&self) -> usize {
        self.n_angles
    }
    pub fn len(&self) -> usize {
        self.n_radii * self.n_angles
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn log_step(&self) -> f64 {
        self.ds
    }
    pub fn r_min(&self) -> f64 {
        self.log_r_min.exp()
    }
    pub fn r_max(&self) -> f64 {
        self.radius(self.n_radii - 1)
    }

    pub fn radius(&self, i: usize) -> f64 {
        (self.log_r_min + i as f64 * self.ds).exp()
    }

    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_angles as f64
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::from_polar(self.radius(i), self.angle(j))
    }

    /// All sample points, radius-major.
    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.n_radii).flat_map(move |i| (0..self.n_angles).map(move |j| self.point(i, j)))
    }

    /// Same shape with every radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        PolarGrid {
            log_r_min: self.log_r_min + factor.ln(),
            ..*self
        }
    }

    /// Per-radius weights of `integral g dx`: fourth-order in `s`, with the
    /// disk inside `r_min` charged to the first ring.
    fn ring_weights(&self) -> Vec<f64> {
        let dtheta = 2.0 * PI / self.n_angles as f64;
        let mut w: Vec<f64> = uniform_weights(self.n_radii, self.ds)
            .into_iter()
            .enumerate()
            .map(|(i, c)| c * self.radius(i).powi(2) * dtheta)
            .collect();
        w[0] += PI * self.r_min().powi(2) / self.n_angles as f64;
        w
    }

    /// Rows in the outermost decade of radii.
    fn outer_rows(&self) -> std::ops::Range<usize> {
        let span = ((LN_10 / self.ds).ceil() as usize).clamp(3, self.n_radii);
        self.n_radii - span..self.n_radii
    }
}

/// How to evaluate a field outside its grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extrapolation {
    #[default]
    Forbid,
    /// Constant inside `r_min`, linear in `ln r` beyond `r_max`.
    Extend,
}

/// Samples of a function on a [`PolarGrid`], optionally with its Laplacian.
#[derive(Clone, Debug)]
pub struct FieldOnGrid {
    grid: PolarGrid,
    values: Vec<f64>,
    laplacian: Option<Vec<f64>>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl FieldOnGrid {
    pub fn from_values(grid: PolarGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LinearizedError::WrongLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(FieldOnGrid {
            grid,
            values,
            laplacian: None,
            spectrum: OnceLock::new(),
        })
    }

    pub fn zeros(grid: PolarGrid) -> Self {
        FieldOnGrid::sample(grid, |_| 0.0).with_laplacian_fn(|_| 0.0)
    }

    pub fn sample(grid: PolarGrid, f: impl Fn(Vec2) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        FieldOnGrid {
            grid,
            values,
            laplacian: None,
            spectrum: OnceLock::new(),
        }
    }

    /// Attaches Laplacian values computed by `lap` at each sample point.
    pub fn with_laplacian_fn(mut self, lap: impl Fn(Vec2) -> f64) -> Self {
        self.laplacian = Some(self.grid.points().map(lap).collect());
        self
    }

    pub fn with_laplacian(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.grid.len() {
            return Err(LinearizedError::WrongLength {
                expected: self.grid.len(),
                got: values.len(),
            });
        }
        self.laplacian = Some(values);
        Ok(self)
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_angles + j]
    }

    pub fn has_laplacian(&self) -> bool {
        self.laplacian.is_some()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a self + b other`; Laplacians combine when both carry one.
    pub fn combine(&self, a: f64, other: &FieldOnGrid, b: f64) -> Result<FieldOnGrid> {
        if self.grid != other.grid {
            return Err(LinearizedError::GridMismatch);
        }
        let mix = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| a * x + b * y).collect::<Vec<_>>();
        let mut out = FieldOnGrid::from_values(self.grid, mix(&self.values, &other.values))?;
        if let (Some(l1), Some(l2)) = (&self.laplacian, &other.laplacian) {
            out.laplacian = Some(mix(l1, l2));
        }
        Ok(out)
    }

    /// Grid quadrature of `integral self * other dx`.
    pub fn dot(&self, other: &FieldOnGrid) -> Result<f64> {
        if self.grid != other.grid {
            return Err(LinearizedError::GridMismatch);
        }
        Ok(self.weighted_sum(|k| self.values[k] * other.values[k]))
    }

    /// Grid quadrature of `integral self dx`.
    pub fn integral(&self) -> f64 {
        self.weighted_sum(|k| self.values[k])
    }

    fn weighted_sum(&self, g: impl Fn(usize) -> f64) -> f64 {
        let n = self.grid.n_angles;
        self.grid
            .ring_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * (i * n..(i + 1) * n).map(&g).sum::<f64>())
            .sum()
    }

    /// Laplacian values: the attached ones, else grid differences.
    pub fn laplacian(&self) -> Vec<f64> {
        match &self.laplacian {
            Some(l) => l.clone(),
            None => self.grid_laplacian(),
        }
    }

    fn grid_laplacian(&self) -> Vec<f64> {
        let (nr, na, ds) = (self.grid.n_radii, self.grid.n_angles, self.grid.ds);
        let spec = self.spectrum();
        let mut planner = FftPlanner::new();
        let inverse = planner.plan_fft_inverse(na);
        let mut out = vec![0.0; self.values.len()];
        let mut row = vec![Complex64::new(0.0, 0.0); na];
        let v = |i: usize, j: usize| self.values[i * na + j];
        for i in 0..nr {
            for (k, slot) in row.iter_mut().enumerate() {
                let m = signed_harmonic(k, na) as f64;
                *slot = -m * m * spec[i * na + k];
            }
            inverse.process(&mut row);
            let scale = (-2.0 * (self.grid.log_r_min + i as f64 * ds)).exp();
            for j in 0..na {
                // fourth order throughout, one-sided in the first and last two rows
                let w_ss = if i >= 2 && i + 2 < nr {
                    -v(i + 2, j) + 16.0 * v(i + 1, j) - 30.0 * v(i, j) + 16.0 * v(i - 1, j) - v(i - 2, j)
                } else {
                    let (from, step, at): (usize, isize, usize) = match i {
                        0 | 1 => (0, 1, i),
                        _ => (nr - 1, -1, nr - 1 - i),
                    };
                    let f = |l: usize| v((from as isize + step * l as isize) as usize, j);
                    let c: [f64; 6] = if at == 0 {
                        [45.0, -154.0, 214.0, -156.0, 61.0, -10.0]
                    } else {
                        [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]
                    };
                    c.iter().enumerate().map(|(l, c)| c * f(l)).sum()
                } / (12.0 * ds * ds);
                out[i * na + j] = scale * (w_ss + row[j].re / na as f64);
            }
        }
        out
    }

    /// Row-wise discrete Fourier coefficients, computed once.
    fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| row_spectra(&self.values, self.grid.n_angles))
    }

    /// Interpolated value at `x`.
    pub fn eval(&self, x: Vec2, extrapolation: Extrapolation) -> Result<f64> {
        let (nr, na) = (self.grid.n_radii, self.grid.n_angles);
        let r = x.norm();
        let t = if r == 0.0 {
            f64::NEG_INFINITY
        } else {
            (r.ln() - self.grid.log_r_min) / self.grid.ds
        };
        let last = (nr - 1) as f64;
        const SLACK: f64 = 1e-9;
        if (t < -SLACK || t > last + SLACK) && extrapolation == Extrapolation::Forbid {
            return Err(LinearizedError::ScaleMismatch {
                radius: r,
                r_min: self.grid.r_min(),
                r_max: self.grid.r_max(),
            });
        }
        let spec = self.spectrum();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); na / 2 + 1];
        let mut add_row = |i: usize, w: f64| {
            for (m, c) in coeffs.iter_mut().enumerate() {
                *c += w * spec[i * na + m];
            }
        };
        if t <= 0.0 {
            add_row(0, 1.0);
        } else if t >= last {
            let u = t - last;
            add_row(nr - 1, 1.0 + u);
            add_row(nr - 2, -u);
        } else {
            let k = (t.floor() as usize).clamp(1, nr - 3);
            let u = t - (k - 1) as f64;
            for (l, w) in lagrange4(u).into_iter().enumerate() {
                add_row(k - 1 + l, w);
            }
        }
        let theta = x.angle();
        let mut sum = coeffs[0].re;
        for (m, c) in coeffs.iter().enumerate().take(na / 2).skip(1) {
            let e = Complex64::from_polar(1.0, m as f64 * theta);
            sum += 2.0 * (c * e).re;
        }
        sum += coeffs[na / 2].re * (na as f64 / 2.0 * theta).cos();
        Ok(sum / na as f64)
    }
}

fn signed_harmonic(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn row_spectra(values: &[f64], na: usize) -> Vec<Complex64> {
    let fft = FftPlanner::new().plan_fft_forward(na);
    let mut out: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in out.chunks_mut(na) {
        fft.process(row);
    }
    out
}

fn inverse_rows(mut spec: Vec<Complex64>, na: usize) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_inverse(na);
    for row in spec.chunks_mut(na) {
        fft.process(row);
    }
    spec.into_iter().map(|c| c.re / na as f64).collect()
}

/// Cubic Lagrange weights for nodes `0..4` at abscissa `u`.
fn lagrange4(u: f64) -> [f64; 4] {
    [
        -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
        u * (u - 2.0) * (u - 3.0) / 2.0,
        -u * (u - 1.0) * (u - 3.0) / 2.0,
        u * (u - 1.0) * (u - 2.0) / 6.0,
    ]
}

/// Result of a weighted norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    /// Log-log slope of the ring-integrated integrand in the outer decade;
    /// `None` when it vanishes there.
    pub tail_slope: Option<f64>,
    /// Fitted coefficient of `ln r` in the angular mean of the field over the
    /// outer decade.
    pub log_coefficient: f64,
}

impl NormReport {
    pub fn log_growth(&self) -> bool {
        self.log_coefficient.abs() > LOG_GROWTH_TOL
    }
}

/// Norm of `field` in `spec.space()`, with a power-law tail correction fitted
/// on the outer decade of the grid.
///
/// `X1` and `X2` differ only through their weight; a field growing like
/// `ln r` makes the `X1` integrand decay too slowly and is reported as
/// [`LinearizedError::TailDiverges`], while in `X2` it passes with
/// [`NormReport::log_growth`] set.
pub fn weighted_norm(field: &FieldOnGrid, spec: &WeightedNormSpec) -> Result<NormReport> {
    let grid = field.grid;
    let na = grid.n_angles;
    let lap = match spec.space {
        Space::Y => None,
        _ => Some(field.laplacian()),
    };
    let integrand = |k: usize| {
        let x = grid.point(k / na, k % na);
        let w = field.values[k];
        match (spec.space, &lap) {
            (Space::Y, _) => w * w * spec.y_weight(x),
            (space, Some(l)) => {
                let which = if space == Space::X1 { Weight::Log } else { Weight::Power };
                let rho = spec.rho(which, x);
                l[k] * l[k] * spec.y_weight(x) + (w * rho).powi(2)
            }
            (_, None) => unreachable!(),
        }
    };
    let weights = grid.ring_weights();
    let rings: Vec<f64> = (0..grid.n_radii)
        .map(|i| (i * na..(i + 1) * na).map(integrand).sum::<f64>())
        .collect();
    let core: f64 = rings.iter().zip(&weights).map(|(g, w)| g * w).sum();

    // ring integrals per unit ln r
    let dtheta = 2.0 * PI / na as f64;
    let per_s: Vec<(f64, f64)> = grid
        .outer_rows()
        .map(|i| (grid.radius(i), rings[i] * dtheta * grid.radius(i).powi(2)))
        .collect();
    let fit: Vec<(f64, f64)> = per_s
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    let (tail, tail_slope) = if fit.len() < 3 {
        (0.0, None)
    } else {
        let slope = ls_slope(&fit);
        if slope > -TAIL_DECAY_MIN {
            return Err(LinearizedError::TailDiverges { slope });
        }
        (per_s.last().unwrap().1 / -slope, Some(slope))
    };
    Ok(NormReport {
        value: (core + tail).sqrt(),
        tail_slope,
        log_coefficient: log_coefficient(field),
    })
}

/// `||h||_Y`.
pub fn y_norm(h: &FieldOnGrid, spec: &WeightedNormSpec) -> Result<f64> {
    Ok(weighted_norm(h, &spec.with_space(Space::Y))?.value)
}

fn log_coefficient(field: &FieldOnGrid) -> f64 {
    let grid = field.grid;
    let na = grid.n_angles;
    let rows: Vec<(f64, f64)> = grid
        .outer_rows()
        .map(|i| {
            let s = grid.radius(i).ln();
            (s, field.values[i * na..(i + 1) * na].iter().sum::<f64>() / na as f64)
        })
        .collect();
    ls_slope(&rows)
}

/// Least-squares slope of `y` against `x`.
fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// The two angular kernel modes sampled on `grid`, with their Laplacians
/// taken from the kernel equation.
pub fn kernel_fields(grid: PolarGrid, kappa: f64) -> [FieldOnGrid; 2] {
    [KernelIndex::Z1, KernelIndex::Z2].map(|k| {
        FieldOnGrid::sample(grid, |x| kernel_at(kappa, k, x))
            .with_laplacian_fn(|x| -2.0 * base_exp(kappa, x) * kernel_at(kappa, k, x))
    })
}

/// `c_i = integral h Z_i / integral Z_i^2` in the grid inner product.
pub fn kernel_coefficients(h: &FieldOnGrid, kappa: f64) -> Result<[f64; 2]> {
    let [z1, z2] = kernel_fields(h.grid, kappa);
    Ok([h.dot(&z1)? / z1.dot(&z1)?, h.dot(&z2)? / z2.dot(&z2)?])
}

/// `Q h = h - c_1 Z_1 - c_2 Z_2` when `kappa` is an integer, `h` otherwise.
///
/// Moments are taken in the grid inner product, so the projected field is
/// orthogonal to both modes to rounding in that same quadrature.
pub fn project_q(h: &FieldOnGrid, params: &LiouvilleParams, spec: &WeightedNormSpec) -> Result<FieldOnGrid> {
    if !params.kappa_is_integer() {
        return Ok(h.clone());
    }
    let kappa = params.kappa();
    if kappa <= 1.0 + spec.alpha / 2.0 {
        return Err(LinearizedError::KappaTooSmall { kappa });
    }
    let zs = kernel_fields(h.grid, kappa);
    let mut out = h.clone();
    for z in &zs {
        let c = h.dot(z)? / z.dot(z)?;
        out = out.combine(1.0, z, -c)?;
    }
    Ok(out)
}

fn f_prime(v: f64) -> f64 {
    let e = v.exp();
    2.0 * e - 8.0 * e * e
}

/// Both components of the linearized operator at `(eps, a)`.
///
/// `w1` lives on the unit scale and `w2` on the bubble scale; each output
/// shares its input's grid. The coupling terms read `w2` at `eps x` and `w1`
/// at `x / eps` through interpolation. `eps = 0` drops both coupling terms.
pub fn apply_linearized(
    w1: &FieldOnGrid,
    w2: &FieldOnGrid,
    eps: f64,
    params: &LiouvilleParams,
    profile: &ScalarProfile,
    extrapolation: Extrapolation,
) -> Result<(FieldOnGrid, FieldOnGrid)> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(LinearizedError::BadEps(eps));
    }
    let kappa = params.kappa();
    let lap1 = w1.laplacian();
    let mut l1 = Vec::with_capacity(lap1.len());
    for (k, x) in w1.grid.points().enumerate() {
        let mut v = lap1[k] + f_prime(profile.value(x)) * w1.values[k];
        if eps > 0.0 {
            let y = eps * x;
            v -= eps * eps * liouville_exp(params, y) * w2.eval(y, extrapolation)?;
        }
        l1.push(v);
    }
    let lap2 = w2.laplacian();
    let mut l2 = Vec::with_capacity(lap2.len());
    for (k, y) in w2.grid.points().enumerate() {
        let mut v = lap2[k] + 2.0 * base_exp(kappa, y) * w2.values[k];
        if eps > 0.0 {
            let x = y / eps;
            v -= f_prime(profile.value(x)) / (2.0 * eps * eps) * w1.eval(x, extrapolation)?;
        }
        l2.push(v);
    }
    Ok((
        FieldOnGrid::from_values(w1.grid, l1)?,
        FieldOnGrid::from_values(w2.grid, l2)?,
    ))
}

/// Both sides of `integral (Lap w) Z_i = -2 integral e^W0 Z_i w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl DualityCheck {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn integration_by_parts(w: &FieldOnGrid, kappa: f64, mode: KernelIndex) -> Result<DualityCheck> {
    let grid = w.grid;
    let z = FieldOnGrid::sample(grid, |x| kernel_at(kappa, mode, x));
    let lap = FieldOnGrid::from_values(grid, w.laplacian())?;
    let weighted = FieldOnGrid::sample(grid, |x| -2.0 * base_exp(kappa, x));
    let rhs = weighted.weighted_sum(|k| weighted.values[k] * z.values[k] * w.values[k]);
    Ok(DualityCheck {
        lhs: lap.dot(&z)?,
        rhs,
    })
}

/// Outcome of reconstructing a field from its Laplacian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenCheck {
    /// Best sup-norm constant `c_w`.
    pub constant: f64,
    /// `sup |w - c_w - potential|` over the grid.
    pub residual: f64,
}

/// Compares `w` with `c_w + (1/2 pi) integral ln|x - y| Lap w(y) dy`.
///
/// The potential is built harmonic by harmonic from radial integrals of the
/// Laplacian's angular Fourier coefficients; `Lap w` is taken to vanish
/// beyond the grid.
pub fn green_representation_check(w: &FieldOnGrid) -> Result<GreenCheck> {
    let grid = w.grid;
    let (nr, na, ds) = (grid.n_radii, grid.n_angles, grid.ds);
    let lap = row_spectra(&w.laplacian(), na);
    let mut pot = vec![Complex64::new(0.0, 0.0); lap.len()];
    let r0 = grid.r_min();
    for k in 0..na {
        let m = signed_harmonic(k, na).unsigned_abs() as i32;
        let g = |i: usize| lap[i * na + k];
        let r2g = |i: usize| grid.radius(i).powi(2) * g(i);
        if m == 0 {
            // ln r * integral_0^r g rho drho + integral_r^inf g rho ln rho drho
            let mut inner = vec![Complex64::new(0.0, 0.0); nr];
            inner[0] = 0.5 * r0 * r0 * g(0);
            for i in 0..nr - 1 {
                inner[i + 1] = inner[i] + interval4(&r2g, i, nr, ds);
            }
            let log_r2g = |i: usize| (grid.log_r_min + i as f64 * ds) * r2g(i);
            let mut outer = vec![Complex64::new(0.0, 0.0); nr];
            for i in (0..nr - 1).rev() {
                outer[i] = outer[i + 1] + interval4(&log_r2g, i, nr, ds);
            }
            for i in 0..nr {
                let s = grid.log_r_min + i as f64 * ds;
                pot[i * na + k] = s * inner[i] + outer[i];
            }
        } else {
            let mf = m as f64;
            let decay = (-mf * ds).exp();
            // A_i = integral_0^{r_i} (rho/r_i)^m rho^2 g ds
            let mut a = vec![Complex64::new(0.0, 0.0); nr];
            a[0] = r0 * r0 * g(0) / (mf + 2.0);
            for i in 0..nr - 1 {
                let f = |l: usize| (mf * (l as f64 - (i + 1) as f64) * ds).exp() * r2g(l);
                a[i + 1] = decay * a[i] + interval4(&f, i, nr, ds);
            }
            // B_i = integral_{r_i}^inf (r_i/rho)^m rho^2 g ds
            let mut b = vec![Complex64::new(0.0, 0.0); nr];
            for i in (0..nr - 1).rev() {
                let f = |l: usize| (-mf * (l as f64 - i as f64) * ds).exp() * r2g(l);
                b[i] = decay * b[i + 1] + interval4(&f, i, nr, ds);
            }
            for i in 0..nr {
                pot[i * na + k] = -(a[i] + b[i]) / (2.0 * mf);
            }
        }
    }
    let pot = inverse_rows(pot, na);
    let (lo, hi) = w
        .values
        .iter()
        .zip(&pot)
        .map(|(v, p)| v - p)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    Ok(GreenCheck {
        constant: 0.5 * (lo + hi),
        residual: 0.5 * (hi - lo),
    })
}

/// Integral over `[s_i, s_{i+1}]` by the four-point rule behind
/// [`uniform_weights`].
fn interval4(f: &impl Fn(usize) -> Complex64, i: usize, n: usize, h: f64) -> Complex64 {
    let c = if i == 0 {
        9.0 * f(0) + 19.0 * f(1) - 5.0 * f(2) + f(3)
    } else if i == n - 2 {
        f(n - 4) - 5.0 * f(n - 3) + 19.0 * f(n - 2) + 9.0 * f(n - 1)
    } else {
        -f(i - 1) + 13.0 * f(i) + 13.0 * f(i + 1) - f(i + 2)
    };
    c * (h / 24.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{fd_laplacian_refined, integrate_radial, QuadratureSpec};
    use crate::shooting::{shoot_scalar_for_gamma, ShootOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KAPPA: f64 = 5.0;

    fn spec() -> WeightedNormSpec {
        WeightedNormSpec::new(0.2, Space::Y, 8.0, 0).unwrap()
    }

    fn grid(n_angles: usize) -> PolarGrid {
        PolarGrid::new(1e-3, 1e3, 1400, n_angles).unwrap()
    }

    fn base() -> LiouvilleParams {
        LiouvilleParams::base(8.0, 0).unwrap()
    }

    fn profile() -> &'static ScalarProfile {
        static P: OnceLock<ScalarProfile> = OnceLock::new();
        P.get_or_init(|| {
            let opts = ShootOptions {
                gamma_tol: 1e-8,
                ..Default::default()
            };
            let sol = shoot_scalar_for_gamma(1, 8.0, &opts).unwrap().1;
            ScalarProfile::new(sol, Vec2::ZERO).unwrap()
        })
    }

    /// `exp(-1 / (1 - q^2))` for `q = |x - c| / radius < 1`, with its exact
    /// Laplacian.
    fn bump(c: Vec2, radius: f64) -> (impl Fn(Vec2) -> f64, impl Fn(Vec2) -> f64) {
        let value = move |x: Vec2| {
            let q2 = (x - c).norm_sq() / (radius * radius);
            if q2 >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - q2)).exp()
            }
        };
        let lap = move |x: Vec2| {
            let q2 = (x - c).norm_sq() / (radius * radius);
            if q2 >= 1.0 {
                return 0.0;
            }
            let u = 1.0 - q2;
            (-1.0 / u).exp() * (-4.0 / (u * u) - 8.0 * q2 / u.powi(3) + 4.0 * q2 / u.powi(4)) / (radius * radius)
        };
        (value, lap)
    }

    /// Smooth step: 1 below `a`, 0 above `b`.
    fn cutoff(r: f64, a: f64, b: f64) -> f64 {
        let t = ((b - r) / (b - a)).clamp(0.0, 1.0);
        let e = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
        e(t) / (e(t) + e(1.0 - t))
    }

    #[test]
    fn weight_examples() {
        let s = spec();
        assert_eq!(s.rho(Weight::Power, Vec2::ZERO), 1.0);
        let r1 = s.rho(Weight::Log, Vec2::ZERO);
        assert!((r1 - 2f64.ln().powf(-1.1)).abs() < 1e-15);
        assert!((r1 - 1.4966).abs() < 1e-4);
        for r in [0.0, 0.5, 3.0, 1e4] {
            let x = Vec2::new(r, 0.0);
            let rebuilt = s.rho(Weight::Power, x) * (1.0 + r).powf(0.1) / (2.0 + r).ln().powf(1.1);
            assert!((s.rho(Weight::Log, x) - rebuilt).abs() <= 1e-15 * rebuilt);
        }
    }

    #[test]
    fn alpha_range_is_enforced() {
        assert!(WeightedNormSpec::new(0.3, Space::Y, 8.0, 0).is_ok());
        assert!(matches!(
            WeightedNormSpec::new(0.4, Space::Y, 8.0, 0),
            Err(LinearizedError::AlphaOutOfRange { .. })
        ));
        assert!(WeightedNormSpec::new(0.0, Space::Y, 8.0, 0).is_err());
        assert!((alpha_bound(2.1, 0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(PolarGrid::new(1.0, 0.5, 100, 8).is_err());
        assert!(PolarGrid::new(1e-3, 1.0, 4, 8).is_err());
        assert!(PolarGrid::new(1e-3, 1.0, 100, 7).is_err());
        let g = grid(8);
        assert!((g.r_max() - 1e3).abs() < 1e-9);
        assert!((g.scaled(1e-2).r_min() - 1e-5).abs() < 1e-18);
        assert_eq!(
            FieldOnGrid::from_values(g, vec![0.0; 3]).unwrap_err(),
            LinearizedError::WrongLength { expected: g.len(), got: 3 }
        );
    }

    #[test]
    fn interpolation_is_accurate() {
        let g = PolarGrid::new(1e-2, 1e2, 900, 32).unwrap();
        let f = |x: Vec2| (-x.norm_sq()).exp() * (1.0 + x.x * x.y);
        let field = FieldOnGrid::sample(g, f);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = Vec2::from_polar(rng.gen_range(0.05..3.0), rng.gen_range(-PI..PI));
            let v = field.eval(x, Extrapolation::Forbid).unwrap();
            assert!((v - f(x)).abs() <= 1e-8, "{x:?}");
        }
        assert!(matches!(
            field.eval(Vec2::new(1e3, 0.0), Extrapolation::Forbid),
            Err(LinearizedError::ScaleMismatch { .. })
        ));
        let log = FieldOnGrid::sample(g, |x| x.norm().ln());
        let far = log.eval(Vec2::new(1e4, 0.0), Extrapolation::Extend).unwrap();
        assert!((far - 1e4f64.ln()).abs() < 1e-9);
        let near = log.eval(Vec2::ZERO, Extrapolation::Extend).unwrap();
        assert!((near - 1e-2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn grid_laplacian_matches_exact() {
        let g = PolarGrid::new(1e-2, 10.0, 1200, 32).unwrap();
        let c = Vec2::new(0.4, -0.3);
        let field = FieldOnGrid::sample(g, |x| (-(x - c).norm_sq()).exp());
        let exact = FieldOnGrid::sample(g, |x| {
            let d2 = (x - c).norm_sq();
            (4.0 * d2 - 4.0) * (-d2).exp()
        });
        let err = field.laplacian().iter().zip(exact.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn y_norm_of_bubble_density() {
        let s = spec();
        let g = PolarGrid::new(1e-4, 1e3, 3200, 4).unwrap();
        let h = FieldOnGrid::sample(g, |x| base_exp(KAPPA, x));
        let grid_value = y_norm(&h, &s).unwrap();
        let oracle = integrate_radial(
            |r| base_exp(KAPPA, Vec2::new(r, 0.0)).powi(2) * (1.0 + r).powf(2.2),
            &QuadratureSpec::default().with_tail(4.0 * KAPPA + 2.0 - 2.2),
        )
        .unwrap()
        .value
        .sqrt();
        assert!((grid_value - oracle).abs() <= 1e-8 * oracle, "{grid_value} vs {oracle}");
        assert_eq!(y_norm(&FieldOnGrid::zeros(g), &s).unwrap(), 0.0);
    }

    #[test]
    fn z0_is_not_in_y_but_z1_is() {
        let g = grid(32);
        let s = spec();
        let z0 = FieldOnGrid::sample(g, |x| kernel_at(KAPPA, KernelIndex::Z0, x));
        assert!(matches!(y_norm(&z0, &s), Err(LinearizedError::TailDiverges { .. })));
        let z1 = FieldOnGrid::sample(g, |x| kernel_at(KAPPA, KernelIndex::Z1, x));
        let n = y_norm(&z1, &s).unwrap();
        assert!(n.is_finite() && n > 0.0);
    }

    #[test]
    fn log_growth_separates_x1_from_x2() {
        let g = PolarGrid::new(1e-3, 1e40, 4000, 4).unwrap();
        let w = FieldOnGrid::sample(g, |x| 0.5 * (1.0 + x.norm_sq()).ln())
            .with_laplacian_fn(|x| 2.0 / (1.0 + x.norm_sq()).powi(2));
        let s = spec();
        let x2 = weighted_norm(&w, &s.with_space(Space::X2)).unwrap();
        assert!(x2.log_growth());
        assert!((x2.log_coefficient - 1.0).abs() < 1e-6);
        assert!(matches!(
            weighted_norm(&w, &s.with_space(Space::X1)),
            Err(LinearizedError::TailDiverges { .. })
        ));
        let (f, lap) = bump(Vec2::ZERO, 1.0);
        let compact = FieldOnGrid::sample(g, f).with_laplacian_fn(lap);
        let x1 = weighted_norm(&compact, &s.with_space(Space::X1)).unwrap();
        assert!(!x1.log_growth() && x1.value > 0.0);
    }

    #[test]
    fn kernel_modes_are_orthogonal() {
        let g = grid(64);
        let [z1, z2] = kernel_fields(g, KAPPA);
        let e = FieldOnGrid::sample(g, |x| base_exp(KAPPA, x));
        let z1e = FieldOnGrid::sample(g, |x| base_exp(KAPPA, x) * kernel_at(KAPPA, KernelIndex::Z1, x));
        assert!(z1e.dot(&z2).unwrap().abs() <= 1e-10);
        assert!(e.integral() > 0.0);
        let (n1, n2) = (z1.dot(&z1).unwrap(), z2.dot(&z2).unwrap());
        assert!(z1.dot(&z2).unwrap().abs() <= 1e-10);
        assert!((n1 - n2).abs() <= 1e-10 * n1);
    }

    #[test]
    fn projection_examples() {
        let g = grid(64);
        let s = spec();
        let radial = FieldOnGrid::sample(g, |x| (-x.norm_sq()).exp());
        let q = project_q(&radial, &base(), &s).unwrap();
        let diff = q.combine(1.0, &radial, -1.0).unwrap().sup();
        assert!(diff <= 1e-12, "{diff}");
        let [z1, _] = kernel_fields(g, KAPPA);
        assert!(project_q(&z1, &base(), &s).unwrap().sup() <= 1e-10);
        // identity off the integer branch
        let half = LiouvilleParams::base(7.0, 0).unwrap();
        let mixed = radial.combine(1.0, &z1, 1.0).unwrap();
        assert_eq!(project_q(&mixed, &half, &s).unwrap().values(), mixed.values());
    }

    fn random_field(g: PolarGrid, rng: &mut ChaCha8Rng) -> FieldOnGrid {
        let bumps: Vec<(Vec2, f64, f64)> = (0..3)
            .map(|_| {
                let c = Vec2::from_polar(rng.gen_range(0.0..2.0), rng.gen_range(-PI..PI));
                (c, rng.gen_range(0.4..1.0), rng.gen_range(-1.0..1.0))
            })
            .collect();
        let value = {
            let bumps = bumps.clone();
            move |x: Vec2| -> f64 {
                bumps
                    .iter()
                    .map(|(c, w, a)| a * (-(x - *c).norm_sq() / (w * w)).exp())
                    .sum()
            }
        };
        let lap = move |x: Vec2| -> f64 {
            bumps
                .iter()
                .map(|(c, w, a)| {
                    let q = (x - *c).norm_sq() / (w * w);
                    a * 4.0 * (q - 1.0) / (w * w) * (-q).exp()
                })
                .sum()
        };
        FieldOnGrid::sample(g, value).with_laplacian_fn(lap)
    }

    #[test]
    fn projection_on_random_fields() {
        let g = grid(64);
        let s = spec();
        let [z1, z2] = kernel_fields(g, KAPPA);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..8 {
            let h = random_field(g, &mut rng);
            let q = project_q(&h, &base(), &s).unwrap();
            assert!(q.dot(&z1).unwrap().abs() <= 1e-10);
            assert!(q.dot(&z2).unwrap().abs() <= 1e-10);
            let qq = project_q(&q, &base(), &s).unwrap();
            assert!(qq.combine(1.0, &q, -1.0).unwrap().sup() <= 1e-10);
            worst = worst.max(y_norm(&q, &s).unwrap() / y_norm(&h, &s).unwrap());
        }
        assert!(worst <= 5.0, "{worst}");
    }

    #[test]
    fn kernel_mode_is_annihilated() {
        // log-radius step 1e-3
        let g = PolarGrid::new(0.1, 10.0, 4606, 32).unwrap();
        let w1 = FieldOnGrid::zeros(g);
        for k in [KernelIndex::Z1, KernelIndex::Z2] {
            let z = FieldOnGrid::sample(g, |x| kernel_at(KAPPA, k, x));
            let (l1, l2) = apply_linearized(&w1, &z, 0.0, &base(), profile(), Extrapolation::Forbid).unwrap();
            assert_eq!(l1.sup(), 0.0);
            assert!(l2.sup() <= 1e-4, "{k:?}: {}", l2.sup());
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = grid(16);
        let z = FieldOnGrid::zeros(g);
        let eps = 1e-2;
        let (l1, l2) = apply_linearized(&z, &FieldOnGrid::zeros(g.scaled(eps)), eps, &base(), profile(), Extrapolation::Extend)
            .unwrap();
        assert_eq!(l1.sup(), 0.0);
        assert_eq!(l2.sup(), 0.0);
    }

    #[test]
    fn coupling_terms_read_the_other_scale() {
        let eps = 1e-2;
        let g1 = PolarGrid::new(1e-2, 1e2, 400, 16).unwrap();
        let g2 = g1.scaled(eps);
        let params = LiouvilleParams::new(8.0, 0, 0.0, Vec2::new(0.1, -0.05)).unwrap();
        let z = |y: Vec2| kernel_at(KAPPA, KernelIndex::Z1, y);
        let w2 = FieldOnGrid::sample(g2, z);
        let (l1, _) = apply_linearized(&FieldOnGrid::zeros(g1), &w2, eps, &params, profile(), Extrapolation::Forbid).unwrap();
        let want1 = FieldOnGrid::sample(g1, |x| -eps * eps * liouville_exp(&params, eps * x) * z(eps * x));
        let err = l1.combine(1.0, &want1, -1.0).unwrap().sup();
        assert!(err <= 1e-10 * want1.sup(), "{err}");
        let bumpy = |x: Vec2| (-x.norm_sq()).exp() * (1.0 + x.x);
        let w1 = FieldOnGrid::sample(g1, bumpy);
        let (_, l2) = apply_linearized(&w1, &FieldOnGrid::zeros(g2), eps, &params, profile(), Extrapolation::Forbid).unwrap();
        let want2 = FieldOnGrid::sample(g2, |y| {
            let x = y / eps;
            let v = profile().value(x).exp();
            -(2.0 * v - 8.0 * v * v) / (2.0 * eps * eps) * bumpy(x)
        });
        let err = l2.combine(1.0, &want2, -1.0).unwrap().sup();
        assert!(err <= 1e-10 * want2.sup(), "{err}");
        let narrow = PolarGrid::new(1.0, 1e2, 400, 16).unwrap();
        assert!(matches!(
            apply_linearized(&FieldOnGrid::zeros(g1), &FieldOnGrid::zeros(narrow), eps, &params, profile(), Extrapolation::Forbid),
            Err(LinearizedError::ScaleMismatch { .. })
        ));
        assert_eq!(
            apply_linearized(&w1, &w2, -1.0, &params, profile(), Extrapolation::Forbid).unwrap_err(),
            LinearizedError::BadEps(-1.0)
        );
    }

    #[test]
    fn duality_with_kernel_modes() {
        let g = PolarGrid::new(1e-3, 3.0, 2400, 256).unwrap();
        let (f, lap) = bump(Vec2::new(0.5, 0.2), 1.5);
        let w = FieldOnGrid::sample(g, f).with_laplacian_fn(lap);
        for k in [KernelIndex::Z1, KernelIndex::Z2] {
            let check = integration_by_parts(&w, KAPPA, k).unwrap();
            assert!(check.residual() <= 1e-8, "{k:?}: {check:?}");
            assert!(check.lhs.abs() > 1e-4);
        }
    }

    #[test]
    fn green_representation_examples() {
        let g = PolarGrid::new(1e-4, 3.0, 2000, 4).unwrap();
        let (f, lap) = bump(Vec2::ZERO, 1.5);
        let w = FieldOnGrid::sample(g, &f).with_laplacian_fn(&lap);
        let check = green_representation_check(&w).unwrap();
        assert!(check.residual <= 1e-6, "{check:?}");
        assert!(check.constant.abs() <= 1e-6);

        let lifted = FieldOnGrid::sample(g, |x| 2.5 + f(x)).with_laplacian_fn(&lap);
        let check = green_representation_check(&lifted).unwrap();
        assert!(check.residual <= 1e-6);
        assert!((check.constant - 2.5).abs() <= 1e-6);

        let g = PolarGrid::new(1e-4, 20.0, 3000, 4).unwrap();
        let trunc_log = |x: Vec2| 0.5 * (x.norm_sq() + 0.25).ln() * cutoff(x.norm(), 4.0, 10.0);
        let w = FieldOnGrid::sample(g, trunc_log).with_laplacian_fn(|x| fd_laplacian_refined(trunc_log, x, 1e-3));
        let check = green_representation_check(&w).unwrap();
        assert!(check.residual <= 1e-6, "{check:?}");
    }

    #[test]
    fn green_representation_off_center() {
        let g = PolarGrid::new(1e-3, 4.0, 2400, 256).unwrap();
        let (f, lap) = bump(Vec2::new(0.6, -0.4), 1.2);
        let w = FieldOnGrid::sample(g, f).with_laplacian_fn(lap);
        let check = green_representation_check(&w).unwrap();
        assert!(check.residual <= 1e-6, "{check:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn linearized_operator_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let eps = 0.05;
            let g1 = PolarGrid::new(1e-2, 1e2, 200, 16).unwrap();
            let g2 = g1.scaled(eps);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (u1, v1) = (random_field(g1, &mut rng), random_field(g1, &mut rng));
            let (u2, v2) = (random_field(g2, &mut rng), random_field(g2, &mut rng));
            let p = base();
            let ex = Extrapolation::Forbid;
            let (lu1, lu2) = apply_linearized(&u1, &u2, eps, &p, profile(), ex).unwrap();
            let (lv1, lv2) = apply_linearized(&v1, &v2, eps, &p, profile(), ex).unwrap();
            let (s1, s2) = (u1.combine(a, &v1, b).unwrap(), u2.combine(a, &v2, b).unwrap());
            let (ls1, ls2) = apply_linearized(&s1, &s2, eps, &p, profile(), ex).unwrap();
            let r1 = ls1.combine(1.0, &lu1.combine(a, &lv1, b).unwrap(), -1.0).unwrap().sup();
            let r2 = ls2.combine(1.0, &lu2.combine(a, &lv2, b).unwrap(), -1.0).unwrap().sup();
            let scale1 = lu1.sup().max(lv1.sup()).max(1.0);
            let scale2 = lu2.sup().max(lv2.sup()).max(1.0);
            proptest::prop_assert!(r1 <= 1e-12 * scale1, "{}", r1);
            proptest::prop_assert!(r2 <= 1e-12 * scale2, "{}", r2);
        }
    }
}
