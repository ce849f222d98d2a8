//! Adaptive quadrature on intervals, half-lines, the plane in polar form,
//! plus the finite-difference Laplacian and convergence-order fits used to
//! verify closed-form identities.
//!
//! One-dimensional integrals use a globally adaptive Gauss-Kronrod 7/15
//! pair. Half-line integrals are compactified with `t = r / (1 + r)`. When a
//! caller knows the integrand decays like `r^-p`, the radial integral is
//! split at `r = 100` and the remainder is integrated in closed form.

use crate::geom::Vec2;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: value {value:e}, error estimate {error:e} after {subdivisions} subdivisions")]
    NonConvergence {
        value: f64,
        error: f64,
        subdivisions: usize,
    },
    #[error("integrand is not finite at {at}")]
    NonFinite { at: f64 },
    #[error("invalid quadrature settings: {0}")]
    InvalidSpec(&'static str),
    #[error("tail exponent {0} does not give an integrable r dr tail (need p > 2)")]
    NonIntegrableTail(f64),
    #[error("angular trapezoid sum did not settle at radius {radius} with {nodes} nodes")]
    AngularResolution { radius: f64, nodes: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
}

/// Tolerances and limits for one adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Known algebraic decay `r^-p` of a radial integrand.
    pub tail_exponent_hint: Option<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_subdivisions: 2000,
            tail_exponent_hint: None,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tail(mut self, p: f64) -> Self {
        self.tail_exponent_hint = Some(p);
        self
    }

    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(QuadratureError::InvalidSpec("tolerances must be positive"));
        }
        if self.max_subdivisions < 1 {
            return Err(QuadratureError::InvalidSpec("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

/// An integral value with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_value: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: center });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = fc.abs() * WGK[7];
    let mut fv = [(0.0, 0.0); 7];
    for (j, slot) in fv.iter_mut().enumerate() {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite { at: x1 });
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite { at: x2 });
        }
        *slot = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for (j, (f1, f2)) in fv.iter().enumerate() {
        asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = kronrod * half;
    let asc = asc * half.abs();
    let abs_value = abs_sum * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    let round = 50.0 * f64::EPSILON * abs_value;
    if round > error {
        error = round;
    }
    Ok(Panel {
        a,
        b,
        value,
        error,
        abs_value,
    })
}

/// A single Gauss-Kronrod 7/15 panel over `[a, b]`, without subdivision.
pub fn gauss_kronrod(mut f: impl FnMut(f64) -> f64, a: f64, b: f64) -> Result<Estimate, QuadratureError> {
    let p = gk15(&mut f, a, b)?;
    Ok(Estimate {
        value: p.value,
        error: p.error,
    })
}

/// Globally adaptive Gauss-Kronrod integration over a finite interval.
pub fn integrate(
    f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate, QuadratureError> {
    integrate_panels(f, &[a, b], spec)
}

/// Like [`integrate`] over `[breaks[0], breaks[last]]`, with the initial
/// panels taken between consecutive breakpoints. Seeding panels this way
/// keeps narrow peaks from hiding between the nodes of one coarse panel.
pub fn integrate_panels(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate, QuadratureError> {
    spec.validate()?;
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let p = gk15(&mut f, w[0], w[1])?;
        total += p.value;
        total_err += p.error;
        heap.push(p);
    }
    if heap.is_empty() {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let mut subdivisions = heap.len();
    loop {
        let abs_total: f64 = heap.iter().map(|p| p.abs_value).sum();
        let tol = spec
            .abs_tol
            .max(spec.rel_tol * total.abs())
            .max(50.0 * f64::EPSILON * abs_total);
        if total_err <= tol {
            break;
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(QuadratureError::NonConvergence {
                value: total,
                error: total_err,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // The panel cannot be split further in floating point.
            return Err(QuadratureError::NonConvergence {
                value: total,
                error: total_err,
                subdivisions,
            });
        }
        let left = gk15(&mut f, worst.a, mid)?;
        let right = gk15(&mut f, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
        if subdivisions % 64 == 0 {
            // Re-sum to keep cancellation in the running totals from drifting.
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Ok(Estimate { value, error })
}

/// Integral over `[a, inf)` through the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate, QuadratureError> {
    integrate(
        |t| {
            let u = 1.0 - t;
            let x = a + t / u;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (u * u)
            }
        },
        0.0,
        1.0,
        spec,
    )
}

const TAIL_SPLIT: f64 = 100.0;

/// Initial radial panels on `[0, TAIL_SPLIT]`, half-decade spaced.
fn radial_breaks() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((-8..=4).map(|k| 10f64.powf(0.5 * k as f64)))
        .collect()
}

/// `integral_0^inf g(r) dr` as seeded panels up to `TAIL_SPLIT` plus either
/// the algebraic tail `g(R) R / (p - 2)` for `g ~ r^(1-p)` or a mapped
/// integral beyond.
fn radial_line(mut g: impl FnMut(f64) -> f64, spec: &QuadratureSpec) -> Result<Estimate, QuadratureError> {
    let core = integrate_panels(&mut g, &radial_breaks(), spec)?;
    let tail = match spec.tail_exponent_hint {
        Some(p) => {
            if p <= 2.0 {
                return Err(QuadratureError::NonIntegrableTail(p));
            }
            let t = g(TAIL_SPLIT) * TAIL_SPLIT / (p - 2.0);
            if !t.is_finite() {
                return Err(QuadratureError::NonFinite { at: TAIL_SPLIT });
            }
            Estimate { value: t, error: 0.0 }
        }
        None => integrate_to_infinity(&mut g, TAIL_SPLIT, spec)?,
    };
    Ok(Estimate {
        value: core.value + tail.value,
        error: core.error + tail.error,
    })
}

/// `2 pi * integral_0^inf f(r) r dr`, the plane integral of a radial function.
pub fn integrate_radial(
    mut f: impl FnMut(f64) -> f64,
    spec: &QuadratureSpec,
) -> Result<Estimate, QuadratureError> {
    let e = radial_line(|r| f(r) * r, spec)?;
    Ok(Estimate {
        value: 2.0 * PI * e.value,
        error: 2.0 * PI * e.error,
    })
}

/// Angular resolution and origin for [`integrate_polar`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarOptions {
    /// Polar coordinates are taken about this point.
    pub center: Vec2,
    pub theta_nodes: usize,
    /// Node count is doubled per ring until the trapezoid sum settles, up to this cap.
    pub max_theta_nodes: usize,
    /// Two doubling levels count as settled when they differ by at most
    /// this fraction of the mean absolute value on the ring.
    pub angular_tol: f64,
}

impl Default for PolarOptions {
    fn default() -> Self {
        PolarOptions {
            center: Vec2::ZERO,
            theta_nodes: 64,
            max_theta_nodes: 4096,
            angular_tol: 1e-14,
        }
    }
}

impl PolarOptions {
    pub fn centered_at(center: Vec2) -> Self {
        PolarOptions {
            center,
            ..Default::default()
        }
    }

    pub fn with_angular_tol(mut self, tol: f64) -> Self {
        self.angular_tol = tol;
        self
    }
}

/// Trapezoid rule in angle with nested doubling until two levels agree.
pub fn angular_mean(
    mut f: impl FnMut(f64) -> f64,
    nodes: usize,
    max_nodes: usize,
    tol: f64,
) -> Result<f64, usize> {
    let mut n = nodes.max(1);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for k in 0..n {
        let v = f(2.0 * PI * k as f64 / n as f64);
        sum += v;
        abs_sum += v.abs();
    }
    let mut mean = sum / n as f64;
    while n < max_nodes {
        let mut mid = 0.0;
        for k in 0..n {
            let v = f(2.0 * PI * (k as f64 + 0.5) / n as f64);
            mid += v;
            abs_sum += v.abs();
        }
        sum += mid;
        n *= 2;
        let refined = sum / n as f64;
        let scale = abs_sum / n as f64;
        let settled = (refined - mean).abs() <= tol * scale || scale == 0.0;
        mean = refined;
        if settled {
            return Ok(mean);
        }
    }
    Err(n)
}

/// `integral f(r, theta) r dr dtheta` over the plane, in polar coordinates
/// about `opts.center`.
pub fn integrate_polar(
    f: impl Fn(f64, f64) -> f64,
    spec: &QuadratureSpec,
    opts: &PolarOptions,
) -> Result<Estimate, QuadratureError> {
    let mut angular_failure: Option<(f64, usize)> = None;
    let ring = |r: f64, failure: &mut Option<(f64, usize)>| -> f64 {
        match angular_mean(|t| f(r, t), opts.theta_nodes, opts.max_theta_nodes, opts.angular_tol) {
            Ok(m) => 2.0 * PI * m,
            Err(n) => {
                failure.get_or_insert((r, n));
                f64::NAN
            }
        }
    };
    let result = radial_line(|r| ring(r, &mut angular_failure) * r, spec);
    if let Some((radius, nodes)) = angular_failure {
        return Err(QuadratureError::AngularResolution { radius, nodes });
    }
    result
}

/// Five-point Laplacian stencil with spacing `h`.
pub fn fd_laplacian(f: impl Fn(Vec2) -> f64, x: Vec2, h: f64) -> f64 {
    let c = f(x);
    let sum = f(x + Vec2::new(h, 0.0))
        + f(x - Vec2::new(h, 0.0))
        + f(x + Vec2::new(0.0, h))
        + f(x - Vec2::new(0.0, h));
    (sum - 4.0 * c) / (h * h)
}

/// One Richardson step on the five-point stencil, `(4 L(h/2) - L(h)) / 3`,
/// which cancels the `h^2` truncation term.
pub fn fd_laplacian_refined(f: impl Fn(Vec2) -> f64, x: Vec2, h: f64) -> f64 {
    let coarse = fd_laplacian(&f, x, h);
    let fine = fd_laplacian(&f, x, 0.5 * h);
    (4.0 * fine - coarse) / 3.0
}

/// Least-squares slope of `ln|v|` against `ln h`: the observed order of a
/// quantity that behaves like `C h^k`.
pub fn richardson_slope(values: &[(f64, f64)]) -> Result<f64, QuadratureError> {
    if values.len() < 3 {
        return Err(QuadratureError::DegenerateFit("need at least three samples"));
    }
    if values.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(QuadratureError::DegenerateFit("h must be strictly decreasing"));
    }
    let mut pts = Vec::with_capacity(values.len());
    for &(h, v) in values {
        if !(h > 0.0) || v == 0.0 || !v.is_finite() {
            return Err(QuadratureError::DegenerateFit("samples need h > 0 and finite nonzero v"));
        }
        pts.push((h.ln(), v.abs().ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Integrals of a uniformly sampled function over each grid interval,
/// exact for cubics.
pub fn interval_integrals(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 4, "fourth-order interval rule needs at least four samples");
    let mut out = Vec::with_capacity(n - 1);
    out.push(h * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]) / 24.0);
    for i in 1..n - 2 {
        out.push(h * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]) / 24.0);
    }
    out.push(h * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]) / 24.0);
    out
}

/// Quadrature weights of the rule behind [`interval_integrals`].
pub fn uniform_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 4, "fourth-order rule needs at least four samples");
    let mut w = vec![0.0; n];
    let mut add = |i: usize, c: f64| w[i] += h * c / 24.0;
    add(0, 9.0);
    add(1, 19.0);
    add(2, -5.0);
    add(3, 1.0);
    for i in 1..n - 2 {
        add(i - 1, -1.0);
        add(i, 13.0);
        add(i + 1, 13.0);
        add(i + 2, -1.0);
    }
    add(n - 4, 1.0);
    add(n - 3, -5.0);
    add(n - 2, 19.0);
    add(n - 1, 9.0);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn interval_polynomial_and_oscillatory() {
        let e = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, &spec()).unwrap();
        assert_relative_eq!(e.value, 0.0, epsilon = 1e-14);
        let e = integrate(|x| (10.0 * x).sin(), 0.0, PI, &spec()).unwrap();
        assert_relative_eq!(e.value, 0.0, epsilon = 1e-12);
        let e = integrate(|x| x.sqrt(), 0.0, 1.0, &spec()).unwrap();
        assert_relative_eq!(e.value, 2.0 / 3.0, max_relative = 1e-10);
        assert!((e.value - 2.0 / 3.0).abs() <= e.error);
    }

    #[test]
    fn gaussian_normalization() {
        let e = integrate_radial(|r| (-r * r).exp() / PI, &spec()).unwrap();
        assert_relative_eq!(e.value, 1.0, max_relative = 1e-10);
        assert!((e.value - 1.0).abs() <= e.error.max(1e-15));
    }

    #[test]
    fn algebraic_tail_with_and_without_hint() {
        let f = |r: f64| if r >= 1.0 { r.powi(-4) } else { 0.0 };
        let hinted = integrate_radial(f, &spec().with_tail(4.0)).unwrap();
        assert_relative_eq!(hinted.value, PI, max_relative = 1e-10);
        let plain = integrate_radial(f, &spec()).unwrap();
        assert_relative_eq!(plain.value, PI, max_relative = 1e-9);
        assert!(matches!(
            integrate_radial(f, &spec().with_tail(2.0)),
            Err(QuadratureError::NonIntegrableTail(_))
        ));
    }

    #[test]
    fn nonconvergence_is_reported() {
        let tight = QuadratureSpec {
            max_subdivisions: 2,
            ..spec()
        };
        let err = integrate(|x| (1.0 / x).sin(), 1e-3, 1.0, &tight).unwrap_err();
        assert!(matches!(err, QuadratureError::NonConvergence { .. }));
    }

    #[test]
    fn polar_harmonics_vanish() {
        let g = |r: f64| (-r).exp();
        for k in 1..20 {
            let e = integrate_polar(
                |r, t| (k as f64 * t).cos() * g(r),
                &spec(),
                &PolarOptions::default(),
            )
            .unwrap();
            assert!(e.value.abs() <= 1e-12, "k = {k}: {}", e.value);
        }
    }

    #[test]
    fn polar_offcenter_gaussian() {
        let c = Vec2::new(0.8, -0.3);
        let e = integrate_polar(
            |r, t| {
                let y = Vec2::from_polar(r, t) - c;
                (-4.0 * y.norm_sq()).exp()
            },
            &spec(),
            &PolarOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(e.value, PI / 4.0, max_relative = 1e-10);
    }

    #[test]
    fn laplacian_stencil() {
        let x = Vec2::new(0.3, -1.1);
        assert_relative_eq!(fd_laplacian(|p| p.norm_sq(), x, 1e-2), 4.0, epsilon = 1e-10);
        let v = fd_laplacian(|p| p.norm().ln(), Vec2::new(2.0, 0.0), 1e-3);
        assert!(v.abs() < 1e-5);
        let f = |p: Vec2| (p.x * 1.3).sin() * (p.y * 0.7).exp();
        let x = Vec2::new(0.4, 0.2);
        let exact = (0.49 - 1.69) * f(x);
        assert!((fd_laplacian_refined(f, x, 1e-2) - exact).abs() < 1e-9);
    }

    #[test]
    fn laplacian_order_two() {
        let f = |p: Vec2| (p.x * 1.3).sin() * (p.y * 0.7).exp();
        let exact = |p: Vec2| (0.49 - 1.69) * f(p);
        let x = Vec2::new(0.4, 0.2);
        let pts: Vec<(f64, f64)> = [0.08, 0.04, 0.02, 0.01]
            .iter()
            .map(|&h| (h, fd_laplacian(f, x, h) - exact(x)))
            .collect();
        let slope = richardson_slope(&pts).unwrap();
        assert!((slope - 2.0).abs() < 0.1, "{slope}");
    }

    #[test]
    fn slope_examples() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let sq: Vec<_> = hs.iter().map(|&h| (h, h * h)).collect();
        assert_relative_eq!(richardson_slope(&sq).unwrap(), 2.0, epsilon = 1e-12);
        let p: Vec<_> = hs.iter().map(|&h| (h, 3.0 * h.powf(1.5))).collect();
        assert_relative_eq!(richardson_slope(&p).unwrap(), 1.5, epsilon = 1e-12);
        assert!(richardson_slope(&sq[..2]).is_err());
        let bad = [(0.1, 1.0), (0.2, 2.0), (0.05, 3.0)];
        assert!(richardson_slope(&bad).is_err());
        let zero = [(0.1, 1.0), (0.05, 0.0), (0.02, 3.0)];
        assert!(richardson_slope(&zero).is_err());
    }

    #[test]
    fn interval_rule_exact_for_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..12).map(|i| {
            let x = i as f64 * h;
            x * x * x - x + 2.0
        })
        .collect();
        let parts = interval_integrals(&f, h);
        let total: f64 = parts.iter().sum();
        let x1 = 11.0 * h;
        let exact = x1.powi(4) / 4.0 - x1 * x1 / 2.0 + 2.0 * x1;
        assert_relative_eq!(total, exact, max_relative = 1e-13);
        let w = uniform_weights(f.len(), h);
        let via_w: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert_relative_eq!(via_w, exact, max_relative = 1e-13);
    }
}
