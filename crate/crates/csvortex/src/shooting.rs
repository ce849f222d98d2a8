//! Radial solutions of the scalar Chern-Simons-Higgs equation and of the
//! SU(3) Chern-Simons system, found by shooting from the origin.
//!
//! With `v_i = 2 N_i ln r + w_i` the regular parts satisfy
//! `w_i'' + w_i'/r = -g_i(v)` and `w_i'(0) = 0`. Integration runs in
//! `s = ln r`, where the equation becomes `d^2 w_i / ds^2 = -r^2 g_i(v)`.
//!
//! Each nonlinearity `g_i` is a short sum of exponential monomials
//! `coef * exp(a . v)`. That form drives the series start near the origin and
//! the closed-form power-law tails beyond the last grid point.

use crate::ode::{self, Outcome, StepControl};
use crate::quadrature::{gauss_kronrod, QuadratureError};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use std::io::Write;
use thiserror::Error;

/// Integration stops once some `v_i` exceeds this level.
pub const BLOWUP_LEVEL: f64 = 50.0;
/// Distance from the asymptotic constant accepted as topological.
pub const TOPOLOGICAL_THRESHOLD: f64 = 1e-4;
/// `r^2 e^v`, roughly the mass left beyond `r`, must fall below this at the
/// end for a decaying component.
pub const DECAY_THRESHOLD: f64 = 1e-2;
/// Largest relative spread of `-r v'/2` accepted over a fit window.
pub const MAX_BETA_SPREAD: f64 = 0.01;
/// Fewest grid nodes a fit window may contain.
pub const MIN_WINDOW_NODES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("integration blew up near r = {radius:e}")]
    Overflow { radius: f64 },
    #[error("step size underflow near r = {radius:e}")]
    StepUnderflow { radius: f64 },
    #[error("only {nodes} grid nodes in the fit window [{lo:e}, {hi:e}], need {MIN_WINDOW_NODES}")]
    WindowTooSmall { nodes: usize, lo: f64, hi: f64 },
    #[error("solution is {0:?}, not non-topological")]
    NotNontopological(Classification),
    #[error("component {component}: exponent {beta} varies by {spread:e} over the window; r_max is too small")]
    SpreadTooLarge { component: usize, beta: f64, spread: f64 },
    #[error("tail exponent {0} is not integrable against r dr")]
    NonIntegrableTail(f64),
    #[error("target flux {target} is not above the lower bound {bound}")]
    BelowLowerBound { target: f64, bound: f64 },
    #[error("no shooting constant in [{lo}, {hi}] brackets flux {target}")]
    BracketNotFound { target: f64, lo: f64, hi: f64 },
    #[error("shooting did not reach flux {target} (best {best}) in {iterations} iterations")]
    NoConvergence { target: f64, best: f64, iterations: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("csv output failed: {0}")]
    Csv(String),
}

impl From<csv::Error> for ShootingError {
    fn from(e: csv::Error) -> Self {
        ShootingError::Csv(e.to_string())
    }
}

/// Scaling of the scalar nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `e^v (1 - e^v)`, vacuum at `v = 0`.
    Cs1,
    /// `f(t) = 2 e^t (1 - 2 e^t)`, vacuum at `t = ln 1/2`.
    F,
}

impl Normalization {
    pub fn vacuum(self) -> f64 {
        match self {
            Normalization::Cs1 => 0.0,
            Normalization::F => -LN_2,
        }
    }
}

/// Which radial equation a solution belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Scalar(Normalization),
    Su3,
}

/// One term `coef * exp(powers . v)` of a nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [f64; 2],
}

const fn mono(coef: f64, p1: f64, p2: f64) -> Monomial {
    Monomial {
        coef,
        powers: [p1, p2],
    }
}

const CS1_TERMS: [Monomial; 2] = [mono(1.0, 1.0, 0.0), mono(-1.0, 2.0, 0.0)];
const F_TERMS: [Monomial; 2] = [mono(2.0, 1.0, 0.0), mono(-4.0, 2.0, 0.0)];
// 2 F_1 - F_2 and 2 F_2 - F_1
const SU3_FIRST: [Monomial; 5] = [
    mono(2.0, 1.0, 0.0),
    mono(-4.0, 2.0, 0.0),
    mono(1.0, 1.0, 1.0),
    mono(-1.0, 0.0, 1.0),
    mono(2.0, 0.0, 2.0),
];
const SU3_SECOND: [Monomial; 5] = [
    mono(2.0, 0.0, 1.0),
    mono(-4.0, 0.0, 2.0),
    mono(1.0, 1.0, 1.0),
    mono(-1.0, 1.0, 0.0),
    mono(2.0, 2.0, 0.0),
];
/// `2 F_1` and `2 F_2`, the integrands of the mass identities.
pub const TWICE_F1: [Monomial; 3] = [mono(2.0, 1.0, 0.0), mono(-4.0, 2.0, 0.0), mono(2.0, 1.0, 1.0)];
pub const TWICE_F2: [Monomial; 3] = [mono(2.0, 0.0, 1.0), mono(-4.0, 0.0, 2.0), mono(2.0, 1.0, 1.0)];

impl System {
    pub fn components(self) -> usize {
        match self {
            System::Scalar(_) => 1,
            System::Su3 => 2,
        }
    }

    /// The monomial expansion of the nonlinearity driving component `i`.
    pub fn terms(self, i: usize) -> &'static [Monomial] {
        match (self, i) {
            (System::Scalar(Normalization::Cs1), 0) => &CS1_TERMS,
            (System::Scalar(Normalization::F), 0) => &F_TERMS,
            (System::Su3, 0) => &SU3_FIRST,
            (System::Su3, 1) => &SU3_SECOND,
            _ => panic!("component {i} out of range for {self:?}"),
        }
    }

    /// The nonlinearities at `v`, factored so that vacuum values give an
    /// exact zero.
    pub fn nonlinearity(self, v: [f64; 2]) -> [f64; 2] {
        match self {
            System::Scalar(Normalization::Cs1) => {
                let e = v[0].exp();
                [e * -v[0].exp_m1(), 0.0]
            }
            System::Scalar(Normalization::F) => {
                let e = v[0].exp();
                [2.0 * e * -(v[0] + LN_2).exp_m1(), 0.0]
            }
            System::Su3 => {
                let (e1, e2) = (v[0].exp(), v[1].exp());
                let f1 = e1 * (1.0 - 2.0 * e1 + e2);
                let f2 = e2 * (1.0 - 2.0 * e2 + e1);
                [2.0 * f1 - f2, 2.0 * f2 - f1]
            }
        }
    }
}

fn eval_terms(terms: &[Monomial], v: [f64; 2]) -> f64 {
    terms
        .iter()
        .map(|m| {
            let mut x = 0.0;
            if m.powers[0] != 0.0 {
                x += m.powers[0] * v[0];
            }
            if m.powers[1] != 0.0 {
                x += m.powers[1] * v[1];
            }
            m.coef * x.exp()
        })
        .sum()
}

/// Solution type by behavior at infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Topological,
    Nontopological,
    /// First component tends to `ln 1/2`, second to minus infinity.
    Mixed1,
    /// First component tends to minus infinity, second to `ln 1/2`.
    Mixed2,
    Undetermined,
}

/// Why integration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    Completed,
    BlowUp { radius: f64 },
    StepUnderflow { radius: f64 },
}

/// Integration settings for one radial solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Starting radius of the series-initialized integration.
    pub r0: f64,
    pub r_max: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Largest step in `ln r`; also sets the grid density.
    pub max_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            r0: 1e-6,
            r_max: 1e4,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: 0.02,
        }
    }
}

impl SolveOptions {
    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.abs_tol = tol;
        self.rel_tol = tol;
        self
    }

    fn validate(&self) -> Result<(), ShootingError> {
        let ok = self.r0 > 0.0
            && self.r_max > self.r0
            && self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.max_step > 0.0
            && self.r_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ShootingError::InvalidInput(format!("bad solve options {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Node {
    s: f64,
    w: [f64; 2],
    ws: [f64; 2],
    wss: [f64; 2],
}

/// Flux exponents read off a fit window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub window: [f64; 2],
    /// Mean of `-r v_i'/2` over the window.
    pub betas: Vec<f64>,
    /// Max minus min of `-r v_i'/2` over the window.
    pub spreads: Vec<f64>,
    /// Window-end values corrected by the closed-form tail of the
    /// remaining mass; the best estimate of the limit.
    pub asymptotic: Vec<f64>,
}

/// A radial solution on the integrator's accepted grid.
///
/// Between grid nodes values come from quintic Hermite interpolation in
/// `ln r`; below the first node from the series start; beyond the last node
/// by the linear continuation of `w` in `ln r`.
#[derive(Clone, Debug)]
pub struct RadialSolution {
    system: System,
    multiplicities: [u32; 2],
    constants: [f64; 2],
    opts: SolveOptions,
    nodes: Vec<Node>,
    /// Per component, `(amplitude, power)` with `w = c + sum amp e^{power s}`
    /// near the origin.
    series: [Vec<(f64, f64)>; 2],
    termination: Termination,
    classification: Classification,
    betas: Option<BetaFit>,
}

/// Metadata written next to a solution's CSV dump.
#[derive(Clone, Debug, Serialize)]
pub struct SolutionSummary {
    pub system: System,
    pub multiplicities: Vec<u32>,
    pub constants: Vec<f64>,
    pub r0: f64,
    pub r_max: f64,
    pub r_end: f64,
    pub grid_nodes: usize,
    pub termination: Termination,
    pub classification: Classification,
    pub betas: Option<BetaFit>,
}

fn series_start(system: System, n: [u32; 2], c: [f64; 2], comps: usize) -> [Vec<(f64, f64)>; 2] {
    let mut out: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for (i, slot) in out.iter_mut().enumerate().take(comps) {
        let terms = system.terms(i);
        let order = |m: &Monomial| 2.0 * (m.powers[0] * n[0] as f64 + m.powers[1] * n[1] as f64);
        let first = order(&terms[0]);
        if terms.iter().all(|m| order(m) == first) {
            // all monomials enter at one order: use the factored form so a
            // vacuum start stays exactly constant
            let g = system.nonlinearity(c)[i];
            let p = first + 2.0;
            slot.push((-g / (p * p), p));
            continue;
        }
        let mut groups: Vec<(f64, f64)> = Vec::new();
        for m in terms {
            let p = order(m) + 2.0;
            let value = m.coef * (m.powers[0] * c[0] + m.powers[1] * c[1]).exp();
            match groups.iter_mut().find(|g| g.1 == p) {
                Some(g) => g.0 += value,
                None => groups.push((value, p)),
            }
        }
        for (g, p) in groups {
            slot.push((-g / (p * p), p));
        }
    }
    out
}

fn hermite(u: f64) -> ([f64; 6], [f64; 6]) {
    let (u2, u3) = (u * u, u * u * u);
    let (u4, u5) = (u3 * u, u3 * u2);
    let h = [
        1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5,
        u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5,
        0.5 * (u2 - 3.0 * u3 + 3.0 * u4 - u5),
        10.0 * u3 - 15.0 * u4 + 6.0 * u5,
        -4.0 * u3 + 7.0 * u4 - 3.0 * u5,
        0.5 * (u3 - 2.0 * u4 + u5),
    ];
    let d = [
        -30.0 * u2 + 60.0 * u3 - 30.0 * u4,
        1.0 - 18.0 * u2 + 32.0 * u3 - 15.0 * u4,
        0.5 * (2.0 * u - 9.0 * u2 + 12.0 * u3 - 5.0 * u4),
        30.0 * u2 - 60.0 * u3 + 30.0 * u4,
        -12.0 * u2 + 28.0 * u3 - 15.0 * u4,
        0.5 * (3.0 * u2 - 8.0 * u3 + 5.0 * u4),
    ];
    (h, d)
}

fn solve(system: System, n: [u32; 2], c: [f64; 2], opts: &SolveOptions) -> Result<RadialSolution, ShootingError> {
    opts.validate()?;
    if !(c[0].is_finite() && c[1].is_finite()) {
        return Err(ShootingError::InvalidInput("shooting constants must be finite".into()));
    }
    let comps = system.components();
    let series = series_start(system, n, c, comps);
    let s0 = opts.r0.ln();
    let s1 = opts.r_max.ln();
    let ctl = StepControl {
        rtol: opts.rel_tol,
        atol: opts.abs_tol,
        h_init: 1e-3,
        h_max: opts.max_step,
        h_min: 1e-14,
        max_steps: 10_000_000,
    };
    let mut w0 = [0.0; 4];
    for i in 0..comps {
        let (mut w, mut ws) = (c[i], 0.0);
        for &(amp, p) in &series[i] {
            let e = (p * s0).exp();
            w += amp * e;
            ws += amp * p * e;
        }
        w0[2 * i] = w;
        w0[2 * i + 1] = ws;
    }
    let nf = [2.0 * n[0] as f64, 2.0 * n[1] as f64];
    let rhs = move |s: f64, y: &[f64; 4]| {
        let v = [nf[0] * s + y[0], nf[1] * s + y[2]];
        let g = system.nonlinearity(v);
        let r2 = (2.0 * s).exp();
        [y[1], -r2 * g[0], y[3], -r2 * g[1]]
    };
    let mut nodes = Vec::new();
    let outcome = ode::integrate(rhs, s0, s1, w0, &ctl, |s, y, dy| {
        let blown = (0..comps).any(|i| nf[i] * s + y[2 * i] > BLOWUP_LEVEL);
        if blown {
            return false;
        }
        nodes.push(Node {
            s,
            w: [y[0], y[2]],
            ws: [y[1], y[3]],
            wss: [dy[1], dy[3]],
        });
        true
    });
    let termination = match outcome {
        Outcome::Completed => Termination::Completed,
        Outcome::Stopped { at } => Termination::BlowUp { radius: at.exp() },
        Outcome::StepUnderflow { at } => Termination::StepUnderflow { radius: at.exp() },
    };
    let mut sol = RadialSolution {
        system,
        multiplicities: n,
        constants: c,
        opts: *opts,
        nodes,
        series,
        termination,
        classification: Classification::Undetermined,
        betas: None,
    };
    sol.classification = classify(&sol, 0.5).unwrap_or(Classification::Undetermined);
    if sol.classification == Classification::Nontopological {
        let r_end = sol.r_end();
        match extract_beta(&sol, [0.5 * r_end, r_end]) {
            Ok(fit) => sol.betas = Some(fit),
            Err(_) => sol.classification = Classification::Undetermined,
        }
    }
    Ok(sol)
}

/// Radial scalar equation with an `n`-fold vortex at the origin and `w(0) = c`.
pub fn integrate_scalar(
    n: u32,
    c: f64,
    normalization: Normalization,
    opts: &SolveOptions,
) -> Result<RadialSolution, ShootingError> {
    solve(System::Scalar(normalization), [n, 0], [c, 0.0], opts)
}

/// Radial SU(3) system with vortex multiplicities `n` at the origin and
/// `w_i(0) = c_i`.
pub fn integrate_su3(n: [u32; 2], c: [f64; 2], opts: &SolveOptions) -> Result<RadialSolution, ShootingError> {
    solve(System::Su3, n, c, opts)
}

impl RadialSolution {
    pub fn system(&self) -> System {
        self.system
    }

    pub fn components(&self) -> usize {
        self.system.components()
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.multiplicities[..self.components()]
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants[..self.components()]
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn classification(&self) -> Classification {
        self.classification
    }

    pub fn betas(&self) -> Option<&BetaFit> {
        self.betas.as_ref()
    }

    /// Errors unless the integration reached `r_max`.
    pub fn check_complete(&self) -> Result<(), ShootingError> {
        match self.termination {
            Termination::Completed => Ok(()),
            Termination::BlowUp { radius } => Err(ShootingError::Overflow { radius }),
            Termination::StepUnderflow { radius } => Err(ShootingError::StepUnderflow { radius }),
        }
    }

    /// Grid radii.
    pub fn grid(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.s.exp()).collect()
    }

    /// Grid in `ln r`.
    pub fn log_grid(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.s).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Last radius reached.
    pub fn r_end(&self) -> f64 {
        self.s_end().exp()
    }

    fn s_start(&self) -> f64 {
        self.nodes[0].s
    }

    fn s_end(&self) -> f64 {
        self.nodes.last().map_or(self.opts.r0.ln(), |n| n.s)
    }

    /// Regular part and its `ln r` derivative at node values.
    pub fn node_values(&self, i: usize) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.w[i], n.ws[i])).collect()
    }

    fn interval_eval(&self, k: usize, i: usize, s: f64) -> (f64, f64) {
        let (a, b) = (&self.nodes[k], &self.nodes[k + 1]);
        let h = b.s - a.s;
        let u = (s - a.s) / h;
        let (hv, hd) = hermite(u);
        let coeffs = [a.w[i], h * a.ws[i], h * h * a.wss[i], b.w[i], h * b.ws[i], h * h * b.wss[i]];
        let w: f64 = hv.iter().zip(&coeffs).map(|(x, y)| x * y).sum();
        let d: f64 = hd.iter().zip(&coeffs).map(|(x, y)| x * y).sum();
        (w, d / h)
    }

    /// `(w_i, dw_i/ds)` at log-radius `s`.
    pub fn regular_at_log(&self, i: usize, s: f64) -> (f64, f64) {
        assert!(i < self.components(), "component {i} out of range");
        let s_start = self.s_start();
        if s <= s_start {
            let mut w = self.constants[i];
            let mut ws = 0.0;
            for &(amp, p) in &self.series[i] {
                let e = (p * s).exp();
                w += amp * e;
                ws += amp * p * e;
            }
            return (w, ws);
        }
        let last = self.nodes.last().expect("solution has nodes");
        if s >= last.s {
            return (last.w[i] + last.ws[i] * (s - last.s), last.ws[i]);
        }
        let k = self.nodes.partition_point(|n| n.s <= s) - 1;
        self.interval_eval(k, i, s)
    }

    /// `w_i(s) + slope s + offset`, with the shift applied to the node data
    /// before interpolation so that small results keep their precision.
    pub fn regular_shifted(&self, i: usize, s: f64, slope: f64, offset: f64) -> f64 {
        assert!(i < self.components(), "component {i} out of range");
        if s <= self.s_start() {
            return self.regular_at_log(i, s).0 + slope * s + offset;
        }
        let last = self.nodes.last().expect("solution has nodes");
        let at = |n: &Node| n.w[i] + slope * n.s + offset;
        if s >= last.s {
            return at(last) + (last.ws[i] + slope) * (s - last.s);
        }
        let k = self.nodes.partition_point(|n| n.s <= s) - 1;
        let (a, b) = (&self.nodes[k], &self.nodes[k + 1]);
        let h = b.s - a.s;
        let (hv, _) = hermite((s - a.s) / h);
        let coeffs = [
            at(a),
            h * (a.ws[i] + slope),
            h * h * a.wss[i],
            at(b),
            h * (b.ws[i] + slope),
            h * h * b.wss[i],
        ];
        hv.iter().zip(&coeffs).map(|(x, y)| x * y).sum()
    }

    /// `v_i` at radius `r`.
    pub fn v(&self, i: usize, r: f64) -> f64 {
        let s = r.ln();
        2.0 * self.multiplicities[i] as f64 * s + self.regular_at_log(i, s).0
    }

    /// `r dv_i/dr` at radius `r`.
    pub fn r_dv(&self, i: usize, r: f64) -> f64 {
        2.0 * self.multiplicities[i] as f64 + self.regular_at_log(i, r.ln()).1
    }

    /// Local flux exponent `-r v_i'(r) / 2`.
    pub fn local_beta(&self, i: usize, r: f64) -> f64 {
        -0.5 * self.r_dv(i, r)
    }

    fn v_at_log(&self, s: f64) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (i, slot) in v.iter_mut().enumerate().take(self.components()) {
            *slot = 2.0 * self.multiplicities[i] as f64 * s + self.regular_at_log(i, s).0;
        }
        v
    }

    fn v_in_interval(&self, k: usize, s: f64) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (i, slot) in v.iter_mut().enumerate().take(self.components()) {
            *slot = 2.0 * self.multiplicities[i] as f64 * s + self.interval_eval(k, i, s).0;
        }
        v
    }

    /// `integral_0^{r_end} h(r, v(r)) r dr`, one Gauss-Kronrod panel per
    /// grid interval plus the series region below the first node.
    pub fn grid_integral(&self, h: impl Fn(f64, [f64; 2]) -> f64) -> Result<f64, ShootingError> {
        let s_first = self.s_start();
        // below r0 the integrand is smooth in r and r^2 is negligible
        let r0 = s_first.exp();
        let mut total = 0.5 * h(r0, self.v_at_log(s_first)) * r0 * r0;
        for k in 0..self.nodes.len().saturating_sub(1) {
            let (a, b) = (self.nodes[k].s, self.nodes[k + 1].s);
            let est = gauss_kronrod(
                |s| {
                    let r = s.exp();
                    h(r, self.v_in_interval(k, s)) * r * r
                },
                a,
                b,
            )?;
            total += est.value;
        }
        Ok(total)
    }

    /// `integral_{r_end}^inf sum coef exp(a . v) ln(r / r_ref) r dr` under the
    /// same power-law continuation as [`RadialSolution::power_tail`].
    pub fn power_log_tail(&self, terms: &[Monomial], betas: &[f64], r_ref: f64) -> Result<f64, ShootingError> {
        let s = self.s_end();
        let r2 = (2.0 * s).exp();
        let v = self.v_at_log(s);
        let shift = s - r_ref.ln();
        let mut tail = 0.0;
        for m in terms {
            let mut decay = 0.0;
            let mut x = 0.0;
            for i in 0..self.components() {
                if m.powers[i] != 0.0 {
                    decay += 2.0 * m.powers[i] * betas[i];
                    x += m.powers[i] * v[i];
                }
            }
            let e = m.coef * x.exp();
            if e == 0.0 {
                continue;
            }
            if decay <= 2.0 {
                return Err(ShootingError::NonIntegrableTail(decay));
            }
            let q = decay - 2.0;
            tail += e * r2 * (1.0 / (q * q) + shift / q);
        }
        Ok(tail)
    }

    /// Plane integral of `sum coef exp(a . v)` over all of R^2: the grid part
    /// plus the power-law tail implied by exponents `betas`.
    pub fn mass_integral(&self, terms: &[Monomial], betas: &[f64]) -> Result<f64, ShootingError> {
        let grid = self.grid_integral(|_, v| eval_terms(terms, v))?;
        let tail = self.power_tail(terms, betas)?;
        Ok(2.0 * PI * (grid + tail))
    }

    /// `integral_{r_end}^inf sum coef exp(a . v) r dr` with each `v_i` continued
    /// as `v_i(r_end) - 2 beta_i ln(r / r_end)`.
    pub fn power_tail(&self, terms: &[Monomial], betas: &[f64]) -> Result<f64, ShootingError> {
        let s = self.s_end();
        let r2 = (2.0 * s).exp();
        let v = self.v_at_log(s);
        let mut tail = 0.0;
        for m in terms {
            let mut decay = 0.0;
            let mut x = 0.0;
            for i in 0..self.components() {
                if m.powers[i] != 0.0 {
                    decay += 2.0 * m.powers[i] * betas[i];
                    x += m.powers[i] * v[i];
                }
            }
            let e = m.coef * x.exp();
            if e == 0.0 {
                continue;
            }
            if decay <= 2.0 {
                return Err(ShootingError::NonIntegrableTail(decay));
            }
            tail += e * r2 / (decay - 2.0);
        }
        Ok(tail)
    }

    /// Scalar flux `(1/4 pi) integral g(v) dx`; with the F nonlinearity this is
    /// `gamma` in `integral f(V) = 4 pi gamma`.
    pub fn scalar_flux(&self) -> Result<f64, ShootingError> {
        if self.components() != 1 {
            return Err(ShootingError::InvalidInput("scalar_flux needs a scalar solution".into()));
        }
        let fit = self
            .betas
            .as_ref()
            .ok_or(ShootingError::NotNontopological(self.classification))?;
        let mass = self.mass_integral(self.system.terms(0), &fit.asymptotic)?;
        Ok(mass / (4.0 * PI))
    }

    /// The component `i` profile `(ln r, v_i)` on the grid.
    pub fn component_profile(&self, i: usize) -> ComponentProfile {
        let n = 2.0 * self.multiplicities[i] as f64;
        ComponentProfile {
            log_r: self.nodes.iter().map(|p| p.s).collect(),
            values: self.nodes.iter().map(|p| n * p.s + p.w[i]).collect(),
        }
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            system: self.system,
            multiplicities: self.multiplicities().to_vec(),
            constants: self.constants().to_vec(),
            r0: self.opts.r0,
            r_max: self.opts.r_max,
            r_end: self.r_end(),
            grid_nodes: self.nodes.len(),
            termination: self.termination,
            classification: self.classification,
            betas: self.betas.clone(),
        }
    }

    /// Writes `r, v1, v1'[, v2, v2']` per grid node, derivatives in `r`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ShootingError> {
        let mut wtr = csv::Writer::from_writer(out);
        if self.components() == 1 {
            wtr.write_record(["r", "v1", "dv1"])?;
        } else {
            wtr.write_record(["r", "v1", "dv1", "v2", "dv2"])?;
        }
        for node in &self.nodes {
            let r = node.s.exp();
            let mut rec = vec![format!("{r:.17e}")];
            for i in 0..self.components() {
                let n = 2.0 * self.multiplicities[i] as f64;
                rec.push(format!("{:.17e}", n * node.s + node.w[i]));
                rec.push(format!("{:.17e}", (n + node.ws[i]) / r));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| ShootingError::Csv(e.to_string()))?;
        Ok(())
    }
}

fn window_nodes(sol: &RadialSolution, lo: f64, hi: f64) -> Result<(), ShootingError> {
    let (slo, shi) = (lo.ln(), hi.ln());
    let count = sol.nodes.iter().filter(|n| n.s >= slo && n.s <= shi).count();
    if count < MIN_WINDOW_NODES {
        return Err(ShootingError::WindowTooSmall { nodes: count, lo, hi });
    }
    Ok(())
}

const WINDOW_SAMPLES: usize = 65;

/// Mean and spread of the local exponent over `[lo, hi]`, sampled uniformly in `ln r`.
fn window_beta(sol: &RadialSolution, i: usize, lo: f64, hi: f64) -> (f64, f64) {
    let (slo, shi) = (lo.ln(), hi.ln());
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for k in 0..WINDOW_SAMPLES {
        let s = slo + (shi - slo) * k as f64 / (WINDOW_SAMPLES - 1) as f64;
        let b = -0.5 * (2.0 * sol.multiplicities[i] as f64 + sol.regular_at_log(i, s).1);
        sum += b;
        min = min.min(b);
        max = max.max(b);
    }
    (sum / WINDOW_SAMPLES as f64, max - min)
}

/// Classifies by the behavior on `[window * r_end, r_end]`.
pub fn classify(sol: &RadialSolution, window: f64) -> Result<Classification, ShootingError> {
    if !(window > 0.0 && window < 1.0) {
        return Err(ShootingError::InvalidInput(format!("window ratio {window} must lie in (0, 1)")));
    }
    if sol.termination != Termination::Completed || sol.nodes.is_empty() {
        return Ok(Classification::Undetermined);
    }
    let r_end = sol.r_end();
    let lo = window * r_end;
    window_nodes(sol, lo, r_end)?;
    let s_end = sol.s_end();
    let v_end = sol.v_at_log(s_end);
    let v_before = sol.v_at_log(s_end - std::f64::consts::LN_10);
    let settles = |i: usize, level: f64| {
        let d = (v_end[i] - level).abs();
        d < TOPOLOGICAL_THRESHOLD && d <= (v_before[i] - level).abs()
    };
    let decays = |i: usize| {
        let (beta, _) = window_beta(sol, i, lo, r_end);
        beta > 1.0 && (2.0 * s_end + v_end[i]).exp() < DECAY_THRESHOLD
    };
    let class = match sol.system {
        System::Scalar(norm) => {
            if settles(0, norm.vacuum()) {
                Classification::Topological
            } else if decays(0) {
                Classification::Nontopological
            } else {
                Classification::Undetermined
            }
        }
        System::Su3 => {
            let half = -LN_2;
            if settles(0, 0.0) && settles(1, 0.0) {
                Classification::Topological
            } else if decays(0) && decays(1) {
                Classification::Nontopological
            } else if settles(0, half) && decays(1) {
                Classification::Mixed1
            } else if decays(0) && settles(1, half) {
                Classification::Mixed2
            } else {
                Classification::Undetermined
            }
        }
    };
    Ok(class)
}

/// Flux exponents `beta_i = -r v_i'/2` over `window = [r_lo, r_hi]`.
pub fn extract_beta(sol: &RadialSolution, window: [f64; 2]) -> Result<BetaFit, ShootingError> {
    if sol.classification != Classification::Nontopological {
        return Err(ShootingError::NotNontopological(sol.classification));
    }
    let [lo, hi] = window;
    if !(lo > 0.0 && hi > lo && hi <= sol.r_end() * (1.0 + 1e-12)) {
        return Err(ShootingError::InvalidInput(format!(
            "fit window [{lo}, {hi}] must lie inside (0, {}]",
            sol.r_end()
        )));
    }
    window_nodes(sol, lo, hi)?;
    let comps = sol.components();
    let mut betas = Vec::with_capacity(comps);
    let mut spreads = Vec::with_capacity(comps);
    for i in 0..comps {
        let (b, spread) = window_beta(sol, i, lo, hi);
        if spread > MAX_BETA_SPREAD * b.abs() {
            return Err(ShootingError::SpreadTooLarge {
                component: i,
                beta: b,
                spread,
            });
        }
        betas.push(b);
        spreads.push(spread);
    }
    let asymptotic = tail_corrected(sol, hi);
    Ok(BetaFit {
        window,
        betas,
        spreads,
        asymptotic,
    })
}

/// Adds the mass beyond `r` to the local exponents there:
/// `beta_inf = beta(r) + (1/2) integral_r^inf g rho d rho`, with the tail
/// evaluated under the corrected exponents themselves (a short fixed point).
fn tail_corrected(sol: &RadialSolution, r: f64) -> Vec<f64> {
    let comps = sol.components();
    let s = r.ln();
    let v = sol.v_at_log(s);
    let local: Vec<f64> = (0..comps).map(|i| sol.local_beta(i, r)).collect();
    let mut out = local.clone();
    for _ in 0..8 {
        let mut next = local.clone();
        for (i, slot) in next.iter_mut().enumerate() {
            let mut tail = 0.0;
            for m in sol.system.terms(i) {
                let mut decay = 0.0;
                let mut x = 0.0;
                for j in 0..comps {
                    decay += 2.0 * m.powers[j] * out[j];
                    x += m.powers[j] * v[j];
                }
                if decay > 2.0 {
                    tail += m.coef * (x + 2.0 * s).exp() / (decay - 2.0);
                }
            }
            *slot += 0.5 * tail;
        }
        out = next;
    }
    out
}

/// Settings for [`shoot_scalar_for_gamma`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootOptions {
    pub solve: SolveOptions,
    /// Accepted `|gamma - target|`.
    pub gamma_tol: f64,
    /// Scanned range of shooting constants, in unit steps.
    pub scan: [f64; 2],
    pub max_iterations: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            solve: SolveOptions::default(),
            gamma_tol: 1e-6,
            scan: [-40.0, 5.0],
            max_iterations: 200,
        }
    }
}

enum Probe {
    Flux(f64, Box<RadialSolution>),
    /// Not a converged non-topological solution; treated as lying beyond
    /// the flux blow-up.
    Beyond,
}

fn probe(n: u32, c: f64, opts: &SolveOptions) -> Result<Probe, ShootingError> {
    let sol = integrate_scalar(n, c, Normalization::F, opts)?;
    if sol.classification != Classification::Nontopological {
        return Ok(Probe::Beyond);
    }
    let gamma = sol.scalar_flux()?;
    Ok(Probe::Flux(gamma, Box::new(sol)))
}

/// Finds `c` such that the F-normalized scalar solution with `w(0) = c` is
/// non-topological with flux `gamma_target`.
///
/// Flux increases with `c` and diverges as `c` approaches the largest
/// non-topological shooting constant; beyond it trajectories blow up. Runs
/// that are not converged non-topological therefore count as lying above the
/// target.
pub fn shoot_scalar_for_gamma(
    n: u32,
    gamma_target: f64,
    opts: &ShootOptions,
) -> Result<(f64, RadialSolution), ShootingError> {
    let bound = 2.0 * n as f64 + 2.0;
    if !(gamma_target > bound) {
        return Err(ShootingError::BelowLowerBound {
            target: gamma_target,
            bound,
        });
    }
    let above = |p: &Probe| match p {
        Probe::Flux(g, _) => *g > gamma_target,
        Probe::Beyond => true,
    };
    let [scan_lo, scan_hi] = opts.scan;
    let mut lo: Option<(f64, Probe)> = None;
    let mut hi: Option<(f64, Probe)> = None;
    let mut c = scan_lo;
    while c <= scan_hi {
        let p = probe(n, c, &opts.solve)?;
        if above(&p) {
            if lo.is_some() {
                hi = Some((c, p));
                break;
            }
        } else {
            lo = Some((c, p));
        }
        c += 1.0;
    }
    let (Some(mut lo), Some(mut hi)) = (lo, hi) else {
        return Err(ShootingError::BracketNotFound {
            target: gamma_target,
            lo: scan_lo,
            hi: scan_hi,
        });
    };
    let mut iterations = 0;
    let mut best = f64::NAN;
    while iterations < opts.max_iterations {
        iterations += 1;
        let width = hi.0 - lo.0;
        let c_next = match (&lo.1, &hi.1) {
            (Probe::Flux(gl, _), Probe::Flux(gh, _)) if width < 1e-3 => {
                // secant inside the bracket, bisection if it lands outside
                let t = (gamma_target - gl) / (gh - gl);
                let c = lo.0 + t * width;
                if c > lo.0 && c < hi.0 {
                    c
                } else {
                    0.5 * (lo.0 + hi.0)
                }
            }
            _ => 0.5 * (lo.0 + hi.0),
        };
        let p = probe(n, c_next, &opts.solve)?;
        if let Probe::Flux(g, _) = &p {
            best = *g;
            if (g - gamma_target).abs() <= opts.gamma_tol {
                let Probe::Flux(_, sol) = p else { unreachable!() };
                return Ok((c_next, *sol));
            }
        }
        if above(&p) {
            hi = (c_next, p);
        } else {
            lo = (c_next, p);
        }
        if hi.0 - lo.0 < 1e-15 * (1.0 + lo.0.abs()) {
            break;
        }
    }
    Err(ShootingError::NoConvergence {
        target: gamma_target,
        best,
        iterations,
    })
}

/// One component sampled on a log-radius grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentProfile {
    pub log_r: Vec<f64>,
    pub values: Vec<f64>,
}

impl ComponentProfile {
    /// `u(r) = v(r / eps) - 2 ln eps` on the grid `eps * r_k`.
    pub fn rescaled(&self, eps: f64) -> ComponentProfile {
        assert!(eps > 0.0, "scale must be positive");
        let shift = eps.ln();
        ComponentProfile {
            log_r: self.log_r.iter().map(|s| s + shift).collect(),
            values: self.values.iter().map(|v| v - 2.0 * shift).collect(),
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        self.log_r.iter().map(|s| s.exp()).collect()
    }
}

/// Second component rescaled to the blow-up scale.
pub fn rescale_component2(sol: &RadialSolution, eps: f64) -> Result<ComponentProfile, ShootingError> {
    if sol.components() != 2 {
        return Err(ShootingError::InvalidInput("rescaling needs a two-component solution".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ShootingError::InvalidInput(format!("scale {eps} must be positive")));
    }
    Ok(sol.component_profile(1).rescaled(eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> SolveOptions {
        SolveOptions::default().with_r_max(1e3)
    }

    #[test]
    fn vacuum_starts_stay_exact() {
        let cs1 = integrate_scalar(0, 0.0, Normalization::Cs1, &short()).unwrap();
        assert!(cs1.node_values(0).iter().all(|&(w, ws)| w == 0.0 && ws == 0.0));
        assert_eq!(cs1.classification(), Classification::Topological);

        let half = 0.5f64.ln();
        let f = integrate_scalar(0, half, Normalization::F, &short()).unwrap();
        assert!(f.node_values(0).iter().all(|&(w, ws)| w == half && ws == 0.0));
        assert_eq!(f.classification(), Classification::Topological);

        let su3 = integrate_su3([0, 0], [0.0, 0.0], &short()).unwrap();
        for i in 0..2 {
            assert!(su3.node_values(i).iter().all(|&(w, ws)| w == 0.0 && ws == 0.0));
        }
        assert_eq!(su3.classification(), Classification::Topological);
    }

    #[test]
    fn symmetric_third_is_not_a_vacuum() {
        // on the diagonal both nonlinearities reduce to e^v (1 - e^v), which
        // vanishes at v = 0 and not at ln 1/3
        let e = 1.0f64 / 3.0;
        let g = System::Su3.nonlinearity([e.ln(), e.ln()]);
        assert!((g[0] - e * (1.0 - e)).abs() < 1e-15);
        let sol = integrate_su3([0, 0], [e.ln(), e.ln()], &short()).unwrap();
        let (w, _) = sol.regular_at_log(0, 0.0);
        assert!((w - e.ln()).abs() > 1e-3);
    }

    #[test]
    fn factored_nonlinearities_match_monomials() {
        let v = [-0.3, 0.2];
        for sys in [System::Scalar(Normalization::Cs1), System::Scalar(Normalization::F), System::Su3] {
            let g = sys.nonlinearity(v);
            for (i, gi) in g.iter().enumerate().take(sys.components()) {
                assert!((gi - eval_terms(sys.terms(i), v)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn series_start_matches_ode() {
        // w'' + w'/r = -g with w = c + A r^p needs A p^2 = -g
        let s = series_start(System::Scalar(Normalization::F), [1, 0], [-3.0, 0.0], 1);
        let want = [(-2.0 * (-3.0f64).exp() / 16.0, 4.0), (4.0 * (-6.0f64).exp() / 36.0, 6.0)];
        for (got, want) in s[0].iter().zip(want) {
            assert!((got.0 - want.0).abs() < 1e-16 && got.1 == want.1);
        }
    }

    #[test]
    fn hermite_reproduces_quintics() {
        let p = |x: f64| 1.0 + x - 2.0 * x.powi(3) + 0.5 * x.powi(5);
        let dp = |x: f64| 1.0 - 6.0 * x * x + 2.5 * x.powi(4);
        let ddp = |x: f64| -12.0 * x + 10.0 * x.powi(3);
        let (a, b) = (0.3, 0.7);
        let h = b - a;
        for u in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let (hv, hd) = hermite(u);
            let c = [p(a), h * dp(a), h * h * ddp(a), p(b), h * dp(b), h * h * ddp(b)];
            let w: f64 = hv.iter().zip(&c).map(|(x, y)| x * y).sum();
            let d: f64 = hd.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>() / h;
            let x = a + u * h;
            assert!((w - p(x)).abs() < 1e-14);
            assert!((d - dp(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn upward_divergence_is_undetermined() {
        let sol = integrate_scalar(0, 0.5, Normalization::Cs1, &short()).unwrap();
        assert!(matches!(sol.termination(), Termination::BlowUp { .. }));
        assert!(sol.check_complete().is_err());
        assert_eq!(sol.classification(), Classification::Undetermined);
    }

    #[test]
    fn nontopological_scalar_flux_agrees_with_slope() {
        let sol = integrate_scalar(1, -10.0, Normalization::F, &SolveOptions::default()).unwrap();
        assert_eq!(sol.classification(), Classification::Nontopological);
        let gamma = sol.scalar_flux().unwrap();
        assert!(gamma > 4.0);
        let slope = 1.0 + sol.betas().unwrap().betas[0];
        assert!((gamma - slope).abs() <= 5e-3 * gamma, "{gamma} vs {slope}");
    }

    #[test]
    fn topological_solution_rejects_beta_extraction() {
        let sol = integrate_scalar(0, 0.0, Normalization::Cs1, &short()).unwrap();
        let err = extract_beta(&sol, [500.0, 1000.0]).unwrap_err();
        assert!(matches!(err, ShootingError::NotNontopological(Classification::Topological)));
    }

    #[test]
    fn narrow_window_is_rejected() {
        let sol = integrate_scalar(1, -10.0, Normalization::F, &short()).unwrap();
        assert!(matches!(classify(&sol, 0.999), Err(ShootingError::WindowTooSmall { .. })));
    }

    #[test]
    fn lower_bound_rejects_small_target() {
        let err = shoot_scalar_for_gamma(1, 3.0, &ShootOptions::default()).unwrap_err();
        assert!(matches!(err, ShootingError::BelowLowerBound { .. }));
    }

    #[test]
    fn rescaling_is_a_group_action() {
        let sol = integrate_su3([1, 1], [-8.0, -8.0], &short()).unwrap();
        let base = rescale_component2(&sol, 1.0).unwrap();
        assert_eq!(base, sol.component_profile(1));
        let back = rescale_component2(&sol, 0.01).unwrap().rescaled(100.0);
        for (x, y) in back.values.iter().zip(&base.values) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in back.log_r.iter().zip(&base.log_r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let sol = integrate_su3([0, 0], [0.0, 0.0], &short()).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,v1,dv1,v2,dv2"));
        assert_eq!(lines.count(), sol.len());
    }
}
