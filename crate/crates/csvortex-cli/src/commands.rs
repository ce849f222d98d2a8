//! The five subcommands. Each returns a [`Report`]: the JSON document, any
//! files to write, and the exit status.

use crate::args::{BuildApproxArgs, GlobalOpts, ScanRegionArgs, SolveScalarArgs, SolveSu3Args, VerifyArgs};
use csvortex::approx::{
    reduction_t, snapped_gamma, solve_reduced_a, ApproxSolution, MomentResidual, ReducedOptions, ScalarProfile,
    VortexConfig,
};
use csvortex::flux::{
    exceptional_flux, gamma1, in_omega, in_sn, j, mass_identities, on_ell1_within, on_ell2_within, FluxPoint,
    MassResiduals,
};
use csvortex::geom::Vec2;
use csvortex::quadrature::{richardson_slope, QuadratureSpec};
use csvortex::shooting::{
    integrate_scalar, integrate_su3, shoot_scalar_for_gamma, BetaFit, Classification, Normalization,
    RadialSolution, ShootOptions, SolveOptions, Termination,
};
use csvortex::verify::{run_identity, IdentityReport, IDENTITIES};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Accepted distance of a build target from the first boundary line,
/// relative to the size of the target.
const ON_LINE_TOL: f64 = 1e-9;

/// Flux tolerance when shooting for a target.
const GAMMA_TOL: f64 = 1e-8;

/// Radius at which the far-field exponents of the built pair are read.
const FAR_FIELD_RADIUS: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    IdentityFailure = 1,
    NumericFailure = 2,
    Usage = 64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Usage(_) => Status::Usage,
            CliError::Numeric(_) | CliError::Io(_) => Status::NumericFailure,
        }
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

/// A file produced alongside the JSON report.
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

pub struct Report {
    pub json: String,
    pub files: Vec<OutputFile>,
    pub status: Status,
    /// Printed to stderr when the status is not success.
    pub diagnostic: Option<String>,
}

impl Report {
    fn new<T: Serialize>(doc: &T, stem: &str) -> Result<Self, CliError> {
        let json = serde_json::to_string_pretty(doc).map_err(numeric)? + "\n";
        Ok(Report {
            files: vec![OutputFile {
                name: format!("{stem}.json"),
                contents: json.clone().into_bytes(),
            }],
            json,
            status: Status::Success,
            diagnostic: None,
        })
    }

    fn fail(mut self, status: Status, diagnostic: String) -> Self {
        self.status = status;
        self.diagnostic = Some(diagnostic);
        self
    }

    fn with_file(mut self, name: String, contents: Vec<u8>) -> Self {
        self.files.push(OutputFile { name, contents });
        self
    }
}

/// Validated global settings.
#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub seed: u64,
    pub writes_files: bool,
}

impl RunConfig {
    pub fn new(g: &GlobalOpts) -> Result<Self, CliError> {
        for (name, v) in [("--tol-abs", g.tol_abs), ("--tol-rel", g.tol_rel)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(RunConfig {
            tol_abs: g.tol_abs,
            tol_rel: g.tol_rel,
            seed: g.seed,
            writes_files: g.out_dir.is_some(),
        })
    }

    fn solve_options(&self, r_max: f64) -> Result<SolveOptions, CliError> {
        let base = SolveOptions::default();
        if !(r_max > base.r0 * 10.0 && r_max.is_finite()) {
            return Err(CliError::Usage(format!("--r-max must be finite and well above {} (got {r_max})", base.r0)));
        }
        Ok(SolveOptions {
            abs_tol: self.tol_abs,
            rel_tol: self.tol_rel,
            ..base.with_r_max(r_max)
        })
    }
}

fn solution_csv(sol: &RadialSolution) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).map_err(numeric)?;
    Ok(buf)
}

#[derive(Serialize)]
struct SolveScalarDoc {
    schema_version: u32,
    command: &'static str,
    n: u32,
    normalization: Normalization,
    target_gamma: Option<f64>,
    shooting_constant: f64,
    classification: Classification,
    termination: Termination,
    r_end: f64,
    grid_nodes: usize,
    betas: Option<BetaFit>,
    achieved_gamma: Option<f64>,
    /// `2N + 2`, which every non-topological flux must exceed.
    gamma_lower_bound: f64,
    gamma_bound_holds: Option<bool>,
    /// `k` when `achieved_gamma` sits within 1e-6 of `2Nk/(k-1)`.
    exceptional_k: Option<u32>,
}

pub fn solve_scalar(a: &SolveScalarArgs, cfg: &RunConfig) -> Result<Report, CliError> {
    let solve = cfg.solve_options(a.r_max)?;
    let norm: Normalization = a.normalization.into();
    let (c, sol) = match (a.gamma, a.c) {
        (Some(gamma), None) => {
            if norm != Normalization::F {
                return Err(CliError::Usage("--gamma shoots in the F normalization only".into()));
            }
            let opts = ShootOptions {
                solve,
                gamma_tol: GAMMA_TOL,
                ..Default::default()
            };
            shoot_scalar_for_gamma(a.n, gamma, &opts).map_err(numeric)?
        }
        (None, Some(c)) => {
            if !c.is_finite() {
                return Err(CliError::Usage(format!("--c must be finite (got {c})")));
            }
            (c, integrate_scalar(a.n, c, norm, &solve).map_err(numeric)?)
        }
        _ => return Err(CliError::Usage("give exactly one of --gamma and --c".into())),
    };
    let achieved = match sol.classification() {
        Classification::Nontopological => Some(sol.scalar_flux().map_err(numeric)?),
        _ => None,
    };
    let bound = 2.0 * a.n as f64 + 2.0;
    let doc = SolveScalarDoc {
        schema_version: SCHEMA_VERSION,
        command: "solve-scalar",
        n: a.n,
        normalization: norm,
        target_gamma: a.gamma,
        shooting_constant: c,
        classification: sol.classification(),
        termination: sol.termination(),
        r_end: sol.r_end(),
        grid_nodes: sol.len(),
        betas: sol.betas().cloned(),
        achieved_gamma: achieved,
        gamma_lower_bound: bound,
        gamma_bound_holds: achieved.map(|g| g > bound),
        exceptional_k: achieved.and_then(|g| exceptional_flux(a.n, g, 1e-6)),
    };
    let mut report = Report::new(&doc, "solve_scalar")?;
    if cfg.writes_files {
        report = report.with_file("solve_scalar.csv".into(), solution_csv(&sol)?);
    }
    Ok(classification_status(report, &sol))
}

fn classification_status(report: Report, sol: &RadialSolution) -> Report {
    match (sol.classification(), sol.termination()) {
        (Classification::Undetermined, t) => report.fail(
            Status::NumericFailure,
            format!("solution could not be classified (termination {t:?})"),
        ),
        _ => report,
    }
}

#[derive(Serialize)]
struct Regions {
    in_omega: bool,
    in_sn: bool,
    on_ell1: bool,
    on_ell2: bool,
    /// `J(beta_1 - 1, beta_2 - 1) - J(N_1 + 1, N_2 + 1)`, positive for every
    /// non-topological solution.
    j_margin: f64,
}

#[derive(Serialize)]
struct SolveSu3Doc {
    schema_version: u32,
    command: &'static str,
    n: [u32; 2],
    shooting_constants: [f64; 2],
    classification: Classification,
    termination: Termination,
    r_end: f64,
    grid_nodes: usize,
    betas: Option<BetaFit>,
    regions: Option<Regions>,
    mass_identities: Option<MassResiduals>,
}

/// Band used for line membership of measured exponents.
const MEASURED_LINE_TOL: f64 = 1e-2;

pub fn solve_su3(a: &SolveSu3Args, cfg: &RunConfig) -> Result<Report, CliError> {
    let solve = cfg.solve_options(a.r_max)?;
    if !(a.c1.is_finite() && a.c2.is_finite()) {
        return Err(CliError::Usage("shooting constants must be finite".into()));
    }
    let sol = integrate_su3([a.n1, a.n2], [a.c1, a.c2], &solve).map_err(numeric)?;
    let nontopological = sol.classification() == Classification::Nontopological;
    let (regions, mass) = match sol.betas() {
        Some(fit) if nontopological => {
            // the tail-corrected limits; window means lag behind near the boundary
            let p = FluxPoint::new(fit.asymptotic[0], fit.asymptotic[1], a.n1, a.n2);
            let regions = Regions {
                in_omega: in_omega(&p),
                in_sn: in_sn(&p),
                on_ell1: on_ell1_within(&p, MEASURED_LINE_TOL),
                on_ell2: on_ell2_within(&p, MEASURED_LINE_TOL),
                j_margin: j(p.beta1 - 1.0, p.beta2 - 1.0) - j(a.n1 as f64 + 1.0, a.n2 as f64 + 1.0),
            };
            (Some(regions), Some(mass_identities(&sol).map_err(numeric)?))
        }
        _ => (None, None),
    };
    let doc = SolveSu3Doc {
        schema_version: SCHEMA_VERSION,
        command: "solve-su3",
        n: [a.n1, a.n2],
        shooting_constants: [a.c1, a.c2],
        classification: sol.classification(),
        termination: sol.termination(),
        r_end: sol.r_end(),
        grid_nodes: sol.len(),
        betas: sol.betas().cloned(),
        regions,
        mass_identities: mass,
    };
    let mut report = Report::new(&doc, "solve_su3")?;
    if cfg.writes_files {
        report = report.with_file("solve_su3.csv".into(), solution_csv(&sol)?);
    }
    Ok(classification_status(report, &sol))
}

#[derive(Serialize)]
struct ScanDoc {
    schema_version: u32,
    command: &'static str,
    n: [u32; 2],
    beta1_range: [f64; 2],
    beta2_range: [f64; 2],
    shape: [usize; 2],
    band: f64,
    points: usize,
    in_omega: usize,
    in_sn: usize,
    ell1_band: usize,
    ell2_band: usize,
    /// Points in `S_N` but not in `Omega`; must be zero.
    inclusion_violations: usize,
}

struct ScanRow {
    beta1: f64,
    beta2: f64,
    omega: bool,
    sn: bool,
    ell1: bool,
    ell2: bool,
}

pub fn scan_region(a: &ScanRegionArgs, cfg: &RunConfig) -> Result<Report, CliError> {
    let (m1, m2) = a.shape;
    let step = |(lo, hi): (f64, f64), m: usize| (hi - lo) / (m - 1) as f64;
    let band = a.band.unwrap_or(step(a.beta1, m1).max(step(a.beta2, m2)));
    if !(band >= 0.0 && band.is_finite()) {
        return Err(CliError::Usage(format!("--band must be non-negative (got {band})")));
    }
    let axis = |(lo, hi): (f64, f64), m: usize, k: usize| lo + (hi - lo) * k as f64 / (m - 1) as f64;
    let rows: Vec<ScanRow> = (0..m1 * m2)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / m2, idx % m2);
            let p = FluxPoint::new(axis(a.beta1, m1, i), axis(a.beta2, m2, k), a.n1, a.n2);
            ScanRow {
                beta1: p.beta1,
                beta2: p.beta2,
                omega: in_omega(&p),
                sn: in_sn(&p),
                ell1: on_ell1_within(&p, band),
                ell2: on_ell2_within(&p, band),
            }
        })
        .collect();
    let count = |f: fn(&ScanRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let doc = ScanDoc {
        schema_version: SCHEMA_VERSION,
        command: "scan-region",
        n: [a.n1, a.n2],
        beta1_range: [a.beta1.0, a.beta1.1],
        beta2_range: [a.beta2.0, a.beta2.1],
        shape: [m1, m2],
        band,
        points: rows.len(),
        in_omega: count(|r| r.omega),
        in_sn: count(|r| r.sn),
        ell1_band: count(|r| r.ell1),
        ell2_band: count(|r| r.ell2),
        inclusion_violations: count(|r| r.sn && !r.omega),
    };
    let violations = doc.inclusion_violations;
    let mut report = Report::new(&doc, "scan_region")?;
    if cfg.writes_files {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["beta1", "beta2", "in_omega", "in_sn", "ell1_band", "ell2_band"])
            .map_err(numeric)?;
        for r in &rows {
            wtr.write_record([
                format!("{:.17e}", r.beta1),
                format!("{:.17e}", r.beta2),
                r.omega.to_string(),
                r.sn.to_string(),
                r.ell1.to_string(),
                r.ell2.to_string(),
            ])
            .map_err(numeric)?;
        }
        let buf = wtr.into_inner().map_err(numeric)?;
        report = report.with_file("scan_region.csv".into(), buf);
    }
    if violations > 0 {
        report = report.fail(
            Status::IdentityFailure,
            format!("{violations} grid points lie in S_N but outside Omega"),
        );
    }
    Ok(report)
}

#[derive(Serialize)]
struct EpsRecord {
    eps: f64,
    a: Vec2,
    a_over_eps: f64,
    reduced_iterations: Option<usize>,
    k1_norm: f64,
    k2_norm: f64,
    /// Moments of `k2` against `Z1`, `Z2`.
    k2_moments: [f64; 2],
    far_field_betas: [f64; 2],
}

#[derive(Serialize)]
struct Slopes {
    k1: Option<f64>,
    k2: Option<f64>,
    /// `2 - alpha/2`, the predicted lower bound for both.
    predicted: f64,
}

#[derive(Serialize)]
struct ApproxResiduals {
    /// `|2 sum q + c|` after recentering.
    recenter: f64,
    /// Largest `|k2 moment| / ||k2||`.
    k2_moments: f64,
    /// Largest relative error of the far-field exponents against the target.
    far_field: f64,
    /// Profile flux against `gamma_1`.
    profile_flux: f64,
}

#[derive(Serialize)]
struct BuildApproxDoc {
    schema_version: u32,
    command: &'static str,
    beta1: f64,
    beta2: f64,
    n: [u32; 2],
    gamma1: f64,
    kappa: f64,
    alpha: f64,
    p: Vec2,
    q: Vec<Vec2>,
    shooting_constant: f64,
    /// Origin shift applied by the recentering.
    shift: Vec2,
    /// First moment of the recentered profile.
    c_vector: Vec2,
    reduction_t: f64,
    records: Vec<EpsRecord>,
    slopes: Slopes,
    residuals: ApproxResiduals,
}

/// Field dump radii: log-spaced over five decades.
const DUMP_RADII: usize = 61;
const DUMP_ANGLES: usize = 16;

fn field_dump(sol: &ApproxSolution) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["r", "theta", "u1", "u2", "k1", "k2"]).map_err(numeric)?;
    let center = sol.vortices().p[0];
    for i in 0..DUMP_RADII {
        let r = 10f64.powf(-3.0 + 5.0 * i as f64 / (DUMP_RADII - 1) as f64);
        for k in 0..DUMP_ANGLES {
            let theta = 2.0 * PI * k as f64 / DUMP_ANGLES as f64;
            let x = Vec2::from_polar(r, theta);
            // vortex points are singular; skip the one sample that could land on one
            if (x - center).norm() < 1e-12 {
                continue;
            }
            let (u1, u2) = sol.build_u(x);
            let (k1, k2) = sol.k_terms(x);
            wtr.write_record([r, theta, u1, u2, k1, k2].map(|v| format!("{v:.17e}")))
                .map_err(numeric)?;
        }
    }
    wtr.into_inner().map_err(numeric)
}

pub fn build_approx(a: &BuildApproxArgs, cfg: &RunConfig) -> Result<Report, CliError> {
    let target = FluxPoint::new(a.beta1, a.beta2, a.n1, a.n2);
    let line_tol = ON_LINE_TOL * (1.0 + a.beta1.abs() + a.beta2.abs());
    if !on_ell1_within(&target, line_tol) {
        return Err(CliError::Usage(format!(
            "target (beta1, beta2) = ({}, {}) is not on the line beta2 - beta1 = {} for N = ({}, {})",
            a.beta1,
            a.beta2,
            a.n1 + 2 * a.n2 + 3,
            a.n1,
            a.n2
        )));
    }
    if a.n1 == 0 {
        return Err(CliError::Usage("--n1 must be at least 1".into()));
    }
    if a.eps.is_empty() || a.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(CliError::Usage("--eps must list positive finite values".into()));
    }
    if a.eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Usage("--eps must be strictly decreasing".into()));
    }
    let q = if a.q.is_empty() {
        vec![Vec2::ZERO; a.n2 as usize]
    } else {
        a.q.clone()
    };
    if q.len() != a.n2 as usize {
        return Err(CliError::Usage(format!("{} --q positions for N2 = {}", q.len(), a.n2)));
    }
    let gamma = gamma1(&target);
    let bound = csvortex::linearized::alpha_bound(gamma, a.n2);
    if !(a.alpha > 0.0 && a.alpha < bound) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, {bound}) (got {})", a.alpha)));
    }

    let opts = ShootOptions {
        solve: cfg.solve_options(SolveOptions::default().r_max)?,
        gamma_tol: GAMMA_TOL,
        ..Default::default()
    };
    let (c, sol) = shoot_scalar_for_gamma(a.n1, gamma, &opts).map_err(numeric)?;
    let profile = ScalarProfile::new(sol, a.p).map_err(numeric)?;
    let config = VortexConfig::new(vec![a.p; a.n1 as usize], q.clone());
    let spec = QuadratureSpec::default();
    let base = ApproxSolution::new(&profile, &config, a.eps[0], Vec2::ZERO, &spec).map_err(numeric)?;
    let t = reduction_t(base.gamma(), a.n2, &spec).map_err(numeric)?.value;
    let model = if a.no_reduce {
        None
    } else {
        Some(MomentResidual::new(base.clone(), spec).map_err(numeric)?)
    };

    let solved: Vec<(EpsRecord, ApproxSolution)> = a
        .eps
        .par_iter()
        .map(|&eps| -> Result<_, CliError> {
            let (a_vec, iterations) = match &model {
                Some(m) => {
                    let r = solve_reduced_a(eps, m.t(), m, &ReducedOptions::default()).map_err(numeric)?;
                    (r.a, Some(r.iterations))
                }
                None => (Vec2::ZERO, None),
            };
            let s = base.at(eps, a_vec).map_err(numeric)?;
            let record = EpsRecord {
                eps,
                a: a_vec,
                a_over_eps: a_vec.norm() / eps,
                reduced_iterations: iterations,
                k1_norm: s.k1_norm(a.alpha, &spec).map_err(numeric)?,
                k2_norm: s.k2_norm(a.alpha, &spec).map_err(numeric)?,
                k2_moments: s.k2_kernel_moments(&spec).map_err(numeric)?,
                far_field_betas: s.far_field_exponents(FAR_FIELD_RADIUS),
            };
            Ok((record, s))
        })
        .collect::<Result<_, _>>()?;

    let slope = |f: fn(&EpsRecord) -> f64| {
        let pts: Vec<(f64, f64)> = solved.iter().map(|(r, _)| (r.eps, f(r))).collect();
        richardson_slope(&pts).ok()
    };
    let slopes = Slopes {
        k1: slope(|r| r.k1_norm),
        k2: slope(|r| r.k2_norm),
        predicted: 2.0 - a.alpha / 2.0,
    };
    let residuals = ApproxResiduals {
        recenter: base.recenter_residual(),
        k2_moments: solved
            .iter()
            .map(|(r, _)| r.k2_moments[0].abs().max(r.k2_moments[1].abs()) / r.k2_norm)
            .fold(0.0, f64::max),
        far_field: solved
            .iter()
            .map(|(r, _)| {
                let e1 = (r.far_field_betas[0] - a.beta1).abs() / a.beta1.abs();
                let e2 = (r.far_field_betas[1] - a.beta2).abs() / a.beta2.abs();
                e1.max(e2)
            })
            .fold(0.0, f64::max),
        profile_flux: (profile.flux() - gamma).abs(),
    };
    let mut files = Vec::new();
    if a.dump_fields && cfg.writes_files {
        for (i, (_, s)) in solved.iter().enumerate() {
            files.push((format!("build_approx_fields_{i}.csv"), field_dump(s)?));
        }
    }
    let doc = BuildApproxDoc {
        schema_version: SCHEMA_VERSION,
        command: "build-approx",
        beta1: a.beta1,
        beta2: a.beta2,
        n: [a.n1, a.n2],
        gamma1: gamma,
        kappa: base.kappa(),
        alpha: a.alpha,
        p: a.p,
        q,
        shooting_constant: c,
        shift: base.shift(),
        c_vector: base.cvec(),
        reduction_t: t,
        records: solved.into_iter().map(|(r, _)| r).collect(),
        slopes,
        residuals,
    };
    let mut report = Report::new(&doc, "build_approx")?;
    for (name, buf) in files {
        report = report.with_file(name, buf);
    }
    if snapped_gamma(gamma, a.n2) != gamma {
        report.diagnostic = Some(format!("gamma_1 = {gamma} snapped to {}", snapped_gamma(gamma, a.n2)));
    }
    Ok(report)
}

#[derive(Serialize)]
struct VerifyDoc {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    all_pass: bool,
    identities: Vec<IdentityReport>,
}

pub fn verify_identities(a: &VerifyArgs, cfg: &RunConfig) -> Result<Report, CliError> {
    if let Some(bad) = a.names.iter().find(|n| !IDENTITIES.contains(&n.as_str())) {
        return Err(CliError::Usage(format!(
            "unknown identity `{bad}`; known: {}",
            IDENTITIES.join(", ")
        )));
    }
    let names: Vec<&str> = if a.names.is_empty() {
        IDENTITIES.to_vec()
    } else {
        a.names.iter().map(String::as_str).collect()
    };
    let identities: Vec<IdentityReport> = names
        .par_iter()
        .map(|n| run_identity(n, cfg.seed).map_err(numeric))
        .collect::<Result<_, _>>()?;
    let failed: Vec<&str> = identities.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    let doc = VerifyDoc {
        schema_version: SCHEMA_VERSION,
        command: "verify-identities",
        seed: cfg.seed,
        all_pass: failed.is_empty(),
        identities: identities.clone(),
    };
    let report = Report::new(&doc, "verify_identities")?;
    if failed.is_empty() {
        Ok(report)
    } else {
        let msg = format!("failed: {}", failed.join(", "));
        Ok(report.fail(Status::IdentityFailure, msg))
    }
}
