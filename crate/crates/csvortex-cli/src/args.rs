use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use csvortex::geom::Vec2;
use csvortex::shooting::Normalization;
use std::path::PathBuf;

/// Numerical experiments for radial Chern-Simons vortices and their SU(3)
/// blow-up families.
#[derive(Debug, Parser)]
#[command(name = "csvortex", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Directory for CSV and JSON files; nothing is written without it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `CSVORTEX_THREADS` takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Absolute tolerance of the ODE integrator.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol_abs: f64,
    /// Relative tolerance of the ODE integrator.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol_rel: f64,
    /// Seed for randomized test fields and sample points.
    #[arg(long, global = true, default_value_t = csvortex::verify::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one radial scalar solution, by flux target or shooting constant.
    SolveScalar(SolveScalarArgs),
    /// Integrate one radial SU(3) solution from its shooting constants.
    SolveSu3(SolveSu3Args),
    /// Tabulate flux-plane region membership on a grid.
    ScanRegion(ScanRegionArgs),
    /// Build the leading-order blow-up approximation over an eps ladder.
    BuildApprox(BuildApproxArgs),
    /// Run closed-form identity checks.
    VerifyIdentities(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    F,
    Cs1,
}

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::F => Normalization::F,
            NormalizationArg::Cs1 => Normalization::Cs1,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("start").required(true).args(["gamma", "c"])))]
pub struct SolveScalarArgs {
    /// Vortex multiplicity at the origin.
    #[arg(long)]
    pub n: u32,
    /// Target flux; shoots for it (F normalization only).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Shooting constant, the regular part at the origin.
    #[arg(long, allow_negative_numbers = true)]
    pub c: Option<f64>,
    #[arg(long, value_enum, default_value_t = NormalizationArg::F)]
    pub normalization: NormalizationArg,
    /// Outer radius of the integration.
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
}

#[derive(Debug, Args)]
pub struct SolveSu3Args {
    #[arg(long)]
    pub n1: u32,
    #[arg(long)]
    pub n2: u32,
    #[arg(long, allow_negative_numbers = true)]
    pub c1: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub c2: f64,
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
}

#[derive(Debug, Args)]
pub struct ScanRegionArgs {
    #[arg(long)]
    pub n1: u32,
    #[arg(long)]
    pub n2: u32,
    /// Range of beta_1 as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "0,12", allow_hyphen_values = true)]
    pub beta1: (f64, f64),
    /// Range of beta_2 as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "0,12", allow_hyphen_values = true)]
    pub beta2: (f64, f64),
    /// Grid points along each axis as `n1,n2`.
    #[arg(long, value_parser = parse_shape, default_value = "100,100")]
    pub shape: (usize, usize),
    /// Half-width of the boundary-line bands; defaults to the larger grid step.
    #[arg(long)]
    pub band: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildApproxArgs {
    #[arg(long)]
    pub beta1: f64,
    #[arg(long)]
    pub beta2: f64,
    #[arg(long)]
    pub n1: u32,
    #[arg(long)]
    pub n2: u32,
    /// Strictly decreasing eps values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1e-2,5e-3,2.5e-3")]
    pub eps: Vec<f64>,
    /// Weight exponent of the Y norm.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Position of the first-component vortices as `x,y`.
    #[arg(long, value_parser = parse_point, default_value = "1,0", allow_hyphen_values = true)]
    pub p: Vec2,
    /// Second-component vortex positions `x,y`, one flag per vortex;
    /// defaults to all at the origin.
    #[arg(long = "q", value_parser = parse_point, allow_hyphen_values = true)]
    pub q: Vec<Vec2>,
    /// Skip the reduced solve for `a` and use `a = 0`.
    #[arg(long)]
    pub no_reduce: bool,
    /// Also write `(r, theta, U1, U2, k1, k2)` samples per eps (needs --out-dir).
    #[arg(long)]
    pub dump_fields: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Identity names; all of them when empty.
    pub names: Vec<String>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(format!("`{s}` is not finite"));
    }
    Ok((a, b))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = parse_pair(s)?;
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(format!("range `{s}` must have lo < hi"))
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `n1,n2`, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    if a < 2 || b < 2 {
        return Err("each axis needs at least 2 points".into());
    }
    Ok((a, b))
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    parse_pair(s).map(|(x, y)| Vec2::new(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsers() {
        assert_eq!(parse_range("-1,2.5"), Ok((-1.0, 2.5)));
        assert!(parse_range("2,1").is_err());
        assert!(parse_range("1").is_err());
        assert_eq!(parse_shape("3,4"), Ok((3, 4)));
        assert!(parse_shape("1,4").is_err());
        assert_eq!(parse_point("0.5,-1"), Ok(Vec2::new(0.5, -1.0)));
        assert!(parse_point("nan,1").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
