//! Command-line front end.
//!
//! Every parameter can come from a flag or from a JSON config file
//! (`--config`); flags win over the file, the file wins over the defaults.
//! Each run prints one JSON summary line on stdout and exits with
//! 0 (success), 1 (invalid config), 2 (numerical failure) or 3 (broken
//! invariant).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::energy::{self, DEFAULT_QUAD_TOL};
use crate::error::{Error, Result};
use crate::exponents::{self, DEFAULT_GAP_GRID, DEFAULT_P_TOL};
use crate::integrator::{integrate_exterior_spec, ExteriorKind, IntegrationOptions, StopRule, DEFAULT_R_MAX};
use crate::model::{Branch, OperatorSpec};
use crate::nodal::{self, DEFAULT_EPSILONS};
use crate::repro;
use crate::shooting::{self, SlopeSearch, DEFAULT_SLOPE_TOL};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "PUCCI_RADIAL_OUT_DIR";

/// Horizon for runs that must reach several zeros close to a critical exponent.
const NODAL_R_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchArg {
    Minus,
    Plus,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Minus => Branch::Minus,
            BranchArg::Plus => Branch::Plus,
        }
    }
}

/// Parameters shared by all subcommands. Unused ones are ignored.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// JSON file with any of these parameters (flags take precedence).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Lower ellipticity constant.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Upper ellipticity constant.
    #[arg(long = "Lambda", global = true)]
    #[serde(rename = "Lambda")]
    pub upper: Option<f64>,
    /// Space dimension.
    #[arg(long = "N", global = true)]
    #[serde(rename = "N")]
    pub dim: Option<u32>,
    #[arg(long, global = true, value_enum)]
    pub branch: Option<BranchArg>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Number of nodal regions.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Slope at r = 1 of an exterior problem.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Operator of the exterior problem (defaults to the branch).
    #[arg(long, global = true, value_enum)]
    pub kind: Option<BranchArg>,
    /// Center value of a shoot from the origin.
    #[arg(long, global = true)]
    pub u0: Option<f64>,
    /// Strictly decreasing distances to the critical exponent.
    #[arg(long, global = true, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Critical exponent of a sweep (computed when absent).
    #[arg(long, global = true)]
    pub p_crit: Option<f64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub quad_tol: Option<f64>,
    #[arg(long, global = true)]
    pub p_tol: Option<f64>,
    #[arg(long, global = true)]
    pub slope_tol: Option<f64>,
    #[arg(long, global = true)]
    pub r_max: Option<f64>,
    /// Index of the nodal region, counted from the center.
    #[arg(long, global = true)]
    pub region: Option<usize>,
    /// Grid size of the nodal gap scan.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Output directory (default: $PUCCI_RADIAL_OUT_DIR, then the current directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// File stem of the outputs.
    #[arg(long, global = true)]
    pub name: Option<String>,
    /// Worker threads for sweeps (default: number of processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        Params { config: $hi.config.clone(), $($f: $hi.$f.clone().or($lo.$f.clone()),)* }
    };
}

impl Params {
    /// `self` over `other`, field by field.
    pub fn over(&self, other: &Params) -> Params {
        overlay!(self, other; lambda, upper, dim, branch, p, k, alpha, kind, u0, epsilons, p_crit, tol, quad_tol,
            p_tol, slope_tol, r_max, region, grid, out_dir, name, jobs)
    }

    fn load(path: &Path) -> Result<Params> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    fn spec(&self) -> Result<OperatorSpec> {
        OperatorSpec::new(self.lambda.unwrap_or(1.0), self.upper.unwrap_or(1.5), self.dim.unwrap_or(4), self.branch.map(Branch::from).unwrap_or(Branch::Minus))
    }

    fn require<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::InvalidArgument(format!("--{name} is required")))
    }

    fn p(&self) -> Result<f64> {
        Self::require(self.p, "p")
    }

    fn k(&self) -> Result<usize> {
        Self::require(self.k, "k")
    }

    fn opts(&self, r_max: f64, stop: StopRule) -> IntegrationOptions {
        IntegrationOptions::new(self.tol.unwrap_or(1e-10), self.r_max.unwrap_or(r_max), stop)
    }

    fn quad_tol(&self) -> f64 {
        self.quad_tol.unwrap_or(DEFAULT_QUAD_TOL)
    }

    fn exterior_kind(&self, spec: &OperatorSpec) -> ExteriorKind {
        match self.kind.map(Branch::from).unwrap_or(spec.branch) {
            Branch::Minus => ExteriorKind::MinusIvp,
            Branch::Plus => ExteriorKind::PlusIvp,
        }
    }

    fn epsilons(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| DEFAULT_EPSILONS.to_vec())
    }

    fn validate(&self) -> Result<()> {
        let positive = [("tol", self.tol), ("quad-tol", self.quad_tol), ("p-tol", self.p_tol), ("slope-tol", self.slope_tol), ("r-max", self.r_max)];
        for (name, v) in positive {
            if let Some(x) = v {
                if !(x > 0.0) {
                    return Err(Error::InvalidArgument(format!("--{name} must be positive, got {x}")));
                }
            }
        }
        if let Some(e) = &self.epsilons {
            if e.is_empty() || e.iter().any(|&x| !(x > 0.0)) || e.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::InvalidArgument("--epsilons must be positive and strictly decreasing".into()));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        self.spec().map(|_| ())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pucci-radial", version, about = "Radial shooting solver for Pucci extremal operators")]
pub struct Cli {
    #[command(flatten)]
    pub params: Params,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum ExponentWhich {
    /// Critical exponent for positive solutions of the minus operator.
    Minus,
    /// Critical exponent for positive solutions of the plus operator.
    Plus,
    /// Nodal critical exponent of the plus operator.
    Nodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum SweepWhich {
    /// k-region solutions approaching the critical exponent.
    Concentration,
    /// Positive solutions approaching the critical exponent.
    Positive,
    /// Total energies next to their predicted limit.
    EnergyLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum EnergyWhich {
    /// Energy of one nodal region.
    Region,
    /// Total energy of a nodal solution.
    Total,
    /// Energy of the entire-space fast-decaying solution.
    SigmaStar,
    /// Exterior energy at the critical slope.
    SigmaStarStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Positive solution in the unit ball.
    SolvePositive,
    /// Exterior problem u(1) = 0, u'(1) = alpha.
    ShootExterior,
    /// Critical slope of the exterior problem.
    CriticalSlope,
    /// Critical exponent estimate with certificates.
    CriticalExponent {
        #[command(subcommand)]
        which: ExponentWhich,
    },
    /// Sign-changing solution with k nodal regions.
    BuildNodal,
    /// Parameter sweeps written as CSV tables.
    Sweep {
        #[command(subcommand)]
        which: SweepWhich,
    },
    /// Weighted energies.
    Energy {
        #[command(subcommand)]
        which: EnergyWhich,
    },
    /// Emden-Fowler trajectory of a shoot.
    PhasePortrait,
    /// Runs the acceptance matrix and writes a pass/fail report.
    Repro,
}

impl Command {
    pub fn label(&self) -> String {
        match self {
            Command::SolvePositive => "solve-positive".into(),
            Command::ShootExterior => "shoot-exterior".into(),
            Command::CriticalSlope => "critical-slope".into(),
            Command::CriticalExponent { which } => format!("critical-exponent {}", format!("{which:?}").to_lowercase()),
            Command::BuildNodal => "build-nodal".into(),
            Command::Sweep { which } => format!("sweep {}", kebab(&format!("{which:?}"))),
            Command::Energy { which } => format!("energy {}", kebab(&format!("{which:?}"))),
            Command::PhasePortrait => "phase-portrait".into(),
            Command::Repro => "repro".into(),
        }
    }
}

fn kebab(s: &str) -> String {
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push('-');
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// Name of an error variant, for the summary line.
pub fn error_kind(e: &Error) -> String {
    match e {
        Error::Region { source, .. } => error_kind(source),
        _ => {
            let d = format!("{e:?}");
            d.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
        }
    }
}

struct Outputs {
    dir: PathBuf,
    stem: String,
    written: Vec<String>,
}

impl Outputs {
    fn new(params: &Params, default_stem: &str) -> Result<Self> {
        let dir = params
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Outputs {
            dir,
            stem: params.name.clone().unwrap_or_else(|| default_stem.to_string()),
            written: Vec::new(),
        })
    }

    fn write(&mut self, suffix: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("{}{suffix}", self.stem));
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn json(&mut self, suffix: &str, v: &Value) -> Result<()> {
        self.write(suffix, |w| {
            serde_json::to_writer_pretty(&mut *w, v)?;
            writeln!(w)
        })
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))
}

/// Critical exponent driving a sweep or an energy limit: `p*` of the branch
/// for positive solutions and the minus nodal case, `p**+` for plus nodal.
fn critical_for(params: &Params, spec: &OperatorSpec, nodal_plus: bool) -> Result<f64> {
    if let Some(p) = params.p_crit {
        return Ok(p);
    }
    let o = params.opts(DEFAULT_R_MAX, StopRule::Zeros(1));
    let tol = params.p_tol.unwrap_or(1e-6).min(1e-6);
    if nodal_plus && spec.branch == Branch::Plus {
        let pm = exponents::critical_exponent_ball(&spec.with_branch(Branch::Minus), tol / 10.0, o)?.value;
        let pp = exponents::critical_exponent_ball(&spec.with_branch(Branch::Plus), tol / 10.0, o)?.value;
        Ok(exponents::critical_exponent_nodal(spec, pm, pp, tol, params.grid.unwrap_or(DEFAULT_GAP_GRID), o)?.value)
    } else {
        Ok(exponents::critical_exponent_ball(spec, tol / 10.0, o)?.value)
    }
}

fn merge(summary: &mut Value, extra: Value) {
    if let (Value::Object(m), Value::Object(e)) = (summary, extra) {
        m.extend(e);
    }
}

fn dispatch(cmd: Command, params: &Params) -> Result<Value> {
    let spec = params.spec()?;
    let single = pool(1)?;
    let jobs = pool(params.jobs.unwrap_or_else(num_cpus))?;
    match cmd {
        Command::SolvePositive => {
            let ball = single.install(|| shooting::positive_ball_solution(&spec, params.p()?, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1))))?;
            let mut out = Outputs::new(params, "positive")?;
            out.write(".csv", |w| ball.profile.write_csv(w))?;
            out.json(".json", &ball.profile.sidecar())?;
            Ok(json!({"rho": ball.rho, "sup_norm": ball.sup_norm, "boundary_slope": ball.boundary_slope, "inflection": ball.inflection, "outputs": out.written}))
        }
        Command::ShootExterior => {
            let alpha = Params::require(params.alpha, "alpha")?;
            let kind = params.exterior_kind(&spec);
            let outcome = single.install(|| shooting::rho_alpha(kind, &spec, params.p()?, alpha, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1))))?;
            let mut out = Outputs::new(params, "exterior")?;
            out.write(".csv", |w| outcome.profile.write_csv(w))?;
            out.json(".json", &outcome.to_json())?;
            Ok(json!({"kind": kind, "outcome": outcome.kind, "tau": outcome.tau, "sigma": outcome.sigma, "outputs": out.written}))
        }
        Command::CriticalSlope => {
            let kind = params.exterior_kind(&spec);
            let search = SlopeSearch {
                slope_tol: params.slope_tol.unwrap_or(DEFAULT_SLOPE_TOL),
                ..SlopeSearch::default()
            };
            let cs = single.install(|| shooting::critical_slope(kind, &spec, params.p()?, search, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1))))?;
            let mut out = Outputs::new(params, "critical_slope")?;
            let report = serde_json::to_value(cs)?;
            out.json(".json", &report)?;
            Ok(json!({"kind": kind, "p": cs.p, "alpha_star": cs.alpha_star, "bracket": [cs.bracket.0, cs.bracket.1], "outputs": out.written}))
        }
        Command::CriticalExponent { which } => {
            let o = params.opts(DEFAULT_R_MAX, StopRule::Zeros(1));
            let p_tol = params.p_tol.unwrap_or(DEFAULT_P_TOL);
            let est = single.install(|| match which {
                ExponentWhich::Minus => exponents::critical_exponent_ball(&spec.with_branch(Branch::Minus), p_tol, o),
                ExponentWhich::Plus => exponents::critical_exponent_ball(&spec.with_branch(Branch::Plus), p_tol, o),
                ExponentWhich::Nodal => {
                    let fine = (p_tol / 10.0).min(1e-6);
                    let pm = exponents::critical_exponent_ball(&spec.with_branch(Branch::Minus), fine, o)?.value;
                    let pp = exponents::critical_exponent_ball(&spec.with_branch(Branch::Plus), fine, o)?.value;
                    exponents::critical_exponent_nodal(&spec, pm, pp, p_tol, params.grid.unwrap_or(DEFAULT_GAP_GRID), o)
                }
            })?;
            let report = exponents::estimate_report(&est);
            let stem = format!("critical_exponent_{}", format!("{which:?}").to_lowercase());
            let mut out = Outputs::new(params, &stem)?;
            out.json(".json", &report)?;
            Ok(json!({"value": est.value, "bracket": [est.bracket.0, est.bracket.1], "p_tol": p_tol, "bounds_pass": report["bounds_pass"], "outputs": out.written}))
        }
        Command::BuildNodal => {
            let sol = single.install(|| nodal::build_nodal(&spec, params.p()?, params.k()?, params.opts(NODAL_R_MAX, StopRule::RMax)))?;
            let mut out = Outputs::new(params, "nodal")?;
            out.write(".csv", |w| sol.profile.write_csv(w))?;
            out.json(".json", &json!({"decomposition": sol.decomposition, "rho": sol.rho, "boundary_slope": sol.boundary_slope, "profile": sol.profile.sidecar()}))?;
            Ok(json!({"rho": sol.rho, "boundary_slope": sol.boundary_slope, "extremum_values": sol.decomposition.extremum_values, "nodal_radii": sol.decomposition.nodal_radii, "outputs": out.written}))
        }
        Command::Sweep { which } => {
            let eps = params.epsilons();
            let o = params.opts(NODAL_R_MAX, StopRule::RMax);
            match which {
                SweepWhich::Concentration => {
                    let k = params.k()?;
                    let pc = critical_for(params, &spec, k >= 2)?;
                    let entries = jobs.install(|| nodal::concentration_sweep(&spec, k, &eps, pc, o))?;
                    let mut out = Outputs::new(params, &format!("sweep_concentration_{}_k{k}", spec.branch))?;
                    out.write(".csv", |w| nodal::write_sweep_csv(&entries, k, spec.branch, w))?;
                    let failed = entries.iter().filter(|e| e.result.is_err()).count();
                    Ok(json!({"p_crit": pc, "entries": entries.len(), "failed": failed, "outputs": out.written}))
                }
                SweepWhich::Positive => {
                    let pc = critical_for(params, &spec, false)?;
                    let entries = jobs.install(|| nodal::positive_solution_sweep(&spec, &eps, pc, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1))))?;
                    let mut out = Outputs::new(params, &format!("sweep_positive_{}", spec.branch))?;
                    out.write(".csv", |w| nodal::write_positive_csv(&entries, w))?;
                    let failed = entries.iter().filter(|e| e.result.is_err()).count();
                    Ok(json!({"p_crit": pc, "entries": entries.len(), "failed": failed, "outputs": out.written}))
                }
                SweepWhich::EnergyLimit => {
                    let k = params.k()?;
                    let pc = critical_for(params, &spec, true)?;
                    let table = jobs.install(|| energy::energy_limit_experiment(&spec, k, &eps, pc, o, params.quad_tol()))?;
                    let mut out = Outputs::new(params, &format!("sweep_energy_limit_{}_k{k}", spec.branch))?;
                    out.write(".csv", |w| energy::write_energy_limit_csv(&table, w))?;
                    out.json(".json", &serde_json::to_value(&table.prediction)?)?;
                    let gaps: Vec<Option<f64>> = table.rows.iter().map(|r| r.result.as_ref().ok().map(|x| x.gap_relative)).collect();
                    Ok(json!({"p_crit": pc, "predicted_limit": table.prediction.value, "gap_relative": gaps, "outputs": out.written}))
                }
            }
        }
        Command::Energy { which } => {
            let q = params.quad_tol();
            let (stem, report) = single.install(|| -> Result<(&str, Value)> {
                match which {
                    EnergyWhich::Region => {
                        let sol = nodal::build_nodal(&spec, params.p()?, params.k()?, params.opts(NODAL_R_MAX, StopRule::RMax))?;
                        let i = params.region.unwrap_or(0);
                        if i >= sol.decomposition.k {
                            return Err(Error::InvalidArgument(format!("--region {i} out of range for k = {}", sol.decomposition.k)));
                        }
                        let (a, b) = sol.decomposition.region(i);
                        Ok(("energy_region", serde_json::to_value(energy::region_energy(&sol.profile, a, b, q)?)?))
                    }
                    EnergyWhich::Total => {
                        let sol = nodal::build_nodal(&spec, params.p()?, params.k()?, params.opts(NODAL_R_MAX, StopRule::RMax))?;
                        Ok(("energy_total", serde_json::to_value(energy::total_energy(&sol, q)?)?))
                    }
                    EnergyWhich::SigmaStar => {
                        let p = match params.p {
                            Some(p) => p,
                            None => critical_for(params, &spec, false)?,
                        };
                        let s = energy::entire_space_energy(&spec, p, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1)), q)?;
                        Ok(("sigma_star", serde_json::to_value(s)?))
                    }
                    EnergyWhich::SigmaStarStar => {
                        let plus = spec.with_branch(Branch::Plus);
                        let p = match params.p {
                            Some(p) => p,
                            None => critical_for(params, &plus, true)?,
                        };
                        let slope_tol = params.slope_tol.unwrap_or(1e-10);
                        let (s, alpha) = energy::exterior_energy_at_critical_slope(&spec, p, slope_tol, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1)), q)?;
                        let mut v = serde_json::to_value(s)?;
                        merge(&mut v, json!({"alpha_star": alpha}));
                        Ok(("sigma_star_star", v))
                    }
                }
            })?;
            let mut out = Outputs::new(params, stem)?;
            out.json(".json", &report)?;
            let value = report.get("value").or_else(|| report.get("total")).cloned();
            Ok(json!({"value": value, "error_estimate": report["error_estimate"], "outputs": out.written}))
        }
        Command::PhasePortrait => {
            let p = params.p()?;
            let profile = single.install(|| match params.alpha {
                Some(alpha) => {
                    let kind = params.exterior_kind(&spec);
                    integrate_exterior_spec(&spec.with_branch(kind.branch()), p, alpha, params.opts(DEFAULT_R_MAX, StopRule::Zeros(1)))
                }
                None => crate::integrate_from_center(&spec, p, params.u0.unwrap_or(1.0), params.opts(DEFAULT_R_MAX, StopRule::Zeros(1))),
            })?;
            let points = shooting::emden_fowler_trajectory(&profile, p);
            let mut out = Outputs::new(params, "phase")?;
            out.write(".csv", |w| shooting::write_phase_csv(&points, w))?;
            Ok(json!({"points": points.len(), "r_end": profile.r_end(), "truncated": profile.truncated, "outputs": out.written}))
        }
        Command::Repro => {
            let results = jobs.install(repro::run_all);
            let mut out = Outputs::new(params, "repro_report")?;
            let report = serde_json::to_value(&results)?;
            out.json(".json", &report)?;
            let mut err = std::io::stderr().lock();
            for r in &results {
                writeln!(err, "acceptance {:>2} {} {}: {}", r.number, if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail)?;
            }
            let failed: Vec<u32> = results.iter().filter(|r| !r.pass).map(|r| r.number).collect();
            Ok(json!({"passed": results.len() - failed.len(), "failed": failed, "outputs": out.written}))
        }
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Merges the config file under the flags, validates, and runs. Returns the
/// summary line and the exit code.
pub fn run(cli: Cli) -> (Value, i32) {
    let label = cli.command.label();
    let result = (|| -> Result<Value> {
        let params = match &cli.params.config {
            Some(path) => cli.params.over(&Params::load(path)?),
            None => cli.params.clone(),
        };
        params.validate()?;
        let mut summary = json!({"command": label, "status": "ok"});
        merge(&mut summary, dispatch(cli.command, &params)?);
        Ok(summary)
    })();
    match result {
        Ok(mut v) => {
            if cli.command == Command::Repro && !v["failed"].as_array().is_some_and(|f| f.is_empty()) {
                v["status"] = json!("failed");
                return (v, 2);
            }
            (v, 0)
        }
        Err(e) => {
            let code = e.exit_code();
            (json!({"command": label, "status": "error", "error": error_kind(&e), "message": e.to_string(), "exit_code": code}), code)
        }
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (summary, code) = run(cli);
    println!("{summary}");
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pucci-radial").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let file: Params = serde_json::from_str(r#"{"lambda": 2.0, "Lambda": 3.0, "N": 5, "p": 1.5, "epsilons": [0.1, 0.05]}"#).unwrap();
        let cli = parse(&["--lambda", "1", "solve-positive"]);
        let merged = cli.params.over(&file);
        assert_eq!(merged.lambda, Some(1.0));
        assert_eq!(merged.upper, Some(3.0));
        assert_eq!(merged.dim, Some(5));
        assert_eq!(merged.epsilons, Some(vec![0.1, 0.05]));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<Params>(r#"{"lamda": 1.0}"#).is_err());
    }

    #[test]
    fn subcommand_labels() {
        assert_eq!(parse(&["sweep", "energy-limit"]).command.label(), "sweep energy-limit");
        assert_eq!(parse(&["energy", "sigma-star-star"]).command.label(), "energy sigma-star-star");
        assert_eq!(parse(&["critical-exponent", "nodal"]).command.label(), "critical-exponent nodal");
    }

    #[test]
    fn invalid_config_exits_with_one() {
        let (v, code) = run(parse(&["--epsilons", "0.1,0.2", "sweep", "positive"]));
        assert_eq!(code, 1);
        assert_eq!(v["status"], "error");
        let (_, code) = run(parse(&["--lambda", "2", "--Lambda", "1", "solve-positive", "--p", "2"]));
        assert_eq!(code, 1);
    }

    #[test]
    fn laplacian_exponent_summary() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (v, code) = run(parse(&["critical-exponent", "minus", "--lambda", "1", "--Lambda", "1", "--N", "4", "--out-dir", d]));
        assert_eq!(code, 0, "{v}");
        assert!((v["value"].as_f64().unwrap() - 3.0).abs() < 1e-3);
        assert!(dir.path().join("critical_exponent_minus.json").exists());
    }

    #[test]
    fn nodal_above_threshold_fails_with_zero_count() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (v, code) = run(parse(&["build-nodal", "--branch", "plus", "--p", "3.5", "--k", "2", "--out-dir", d]));
        assert_eq!(code, 2, "{v}");
        assert_eq!(v["error"], "ZeroCountNotReached");
    }

    #[test]
    fn profile_csv_has_comment_header() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (v, code) = run(parse(&["solve-positive", "--p", "2", "--out-dir", d, "--name", "ball"]));
        assert_eq!(code, 0, "{v}");
        let text = std::fs::read_to_string(dir.path().join("ball.csv")).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# r = radius"));
        assert_eq!(lines.next(), Some("r,u,du"));
    }

    #[test]
    fn outputs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        for name in ["a", "b"] {
            let (_, code) = run(parse(&["--jobs", "2", "sweep", "concentration", "--k", "2", "--p-crit", "2.148", "--epsilons", "0.2,0.1", "--out-dir", d, "--name", name]));
            assert_eq!(code, 0);
        }
        let a = std::fs::read(dir.path().join("a.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(a, b);
    }
}
