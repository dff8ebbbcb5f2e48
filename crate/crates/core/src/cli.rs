//! Command-line front end. Every command writes plot-ready CSV or JSON to
//! stdout or `--output`, and exits with 0 on success, 2 on invalid input and
//! 3 on numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, Measured, PropagationMode, ScanData, ScanPlane};
use crate::distributions::{DensitySamples, DistributionError};
use crate::optics::{self, DetectionGeometry, OpticsError};
use crate::schmidt::SchmidtError;
use crate::specfun::{QuadratureError, QuadratureSpec};
use crate::states::{BiphotonState, GaussianBiphoton, SpdcBiphoton, StateError};
use crate::witness::{self, Family, WitnessError};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
/// Environment variable capping the worker threads of parallel commands.
pub const THREADS_ENV: &str = "BIPHOTON_THREADS";
/// Default points on distribution and displacement grids.
pub const DEFAULT_GRID_POINTS: usize = 2049;

/// Pump waists (m) of the six experimental states.
pub const EXPERIMENT_PUMP_WAISTS: [f64; 6] = [200e-6, 100e-6, 70e-6, 45e-6, 40e-6, 35e-6];
pub const EXPERIMENT_CRYSTAL_LENGTH: f64 = 1.8e-2;
pub const EXPERIMENT_WAVELENGTH: f64 = 710e-9;
/// Measured conditional variances for the six states:
/// (Δ²x₂ m², σ m², Δ²q₂ m⁻², σ m⁻²).
pub const EXPERIMENT_VARIANCES: [(f64, f64, f64, f64); 6] = [
    (6.62e-10, 0.26e-10, 3.55e7, 0.14e7),
    (9.17e-10, 0.37e-10, 1.25e8, 0.05e8),
    (7.76e-10, 0.31e-10, 2.60e8, 0.1e8),
    (7.75e-10, 0.31e-10, 4.67e8, 0.19e8),
    (7.23e-10, 0.29e-10, 5.28e8, 0.21e8),
    (8.16e-10, 0.33e-10, 5.18e8, 0.21e8),
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<QuadratureError> for CliError {
    fn from(e: QuadratureError) -> Self {
        match e {
            QuadratureError::InvalidSpec(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DistributionError> for CliError {
    fn from(e: DistributionError) -> Self {
        match e {
            DistributionError::InvalidGrid { .. } | DistributionError::State(_) => CliError::Input(e.to_string()),
            DistributionError::Quadrature(q) => q.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<OpticsError> for CliError {
    fn from(e: OpticsError) -> Self {
        match e {
            OpticsError::Distribution(d) => d.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SchmidtError> for CliError {
    fn from(e: SchmidtError) -> Self {
        match e {
            SchmidtError::InvalidP(_) | SchmidtError::InvalidGrid { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<WitnessError> for CliError {
    fn from(e: WitnessError) -> Self {
        match e {
            WitnessError::Distribution(d) => d.into(),
            WitnessError::Schmidt(s) => s.into(),
            WitnessError::State(s) => s.into(),
            WitnessError::InvalidSweep { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Distribution(d) => d.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "biphoton", version, about = "EPR-steering witness for biphoton states")]
pub struct Cli {
    /// Plain-text `key = value` file mirroring the flags; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Conditional variances and W for one state.
    Witness {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        quadrature: QuadratureArgs,
    },
    /// Schmidt numbers and W over a geometric P grid.
    Sweep {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, default_value_t = 0.1)]
        p_min: f64,
        #[arg(long, default_value_t = 10.0)]
        p_max: f64,
        #[arg(long, default_value_t = 41)]
        steps: usize,
    },
    /// P range on which W exceeds the Gaussian bound.
    Interval {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, value_enum, default_value_t = FamilyKind::Spdc)]
        family: FamilyKind,
    },
    /// Far- or near-field conditional coincidence density.
    Distribution {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long, value_enum, default_value_t = PlaneArg::Near)]
        plane: PlaneArg,
        /// Position of the conditioning detector (m).
        #[arg(long, default_value_t = 0.0)]
        fixed: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        points: usize,
        /// Convolve with the slit (far field) or fibre core (near field).
        #[arg(long)]
        aperture: bool,
    },
    /// Near-field density with the crystal displaced along the axis.
    Displace {
        #[command(flatten)]
        state: StateArgs,
        /// Displacements (m), comma separated.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        z: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        fixed: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        points: usize,
    },
    /// Seeded Poisson coincidence scan in the scan-file format.
    Simulate {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long, value_enum, default_value_t = PlaneArg::Far)]
        plane: PlaneArg,
        #[arg(long, default_value_t = analysis::TYPICAL_SCAN_POSITIONS)]
        points: usize,
        #[arg(long, default_value_t = analysis::TYPICAL_PEAK_COUNTS)]
        peak_counts: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a scan file and report the conditional variance.
    Fit {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        scan: PathBuf,
    },
    /// Experimental states with measured and computed W.
    ReproduceTable2 {
        #[arg(long, value_enum, default_value_t = ModeArg::LinearSum)]
        propagation: ModeArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Spdc,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaneArg {
    Near,
    Far,
}

impl From<PlaneArg> for ScanPlane {
    fn from(p: PlaneArg) -> Self {
        match p {
            PlaneArg::Near => ScanPlane::NearField,
            PlaneArg::Far => ScanPlane::FarField,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    LinearSum,
    Quadrature,
}

#[derive(Debug, Clone, Args)]
pub struct StateArgs {
    /// Pump waist c (m).
    #[arg(long = "c")]
    pub pump_waist: Option<f64>,
    /// Dimensionless P, instead of the pump waist.
    #[arg(long = "p")]
    pub p: Option<f64>,
    /// Crystal length L (m).
    #[arg(long = "L", default_value_t = EXPERIMENT_CRYSTAL_LENGTH)]
    pub crystal_length: f64,
    /// Vacuum wavelength of the down-converted photons (m).
    #[arg(long = "lambda", default_value_t = EXPERIMENT_WAVELENGTH)]
    pub wavelength: f64,
    /// Use a Gaussian state with σ₊ = P·σ₋ instead of SPDC.
    #[arg(long)]
    pub gaussian: bool,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_minus: f64,
}

impl StateArgs {
    pub fn state(&self) -> Result<BiphotonState, CliError> {
        if self.gaussian {
            if self.pump_waist.is_some() {
                return Err(CliError::Input("--c does not apply to --gaussian".into()));
            }
            let p = self.p.ok_or_else(|| CliError::Input("--gaussian needs --p".into()))?;
            return Ok(GaussianBiphoton::from_p(p, self.sigma_minus)?.into());
        }
        Ok(self.spdc()?.into())
    }

    pub fn spdc(&self) -> Result<SpdcBiphoton, CliError> {
        if self.gaussian {
            return Err(CliError::Input("this command needs an SPDC state".into()));
        }
        Ok(match (self.pump_waist, self.p) {
            (Some(c), None) => SpdcBiphoton::from_experiment(c, self.crystal_length, self.wavelength)?,
            (None, Some(p)) => SpdcBiphoton::with_p(p, self.crystal_length, self.wavelength)?,
            _ => return Err(CliError::Input("give exactly one of --c and --p".into())),
        })
    }

    fn spdc_family(&self) -> Result<Family, CliError> {
        for (name, v) in [("L", self.crystal_length), ("lambda", self.wavelength)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Input(format!("--{name} must be positive, got {v}")));
            }
        }
        Ok(Family::Spdc {
            crystal_length: self.crystal_length,
            wavelength: self.wavelength,
        })
    }

    fn gaussian_family(&self) -> Result<Family, CliError> {
        if !(self.sigma_minus > 0.0 && self.sigma_minus.is_finite()) {
            return Err(CliError::Input(format!("--sigma-minus must be positive, got {}", self.sigma_minus)));
        }
        Ok(Family::Gaussian {
            sigma_minus: self.sigma_minus,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    /// Lens focal length (m).
    #[arg(long, default_value_t = optics::DEFAULT_FOCAL_LENGTH)]
    pub focal: f64,
    /// Far-field slit width (m).
    #[arg(long, default_value_t = optics::DEFAULT_SLIT_WIDTH)]
    pub slit: f64,
    /// Near-field fibre core diameter (m).
    #[arg(long, default_value_t = optics::DEFAULT_FIBER_CORE)]
    pub fiber: f64,
}

impl GeometryArgs {
    fn geometry(&self) -> Result<DetectionGeometry, CliError> {
        Ok(DetectionGeometry::new(self.focal, self.slit, self.fiber)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct QuadratureArgs {
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub max_subdivisions: Option<usize>,
}

impl QuadratureArgs {
    fn spec(&self) -> Result<QuadratureSpec, CliError> {
        let d = QuadratureSpec::default();
        let spec = QuadratureSpec {
            relative_tolerance: self.rel_tol.unwrap_or(d.relative_tolerance),
            absolute_tolerance: self.abs_tol.unwrap_or(d.absolute_tolerance),
            max_subdivisions: self.max_subdivisions.unwrap_or(d.max_subdivisions),
            ..d
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Cli {
    /// The clap command with negative numbers accepted as values and
    /// repeated flags resolved in favor of the last occurrence.
    pub fn clap_command() -> clap::Command {
        Cli::command()
            .args_override_self(true)
            .mut_subcommands(|sub| sub.allow_negative_numbers(true).args_override_self(true))
    }

    pub fn parse_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let matches = Self::clap_command().try_get_matches_from(args)?;
        Self::from_arg_matches(&matches)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::parse_args(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Splices `key = value` lines from `--config` into the argument list right
/// after the subcommand, so that explicit flags, which come later, win.
/// Keys the subcommand does not know are ignored.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strings: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config = None;
    for (i, a) in strings.iter().enumerate() {
        if a == "--config" {
            config = strings.get(i + 1).cloned();
        } else if let Some(path) = a.strip_prefix("--config=") {
            config = Some(path.to_string());
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("config {path}: {e}")))?;
    let command = Cli::clap_command();
    let Some((position, sub)) = strings
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| command.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(args);
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config {path}:{}: expected `key = value`", lineno + 1)))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        let known = |arg: &clap::Arg| arg.get_long() == Some(key.as_str());
        let Some(arg) = sub.get_arguments().find(|a| known(a)) else {
            continue;
        };
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}").into());
            extra.push(value.into());
        } else {
            match value {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(CliError::Input(format!(
                        "config {path}:{}: `{key}` expects true or false, got {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
    }
    let mut merged = args;
    merged.splice(position + 1..position + 1, extra);
    Ok(merged)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool that already exists (e.g. a second call in one process) is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let text = match &cli.command {
        Command::Witness { state, quadrature } => cmd_witness(state, quadrature, cli.format)?,
        Command::Sweep {
            state,
            p_min,
            p_max,
            steps,
        } => cmd_sweep(state, *p_min, *p_max, *steps, cli.format)?,
        Command::Interval { state, family } => cmd_interval(state, *family, cli.format)?,
        Command::Distribution {
            state,
            geometry,
            plane,
            fixed,
            points,
            aperture,
        } => {
            only_csv(cli.format)?;
            let samples = distribution(&state.spdc()?, &geometry.geometry()?, *plane, *fixed, *points, *aperture)?;
            density_csv(&samples)
        }
        Command::Displace { state, z, fixed, points } => {
            only_csv(cli.format)?;
            cmd_displace(&state.spdc()?, z, *fixed, *points)?
        }
        Command::Simulate {
            state,
            geometry,
            plane,
            points,
            peak_counts,
            seed,
        } => {
            only_csv(cli.format)?;
            analysis::simulate_scan(&state.spdc()?, (*plane).into(), &geometry.geometry()?, *points, *peak_counts, *seed)?
                .to_csv_string()
        }
        Command::Fit { state, scan } => {
            if cli.format == Some(Format::Csv) {
                return Err(CliError::Input("fit writes JSON only".into()));
            }
            let data = ScanData::load(scan).map_err(|e| CliError::Input(format!("{}: {e}", scan.display())))?;
            to_json(&analysis::fit_scan(&data, &state.spdc()?)?)
        }
        Command::ReproduceTable2 { propagation } => cmd_table2(*propagation, cli.format)?,
    };
    emit(cli.output.as_deref(), &text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                // a closed reader (e.g. `| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Input(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn only_csv(format: Option<Format>) -> Result<(), CliError> {
    match format {
        Some(Format::Json) => Err(CliError::Input("this command writes CSV only".into())),
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_witness(state: &StateArgs, quadrature: &QuadratureArgs, format: Option<Format>) -> Result<String, CliError> {
    let st = state.state()?;
    let r = witness::evaluate_witness_with(&st, &quadrature.spec()?)?;
    Ok(match format.unwrap_or(Format::Json) {
        Format::Json => to_json(&r),
        Format::Csv => format!(
            "p,var_q_given_0_per_m2,var_x_given_0_m2,w,gaussian_bound_violated\n{},{},{},{},{}\n",
            r.p, r.var_q_given_0, r.var_x_given_0, r.w, r.gaussian_bound_violated
        ),
    })
}

#[derive(Debug, Serialize)]
struct SweepLine {
    p: f64,
    k_gaussian_1d: Option<f64>,
    w_gaussian: Option<f64>,
    k_spdc_1d: Option<f64>,
    w_spdc: Option<f64>,
    errors: Vec<String>,
}

fn cmd_sweep(state: &StateArgs, p_min: f64, p_max: f64, steps: usize, format: Option<Format>) -> Result<String, CliError> {
    let gaussian = witness::sweep(&state.gaussian_family()?, p_min, p_max, steps)?;
    let spdc = witness::sweep(&state.spdc_family()?, p_min, p_max, steps)?;
    let lines: Vec<SweepLine> = gaussian
        .into_iter()
        .zip(spdc)
        .map(|(g, s)| SweepLine {
            p: g.p,
            k_gaussian_1d: g.k_1d,
            w_gaussian: g.w,
            k_spdc_1d: s.k_1d,
            w_spdc: s.w,
            errors: g.error.into_iter().chain(s.error).collect(),
        })
        .collect();
    for line in &lines {
        for e in &line.errors {
            eprintln!("warning: P = {}: {e}", line.p);
        }
    }
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Json => to_json(&lines),
        Format::Csv => {
            let mut out = String::from("P,K_gaussian_1d,W_gaussian,K_spdc_1d,W_spdc\n");
            for l in &lines {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    l.p,
                    opt(l.k_gaussian_1d),
                    opt(l.w_gaussian),
                    opt(l.k_spdc_1d),
                    opt(l.w_spdc)
                );
            }
            out
        }
    })
}

#[derive(Debug, Serialize)]
struct IntervalReport {
    family: &'static str,
    p_low: Option<f64>,
    p_high: Option<f64>,
    status: String,
}

fn cmd_interval(state: &StateArgs, family: FamilyKind, format: Option<Format>) -> Result<String, CliError> {
    if format == Some(Format::Csv) {
        return Err(CliError::Input("interval writes JSON only".into()));
    }
    let (name, fam) = match family {
        FamilyKind::Spdc => ("spdc", state.spdc_family()?),
        FamilyKind::Gaussian => ("gaussian", state.gaussian_family()?),
    };
    let report = match witness::violation_interval(&fam) {
        Ok(iv) => IntervalReport {
            family: name,
            p_low: Some(iv.p_low),
            p_high: Some(iv.p_high),
            status: "violation".into(),
        },
        Err(e @ WitnessError::NoSignChange { .. }) => IntervalReport {
            family: name,
            p_low: None,
            p_high: None,
            status: format!("no violation: {e}"),
        },
        Err(e) => return Err(e.into()),
    };
    Ok(to_json(&report))
}

/// Conditional density on the default detector axis of `plane`.
pub fn distribution(
    state: &SpdcBiphoton,
    geometry: &DetectionGeometry,
    plane: PlaneArg,
    fixed: f64,
    points: usize,
    aperture: bool,
) -> Result<DensitySamples, CliError> {
    let (samples, width) = match plane {
        PlaneArg::Far => {
            let axis = optics::far_field_axis(state, geometry, fixed, points)?;
            (optics::far_field_coincidence(state, geometry, fixed, &axis)?, geometry.slit_width())
        }
        PlaneArg::Near => {
            let axis = optics::near_field_axis(state, fixed, points)?;
            (optics::near_field_coincidence(state, fixed, &axis)?, geometry.fiber_core_diameter())
        }
    };
    Ok(if aperture {
        optics::aperture_convolve(&samples, width)?
    } else {
        samples
    })
}

fn density_csv(samples: &DensitySamples) -> String {
    let mut out = format!(
        "# fixed={}\nposition_m,density_per_m\n",
        samples.fixed_conjugate_value()
    );
    for (x, d) in samples.axis().iter().zip(samples.density()) {
        let _ = writeln!(out, "{x},{d}");
    }
    out
}

/// All displacements share the undisplaced near-field axis, so the z = 0
/// block matches `distribution --plane near` exactly.
fn cmd_displace(state: &SpdcBiphoton, zs: &[f64], fixed: f64, points: usize) -> Result<String, CliError> {
    let axis = optics::near_field_axis(state, fixed, points)?;
    let mut out = format!("# fixed={fixed}\nz_m,position_m,density_per_m\n");
    for &z in zs {
        let samples = if z == 0.0 {
            optics::near_field_coincidence(state, fixed, &axis)?
        } else {
            optics::displaced_near_field(state, z, fixed, &axis)?
        };
        for (x, d) in samples.axis().iter().zip(samples.density()) {
            let _ = writeln!(out, "{z},{x},{d}");
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct TableRow {
    pump_waist_m: f64,
    p: f64,
    var_x_measured_m2: Measured,
    var_q_measured_per_m2: Measured,
    w_measured: Measured,
    var_x_given_0_m2: f64,
    var_q_given_0_per_m2: f64,
    w_theory: f64,
}

fn cmd_table2(mode: ModeArg, format: Option<Format>) -> Result<String, CliError> {
    let mode = match mode {
        ModeArg::LinearSum => PropagationMode::LinearSum,
        ModeArg::Quadrature => PropagationMode::Quadrature,
    };
    let rows = EXPERIMENT_PUMP_WAISTS
        .iter()
        .zip(EXPERIMENT_VARIANCES)
        .map(|(&c, (vx, sx, vq, sq))| {
            let st = SpdcBiphoton::from_experiment(c, EXPERIMENT_CRYSTAL_LENGTH, EXPERIMENT_WAVELENGTH)?;
            let theory = witness::evaluate_witness(&st.into())?;
            let (var_x, var_q) = (Measured::new(vx, sx), Measured::new(vq, sq));
            Ok(TableRow {
                pump_waist_m: c,
                p: st.p(),
                var_x_measured_m2: var_x,
                var_q_measured_per_m2: var_q,
                w_measured: analysis::propagate_witness_error(var_q, var_x, mode)?,
                var_x_given_0_m2: theory.var_x_given_0,
                var_q_given_0_per_m2: theory.var_q_given_0,
                w_theory: theory.w,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut out = String::from(
                "c_m,P,var_x_E_m2,var_x_E_sigma_m2,var_q_E_per_m2,var_q_E_sigma_per_m2,W_E,W_E_sigma,var_x_given_0_m2,var_q_given_0_per_m2,W_T\n",
            );
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.pump_waist_m,
                    r.p,
                    r.var_x_measured_m2.value,
                    r.var_x_measured_m2.sigma,
                    r.var_q_measured_per_m2.value,
                    r.var_q_measured_per_m2.sigma,
                    r.w_measured.value,
                    r.w_measured.sigma,
                    r.var_x_given_0_m2,
                    r.var_q_given_0_per_m2,
                    r.w_theory
                );
            }
            out
        }
    })
}
