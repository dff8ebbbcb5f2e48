//! Coincidence scans: synthetic generation, model fits with first-order
//! uncertainties, and propagation of variance errors to W.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{ConditionalProfile, DistributionError, LineProfile};
use crate::optics::{DetectionGeometry, DEFAULT_FOCAL_LENGTH};
use crate::specfun::{QuadratureError, QuadratureSpec};
use crate::states::{BiphotonState, Representation, SpdcBiphoton};

/// Smallest scan accepted anywhere in this module.
pub const MIN_POSITIONS: usize = 8;
/// Smallest peak count accepted by [`simulate_scan`].
pub const MIN_PEAK_COUNTS: u64 = 10;
/// Simulated scans cover the model center ± this many model standard
/// deviations.
pub const SCAN_HALFWIDTH_SIGMAS: f64 = 5.0;
/// Scan size and peak count whose fitted relative variance errors (a few
/// per cent) match those of the experimental scans.
pub const TYPICAL_SCAN_POSITIONS: usize = 41;
pub const TYPICAL_PEAK_COUNTS: u64 = 100;
const TEMPLATE_POINTS: usize = 1 << 14;
const LM_MAX_ITERATIONS: usize = 500;
const LM_STEP_TOLERANCE: f64 = 1e-10;
const LM_MAX_DAMPING: f64 = 1e12;
/// Offset added to model counts in Poisson weights; keeps weights finite at
/// the nodes of the model while leaving the objective smooth.
const WEIGHT_OFFSET: f64 = 0.01;
const RSS_ROUNDING: f64 = 1e-13;
const GN_POLISH_STEPS: usize = 20;
const GN_POLISH_START: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("scan needs at least {MIN_POSITIONS} positions with matching counts (got {positions} positions, {counts} counts)")]
    ScanSize { positions: usize, counts: usize },
    #[error("scan positions must be finite and strictly increasing")]
    ScanOrder,
    #[error("{name} is invalid: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("variance and its uncertainty must be positive and non-negative (got {value} ± {sigma})")]
    InvalidMeasurement { value: f64, sigma: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl From<QuadratureError> for AnalysisError {
    fn from(e: QuadratureError) -> Self {
        Self::Distribution(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanPlane {
    NearField,
    FarField,
}

impl fmt::Display for ScanPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanPlane::NearField => "near",
            ScanPlane::FarField => "far",
        })
    }
}

impl FromStr for ScanPlane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "near" => Ok(ScanPlane::NearField),
            "far" => Ok(ScanPlane::FarField),
            other => Err(format!("unknown plane {other:?}, expected near or far")),
        }
    }
}

/// A coincidence scan of one detector across `positions` with the other
/// parked at `fixed_conjugate_position`.
///
/// Besides the plane and the fixed position, a scan records the aperture
/// width it was taken with and, for the far field, the lens focal length, so
/// a fit can rebuild the detection model from the scan alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanData {
    positions: Vec<f64>,
    counts: Vec<u64>,
    plane: ScanPlane,
    fixed_conjugate_position: f64,
    integration_seed: Option<u64>,
    aperture_width: f64,
    focal_length: f64,
}

impl ScanData {
    pub fn new(
        positions: Vec<f64>,
        counts: Vec<u64>,
        plane: ScanPlane,
        fixed_conjugate_position: f64,
        integration_seed: Option<u64>,
    ) -> Result<Self, AnalysisError> {
        if positions.len() != counts.len() || positions.len() < MIN_POSITIONS {
            return Err(AnalysisError::ScanSize {
                positions: positions.len(),
                counts: counts.len(),
            });
        }
        if positions.iter().any(|x| !x.is_finite()) || positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AnalysisError::ScanOrder);
        }
        if !fixed_conjugate_position.is_finite() {
            return Err(AnalysisError::InvalidParameter {
                name: "fixed_conjugate_position",
                value: fixed_conjugate_position,
            });
        }
        Ok(Self {
            positions,
            counts,
            plane,
            fixed_conjugate_position,
            integration_seed,
            aperture_width: 0.0,
            focal_length: DEFAULT_FOCAL_LENGTH,
        })
    }

    /// Records the aperture width and focal length of the detection setup.
    pub fn with_detection(mut self, aperture_width: f64, focal_length: f64) -> Result<Self, AnalysisError> {
        if !(aperture_width >= 0.0 && aperture_width.is_finite()) {
            return Err(AnalysisError::InvalidParameter {
                name: "aperture_width",
                value: aperture_width,
            });
        }
        if !(focal_length > 0.0 && focal_length.is_finite()) {
            return Err(AnalysisError::InvalidParameter {
                name: "focal_length",
                value: focal_length,
            });
        }
        self.aperture_width = aperture_width;
        self.focal_length = focal_length;
        Ok(self)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn plane(&self) -> ScanPlane {
        self.plane
    }

    pub fn fixed_conjugate_position(&self) -> f64 {
        self.fixed_conjugate_position
    }

    pub fn integration_seed(&self) -> Option<u64> {
        self.integration_seed
    }

    pub fn aperture_width(&self) -> f64 {
        self.aperture_width
    }

    pub fn focal_length(&self) -> f64 {
        self.focal_length
    }

    /// The same scan with every detector position moved by `delta`.
    pub fn translated(&self, delta: f64) -> Result<Self, AnalysisError> {
        let mut out = self.clone();
        out.positions.iter_mut().for_each(|x| *x += delta);
        if out.positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AnalysisError::ScanOrder);
        }
        Ok(out)
    }

    /// Count-weighted variance of the detector positions.
    pub fn empirical_variance(&self) -> f64 {
        let total: f64 = self.counts.iter().map(|&c| c as f64).sum();
        let mean = self.positions.iter().zip(&self.counts).map(|(x, &c)| x * c as f64).sum::<f64>() / total;
        self.positions
            .iter()
            .zip(&self.counts)
            .map(|(x, &c)| (x - mean).powi(2) * c as f64)
            .sum::<f64>()
            / total
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# plane={}", self.plane)?;
        writeln!(out, "# fixed={}", self.fixed_conjugate_position)?;
        if let Some(seed) = self.integration_seed {
            writeln!(out, "# seed={seed}")?;
        }
        writeln!(out, "# aperture={}", self.aperture_width)?;
        writeln!(out, "# focal={}", self.focal_length)?;
        writeln!(out, "position_m,counts")?;
        for (x, c) in self.positions.iter().zip(&self.counts) {
            writeln!(out, "{x},{c}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, AnalysisError> {
        let mut plane = None;
        let mut fixed = 0.0;
        let mut seed = None;
        let mut aperture = 0.0;
        let mut focal = DEFAULT_FOCAL_LENGTH;
        let mut header_seen = false;
        let mut positions = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |message: String| AnalysisError::Parse { line: lineno, message };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(meta) = trimmed.strip_prefix('#') {
                let Some((key, value)) = meta.split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "plane" => plane = Some(value.parse::<ScanPlane>().map_err(err)?),
                    "fixed" => fixed = parse_f64(value).map_err(err)?,
                    "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(e.to_string()))?),
                    "aperture" => aperture = parse_f64(value).map_err(err)?,
                    "focal" => focal = parse_f64(value).map_err(err)?,
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if trimmed != "position_m,counts" {
                    return Err(err(format!("expected header `position_m,counts`, found {trimmed:?}")));
                }
                header_seen = true;
                continue;
            }
            let (x, c) = trimmed
                .split_once(',')
                .ok_or_else(|| err("expected `position,counts`".into()))?;
            positions.push(parse_f64(x).map_err(err)?);
            counts.push(c.trim().parse::<u64>().map_err(|e| err(format!("counts: {e}")))?);
        }
        let plane = plane.ok_or(AnalysisError::Parse {
            line: 0,
            message: "missing `# plane=` metadata".into(),
        })?;
        ScanData::new(positions, counts, plane, fixed, seed)?.with_detection(aperture, focal)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<(), AnalysisError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

/// The conditional density seen by a detector in one plane, in detector
/// coordinates.
struct PlaneModel {
    profile: ConditionalProfile,
    /// model coordinate per unit detector position (k/f in the far field)
    scale: f64,
    center_x: f64,
    sigma_x: f64,
}

impl PlaneModel {
    fn new(state: &SpdcBiphoton, plane: ScanPlane, fixed: f64, focal_length: f64) -> Result<Self, AnalysisError> {
        let spec = QuadratureSpec::default();
        let (rep, scale) = match plane {
            ScanPlane::NearField => (Representation::Position, 1.0),
            ScanPlane::FarField => (Representation::Momentum, state.wavenumber() / focal_length),
        };
        let st: BiphotonState = (*state).into();
        let profile = ConditionalProfile::new(&st, rep, scale * fixed);
        let center_x = profile.mean(&spec)? / scale;
        let sigma_x = profile.variance(&spec)?.sqrt() / scale;
        Ok(Self {
            profile,
            scale,
            center_x,
            sigma_x,
        })
    }

    /// Unnormalized density averaged over an aperture of width `w` centered
    /// at detector position `x`.
    fn window_average(&self, x: f64, w: f64, spec: &QuadratureSpec) -> Result<f64, AnalysisError> {
        if w == 0.0 {
            return Ok(self.profile.density(self.scale * x));
        }
        let lo = self.profile.to_scaled(self.scale * (x - 0.5 * w));
        let hi = self.profile.to_scaled(self.scale * (x + 0.5 * w));
        Ok(self.profile.mass_between(lo, hi, spec)? * self.profile.width() / (self.scale * w))
    }

    /// Scan positions spanning the model center ± [`SCAN_HALFWIDTH_SIGMAS`]
    /// standard deviations of the aperture-broadened density.
    fn scan_positions(&self, aperture: f64, n: usize) -> Vec<f64> {
        let sigma = (self.sigma_x.powi(2) + aperture * aperture / 12.0).sqrt();
        crate::distributions::uniform_grid(self.center_x, SCAN_HALFWIDTH_SIGMAS * sigma, n)
    }

    fn variance_factor(&self) -> f64 {
        self.scale * self.scale
    }
}

/// Expected counts at each scan position: `peak_counts` times the aperture-
/// averaged model density relative to its value at the model center.
pub fn expected_counts(
    state: &SpdcBiphoton,
    plane: ScanPlane,
    geometry: &DetectionGeometry,
    n_positions: usize,
    peak_counts: f64,
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    if n_positions < MIN_POSITIONS {
        return Err(AnalysisError::ScanSize {
            positions: n_positions,
            counts: n_positions,
        });
    }
    let model = PlaneModel::new(state, plane, 0.0, geometry.focal_length())?;
    let aperture = aperture_for(plane, geometry);
    let spec = QuadratureSpec::default();
    let positions = model.scan_positions(aperture, n_positions);
    let peak = model.window_average(model.center_x, aperture, &spec)?;
    let expected = positions
        .iter()
        .map(|&x| Ok(peak_counts * model.window_average(x, aperture, &spec)? / peak))
        .collect::<Result<Vec<f64>, AnalysisError>>()?;
    Ok((positions, expected))
}

fn aperture_for(plane: ScanPlane, geometry: &DetectionGeometry) -> f64 {
    match plane {
        ScanPlane::NearField => geometry.fiber_core_diameter(),
        ScanPlane::FarField => geometry.slit_width(),
    }
}

/// Seeded Poisson scan of the conditional density with the conjugate
/// detector at the center; the far field uses the slit, the near field the
/// fibre core.
pub fn simulate_scan(
    state: &SpdcBiphoton,
    plane: ScanPlane,
    geometry: &DetectionGeometry,
    n_positions: usize,
    peak_counts: u64,
    seed: u64,
) -> Result<ScanData, AnalysisError> {
    if peak_counts < MIN_PEAK_COUNTS {
        return Err(AnalysisError::InvalidParameter {
            name: "peak_counts",
            value: peak_counts as f64,
        });
    }
    let (positions, expected) = expected_counts(state, plane, geometry, n_positions, peak_counts as f64)?;
    let counts = draw_counts(&expected, seed);
    ScanData::new(positions, counts, plane, 0.0, Some(seed))?
        .with_detection(aperture_for(plane, geometry), geometry.focal_length())
}

/// One Poisson draw per mean, from a ChaCha8 stream seeded with `seed`.
pub fn draw_counts(expected: &[f64], seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expected
        .iter()
        .map(|&mean| match Poisson::new(mean) {
            Ok(law) => law.sample(&mut rng) as u64,
            Err(_) => 0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Conditional variance: m² in the near field, m⁻² in the far field.
    pub variance: f64,
    /// First-order standard error of `variance`; absent when the fit did not
    /// converge.
    pub variance_sigma: Option<f64>,
    pub amplitude: f64,
    /// Fitted center in detector coordinates (m).
    pub center: f64,
    /// Residual two-norm relative to the two-norm of the counts.
    pub residual_norm: f64,
    pub converged: bool,
}

/// The model density in units of its own standard deviation, with a
/// cumulative table for exact box averages.
struct Template {
    y_max: f64,
    h: f64,
    density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Template {
    fn new(model: &PlaneModel) -> Self {
        let r = QuadratureSpec::default().truncation_radius_factor;
        let y_max = r * model.profile.width() / (model.sigma_x * model.scale);
        let n = TEMPLATE_POINTS;
        let h = 2.0 * y_max / n as f64;
        let raw = |y: f64| model.profile.density(model.scale * (model.center_x + y * model.sigma_x));
        let peak = raw(0.0);
        let shape = |y: f64| raw(y) / peak;
        let density: Vec<f64> = (0..=n).map(|i| shape(-y_max + h * i as f64)).collect();
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        for i in 0..n {
            let mid = shape(-y_max + h * (i as f64 + 0.5));
            let cell = h / 6.0 * (density[i] + 4.0 * mid + density[i + 1]);
            cumulative.push(cumulative[i] + cell);
        }
        Self {
            y_max,
            h,
            density,
            cumulative,
        }
    }

    /// `∫_{-∞}^{y} shape` and its first two derivatives, from the cubic
    /// Hermite interpolant of the cumulative table, so that model values and
    /// Jacobians are mutually exact.
    fn cumulative(&self, y: f64) -> (f64, f64, f64) {
        let n = self.density.len() - 1;
        if y <= -self.y_max {
            return (0.0, 0.0, 0.0);
        }
        if y >= self.y_max {
            return (self.cumulative[n], 0.0, 0.0);
        }
        let pos = (y + self.y_max) / self.h;
        let i = (pos.floor() as usize).min(n - 1);
        let t = pos - i as f64;
        let (c0, c1) = (self.cumulative[i], self.cumulative[i + 1]);
        let (d0, d1) = (self.density[i] * self.h, self.density[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * c0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * c1 + (t3 - t2) * d1;
        let slope = (6.0 * t2 - 6.0 * t) * (c0 - c1) + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (3.0 * t2 - 2.0 * t) * d1;
        let curvature = (12.0 * t - 6.0) * (c0 - c1) + (6.0 * t - 4.0) * d0 + (6.0 * t - 2.0) * d1;
        (value, slope / self.h, curvature / (self.h * self.h))
    }

    /// Model counts and their gradient in (amplitude, center, width scale s),
    /// where `s` is the fitted standard deviation in detector units.
    fn evaluate(&self, x: f64, theta: &Vector3<f64>, aperture: f64) -> (f64, Vector3<f64>) {
        let (a, x0, s) = (theta[0], theta[1], theta[2]);
        if aperture == 0.0 {
            let u = (x - x0) / s;
            let (_, g, dg) = self.cumulative(u);
            return (a * g, Vector3::new(g, -a * dg / s, -a * dg * u / s));
        }
        // box average of shape((y - x0)/s) over [x - w/2, x + w/2]
        let w = aperture;
        let (up, um) = ((x + 0.5 * w - x0) / s, (x - 0.5 * w - x0) / s);
        let (cp, tp, _) = self.cumulative(up);
        let (cm, tm, _) = self.cumulative(um);
        let m = s / w * (cp - cm);
        let dm_dx0 = (tm - tp) / w;
        let dm_ds = (cp - cm - up * tp + um * tm) / w;
        (a * m, Vector3::new(m, a * dm_dx0, a * dm_ds))
    }
}

/// Least-squares fit of (amplitude, center, width scale) of the plane's
/// model shape to the scan counts.
///
/// Residuals are weighted by the Poisson variance of the fitted model. The
/// reported variance is the second moment of
/// the fitted model before aperture broadening; its uncertainty comes from
/// the residual-scaled Gauss-Newton covariance of the weighted problem.
pub fn fit_scan(data: &ScanData, state_template: &SpdcBiphoton) -> Result<FitResult, AnalysisError> {
    let model = PlaneModel::new(
        state_template,
        data.plane,
        data.fixed_conjugate_position,
        data.focal_length,
    )?;
    let template = Template::new(&model);
    let aperture = data.aperture_width;
    let xs = &data.positions;
    let ys: Vec<f64> = data.counts.iter().map(|&c| c as f64).collect();
    let n = xs.len();

    // moment estimates as the starting point
    let total: f64 = ys.iter().sum();
    if !(total > 0.0) {
        return Err(AnalysisError::InvalidParameter {
            name: "total counts",
            value: total,
        });
    }
    let mean = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / total;
    let var = xs.iter().zip(&ys).map(|(x, y)| (x - mean).powi(2) * y).sum::<f64>() / total;
    let s0 = (var - aperture * aperture / 12.0).max(0.25 * var).sqrt();
    let peak = ys.iter().cloned().fold(0.0, f64::max);
    let theta = Vector3::new(peak, mean, s0);

    // Poisson-weighted least squares with the weights 1/μ taken at the
    // fitted model. Its stationarity condition Σ (y - μ)/μ ∂μ = 0 is that of
    // the Poisson likelihood, so the deviance serves as the objective and
    // Fisher scoring (JᵀWJ, JᵀW r) as the Gauss-Newton system.
    let objective = |theta: &Vector3<f64>| -> (f64, Matrix3<f64>, Vector3<f64>) {
        let mut deviance = 0.0;
        let mut info = Matrix3::zeros();
        let mut score = Vector3::zeros();
        for (x, y) in xs.iter().zip(&ys) {
            let (mu, grad) = template.evaluate(*x, theta, aperture);
            let mu = poisson_mean(mu);
            deviance += mu - y + if *y > 0.0 { y * (y / mu).ln() } else { 0.0 };
            info += grad * grad.transpose() / mu;
            score += grad * ((y - mu) / mu);
        }
        (deviance, info, score)
    };
    let Minimum {
        theta, converged, jtj, ..
    } = levenberg_marquardt(theta, objective);
    let pearson: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let mu = poisson_mean(template.evaluate(*x, &theta, aperture).0);
            (y - mu).powi(2) / mu
        })
        .sum();

    let factor = model.variance_factor();
    let s = theta[2];
    let variance_sigma = if converged && n > 3 {
        jtj.try_inverse().and_then(|inv| {
            let sigma_s = (inv[(2, 2)] * pearson / (n - 3) as f64).sqrt();
            sigma_s.is_finite().then_some(2.0 * s * sigma_s * factor)
        })
    } else {
        None
    };
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - template.evaluate(*x, &theta, aperture).0).powi(2))
        .sum();
    let norm = ys.iter().map(|y| y * y).sum::<f64>().sqrt();
    Ok(FitResult {
        variance: s * s * factor,
        variance_sigma,
        amplitude: theta[0],
        center: theta[1],
        residual_norm: rss.sqrt() / norm,
        converged: converged && variance_sigma.is_some(),
    })
}

fn poisson_mean(mu: f64) -> f64 {
    mu.max(0.0) + WEIGHT_OFFSET
}

struct Minimum {
    theta: Vector3<f64>,
    jtj: Matrix3<f64>,
    converged: bool,
}

/// Damped Gauss-Newton on an objective returning `(value, JᵀJ, Jᵀr)`,
/// where the value is half a squared residual norm or its likelihood analogue.
fn levenberg_marquardt<F>(mut theta: Vector3<f64>, residuals: F) -> Minimum
where
    F: Fn(&Vector3<f64>) -> (f64, Matrix3<f64>, Vector3<f64>),
{
    let (mut rss, mut jtj, mut jtr) = residuals(&theta);
    let at_minimum = |theta: &Vector3<f64>, jtj: &Matrix3<f64>, jtr: &Vector3<f64>| {
        // judged by the undamped Gauss-Newton step, since damped steps are
        // small far from the minimum too
        jtj.lu()
            .solve(jtr)
            .is_some_and(|gn| (0..3).all(|i| gn[i].abs() <= LM_STEP_TOLERANCE * theta[i].abs().max(theta[2])))
    };
    let mut lambda = 1e-3;
    let mut converged = at_minimum(&theta, &jtj, &jtr);
    for _ in 0..LM_MAX_ITERATIONS {
        if converged {
            break;
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] *= 1.0 + lambda;
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            break;
        };
        let candidate = theta + step;
        if candidate[2] > 0.0 {
            let (rss_new, jtj_new, jtr_new) = residuals(&candidate);
            // equality within rounding still moves θ toward the minimum,
            // where rss is flat to machine precision
            if rss_new <= rss * (1.0 + RSS_ROUNDING) {
                theta = candidate;
                rss = rss_new;
                jtj = jtj_new;
                jtr = jtr_new;
                lambda = (lambda * 0.1).max(1e-15);
                converged = at_minimum(&theta, &jtj, &jtr);
                continue;
            }
        }
        lambda *= 10.0;
        if lambda > LM_MAX_DAMPING {
            break;
        }
    }
    // Close to the minimum rss is flat below rounding, so the last digits
    // come from plain Gauss-Newton steps, which only need the gradient.
    for _ in 0..GN_POLISH_STEPS {
        if converged {
            break;
        }
        let Some(gn) = jtj.lu().solve(&jtr) else {
            break;
        };
        let scale = theta[2];
        if (0..3).any(|i| gn[i].abs() > GN_POLISH_START * theta[i].abs().max(scale)) || theta[2] + gn[2] <= 0.0 {
            break;
        }
        theta += gn;
        (_, jtj, jtr) = residuals(&theta);
        converged = at_minimum(&theta, &jtj, &jtr);
    }
    Minimum {
        theta,
        jtj,
        converged,
    }
}

/// Summary of a fit-coverage experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub runs: usize,
    pub covered: usize,
    pub unconverged: usize,
    pub fraction: f64,
}

/// Fits `seeds.len()` simulated scans of `state` and counts how often the
/// true conditional variance lies within `k_sigma` fitted standard errors.
pub fn fit_coverage(
    state: &SpdcBiphoton,
    plane: ScanPlane,
    geometry: &DetectionGeometry,
    n_positions: usize,
    peak_counts: u64,
    seeds: &[u64],
    k_sigma: f64,
) -> Result<Coverage, AnalysisError> {
    let model = PlaneModel::new(state, plane, 0.0, geometry.focal_length())?;
    let truth = model.sigma_x.powi(2) * model.variance_factor();
    let (positions, expected) = expected_counts(state, plane, geometry, n_positions, peak_counts as f64)?;
    let aperture = aperture_for(plane, geometry);
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let data = ScanData::new(positions.clone(), draw_counts(&expected, seed), plane, 0.0, Some(seed))?
                .with_detection(aperture, geometry.focal_length())?;
            let fit = fit_scan(&data, state)?;
            Ok(match fit.variance_sigma {
                Some(sigma) if fit.converged => Some((fit.variance - truth).abs() <= k_sigma * sigma),
                _ => None,
            })
        })
        .collect::<Result<Vec<Option<bool>>, AnalysisError>>()?;
    let covered = outcomes.iter().filter(|o| **o == Some(true)).count();
    let unconverged = outcomes.iter().filter(|o| o.is_none()).count();
    Ok(Coverage {
        runs: seeds.len(),
        covered,
        unconverged,
        fraction: covered as f64 / seeds.len() as f64,
    })
}

/// A positive value with a standard uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn relative(&self) -> f64 {
        self.sigma / self.value
    }
}

/// How relative variance errors combine into the error of their product.
///
/// `LinearSum` is the default. It is an inferred convention: applied to the
/// tabulated experimental variances it reproduces their quoted W
/// uncertainties, which `Quadrature` (the usual rule for independent errors)
/// comes out below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    #[default]
    LinearSum,
    Quadrature,
}

pub fn propagate_witness_error(
    var_q: Measured,
    var_x: Measured,
    mode: PropagationMode,
) -> Result<Measured, AnalysisError> {
    for m in [var_q, var_x] {
        if !(m.value > 0.0 && m.value.is_finite() && m.sigma >= 0.0 && m.sigma.is_finite()) {
            return Err(AnalysisError::InvalidMeasurement {
                value: m.value,
                sigma: m.sigma,
            });
        }
    }
    let w = var_q.value * var_x.value;
    let (rq, rx) = (var_q.relative(), var_x.relative());
    let rel = match mode {
        PropagationMode::LinearSum => rq + rx,
        PropagationMode::Quadrature => rq.hypot(rx),
    };
    Ok(Measured::new(w, w * rel))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state2() -> SpdcBiphoton {
        SpdcBiphoton::from_experiment(100e-6, 1.8e-2, 710e-9).unwrap()
    }

    #[test]
    fn propagation_modes() {
        let q = Measured::new(3.55e7, 0.14e7);
        let x = Measured::new(6.62e-10, 0.26e-10);
        let lin = propagate_witness_error(q, x, PropagationMode::LinearSum).unwrap();
        let quad = propagate_witness_error(q, x, PropagationMode::Quadrature).unwrap();
        assert!((lin.value - 0.023501).abs() < 1e-9);
        assert!(lin.sigma >= quad.sigma);
        let zero = propagate_witness_error(Measured::new(2.0, 0.0), Measured::new(3.0, 0.0), PropagationMode::LinearSum).unwrap();
        assert_eq!(zero.sigma, 0.0);
        assert!(propagate_witness_error(Measured::new(-1.0, 0.0), x, PropagationMode::LinearSum).is_err());
    }

    #[test]
    fn scan_validation() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(ScanData::new(xs.clone(), vec![1; 8], ScanPlane::NearField, 0.0, None).is_ok());
        assert!(ScanData::new(xs.clone(), vec![1; 7], ScanPlane::NearField, 0.0, None).is_err());
        assert!(ScanData::new(xs[..7].to_vec(), vec![1; 7], ScanPlane::NearField, 0.0, None).is_err());
        let mut bad = xs.clone();
        bad.swap(2, 3);
        assert!(matches!(
            ScanData::new(bad, vec![1; 8], ScanPlane::NearField, 0.0, None),
            Err(AnalysisError::ScanOrder)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let g = DetectionGeometry::default();
        let scan = simulate_scan(&state2(), ScanPlane::FarField, &g, 16, 1000, 7).unwrap();
        let text = scan.to_csv_string();
        assert!(text.contains("# plane=far") && text.contains("position_m,counts"));
        let back = ScanData::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, scan);
    }

    #[test]
    fn csv_errors() {
        assert!(ScanData::read_csv("position_m,counts\n0,1\n".as_bytes()).is_err());
        assert!(ScanData::read_csv("# plane=side\nposition_m,counts\n".as_bytes()).is_err());
        assert!(ScanData::read_csv("# plane=near\nx,y\n".as_bytes()).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = DetectionGeometry::default();
        let a = simulate_scan(&state2(), ScanPlane::NearField, &g, 32, 500, 11).unwrap();
        let b = simulate_scan(&state2(), ScanPlane::NearField, &g, 32, 500, 11).unwrap();
        let c = simulate_scan(&state2(), ScanPlane::NearField, &g, 32, 500, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts(), c.counts());
        assert!(simulate_scan(&state2(), ScanPlane::NearField, &g, 32, 5, 11).is_err());
    }

    #[test]
    fn noiseless_fit_recovers_variance() {
        let g = DetectionGeometry::default();
        let st = state2();
        for plane in [ScanPlane::NearField, ScanPlane::FarField] {
            let (xs, mu) = expected_counts(&st, plane, &g, 41, 1e12).unwrap();
            let counts = mu.iter().map(|m| m.round() as u64).collect();
            let data = ScanData::new(xs, counts, plane, 0.0, None)
                .unwrap()
                .with_detection(aperture_for(plane, &g), g.focal_length())
                .unwrap();
            let fit = fit_scan(&data, &st).unwrap();
            let model = PlaneModel::new(&st, plane, 0.0, g.focal_length()).unwrap();
            let truth = model.sigma_x.powi(2) * model.variance_factor();
            assert!(fit.converged);
            assert!(((fit.variance - truth) / truth).abs() < 1e-6, "{plane}: {} vs {truth}", fit.variance);
        }
    }

    #[test]
    fn fit_is_shift_equivariant() {
        let g = DetectionGeometry::default();
        let st = state2();
        for plane in [ScanPlane::NearField, ScanPlane::FarField] {
            let scan = simulate_scan(&st, plane, &g, 41, 200, 3).unwrap();
            let a = fit_scan(&scan, &st).unwrap();
            let delta = 7.0 * scan.positions()[1].abs().max(scan.positions()[0].abs()) / 40.0;
            let b = fit_scan(&scan.translated(delta).unwrap(), &st).unwrap();
            assert!(((b.variance - a.variance) / a.variance).abs() < 1e-9, "{plane}: {} {} {} {}", a.variance, b.variance, a.converged, b.converged);
            assert!((b.center - a.center - delta).abs() < 1e-9 * delta.abs().max(1e-6));
        }
    }

    #[test]
    fn peak_mean_matches_poisson() {
        let g = DetectionGeometry::default();
        let peak = 1_000_000u64;
        let trials = 200;
        let (xs, _) = expected_counts(&state2(), ScanPlane::FarField, &g, 9, peak as f64).unwrap();
        assert!(xs[4].abs() < 1e-15);
        let total: u64 = (0..trials)
            .map(|seed| simulate_scan(&state2(), ScanPlane::FarField, &g, 9, peak, seed).unwrap().counts()[4])
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - peak as f64).abs() < 3.0 * (peak as f64 / trials as f64).sqrt());
    }

    #[test]
    fn scan_variance_tracks_model() {
        let g = DetectionGeometry::default();
        let st = SpdcBiphoton::with_p(0.3189, 1.8e-2, 710e-9).unwrap();
        let scan = simulate_scan(&st, ScanPlane::FarField, &g, 101, 100_000, 5).unwrap();
        let model = PlaneModel::new(&st, ScanPlane::FarField, 0.0, g.focal_length()).unwrap();
        let truth = model.sigma_x.powi(2);
        let rel = (scan.empirical_variance() - truth) / truth;
        assert!(rel.abs() < 0.05, "{rel}");
    }
}
