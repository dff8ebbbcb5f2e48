//! Detection chain: lens mapping to the far field, far- and near-field
//! coincidence densities, finite apertures, and the near field of a crystal
//! displaced along the optical axis.
//!
//! Displacing the crystal by `z` multiplies each photon's angular spectrum by
//! `exp(-i|q|² z/(2k))`. That phase splits over the sum and difference
//! coordinates, so the transformed amplitude stays a product of a pump factor
//! and a phase-matching factor. Both are transformed in closed form: the pump
//! is a complex Gaussian, and writing `sinc(b d²)` as an average of
//! `exp(iτd²)` over `τ ∈ [-b, b]` turns the phase-matching transform into
//! `∫ exp(iρ²/(4τ))/τ dτ` over `τ ∈ [β - b, β + b]`, `β = z/(4k)`, which is
//! a combination of sine and cosine integrals. At `z = 0` it reduces to
//! `iπ·sint(ρ²/(4b))`; at `|z| = L/2` one endpoint reaches `τ = 0` and the
//! factor grows like `ln ρ` on the diagonal.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    self, check_uniform, symmetric_nodes, AxisUnit, ConditionalProfile, DensitySamples, DistributionError,
    LineProfile,
};
use crate::specfun::{self, QuadratureError, QuadratureSpec};
use crate::states::{BiphotonState, Representation, SpdcBiphoton};

/// Lens focal length used in the reference setup.
pub const DEFAULT_FOCAL_LENGTH: f64 = 0.15;
/// Far-field slit width.
pub const DEFAULT_SLIT_WIDTH: f64 = 50e-6;
/// Near-field fibre core diameter.
pub const DEFAULT_FIBER_CORE: f64 = 4.7e-6;
/// Oscillation nodes of the displaced phase-matching factor are only seeded
/// for transform endpoints at least this fraction of `b` away from zero.
const NODE_ENDPOINT_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{name} must be positive and finite, got {value}")]
    InvalidGeometry { name: &'static str, value: f64 },
    #[error("aperture width must be finite and non-negative, got {0}")]
    InvalidAperture(f64),
    #[error("displacement {z} m exceeds the crystal length {limit} m")]
    DisplacementOutOfRange { z: f64, limit: f64 },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl From<QuadratureError> for OpticsError {
    fn from(e: QuadratureError) -> Self {
        Self::Distribution(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionGeometry {
    focal_length: f64,
    slit_width: f64,
    fiber_core_diameter: f64,
}

impl DetectionGeometry {
    pub fn new(focal_length: f64, slit_width: f64, fiber_core_diameter: f64) -> Result<Self, OpticsError> {
        for (name, value) in [
            ("focal_length", focal_length),
            ("slit_width", slit_width),
            ("fiber_core_diameter", fiber_core_diameter),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(OpticsError::InvalidGeometry { name, value });
            }
        }
        Ok(Self {
            focal_length,
            slit_width,
            fiber_core_diameter,
        })
    }

    pub fn focal_length(&self) -> f64 {
        self.focal_length
    }

    pub fn slit_width(&self) -> f64 {
        self.slit_width
    }

    pub fn fiber_core_diameter(&self) -> f64 {
        self.fiber_core_diameter
    }
}

impl Default for DetectionGeometry {
    fn default() -> Self {
        Self {
            focal_length: DEFAULT_FOCAL_LENGTH,
            slit_width: DEFAULT_SLIT_WIDTH,
            fiber_core_diameter: DEFAULT_FIBER_CORE,
        }
    }
}

/// Transverse momentum imaged to position `x` in the focal plane.
pub fn far_field_map(x: f64, geometry: &DetectionGeometry, k: f64) -> f64 {
    k * x / geometry.focal_length
}

/// Far-field coincidence density at detector position `x1`, per unit
/// detector position `x2`.
pub fn far_field_coincidence(
    state: &SpdcBiphoton,
    geometry: &DetectionGeometry,
    x1: f64,
    x2_grid: &[f64],
) -> Result<DensitySamples, OpticsError> {
    let k = state.wavenumber();
    let scale = k / geometry.focal_length;
    let q_axis: Vec<f64> = x2_grid.iter().map(|&x| far_field_map(x, geometry, k)).collect();
    let profile = ConditionalProfile::new(&(*state).into(), Representation::Momentum, scale * x1);
    let density: Vec<f64> = profile
        .sample(&q_axis, &QuadratureSpec::default())?
        .into_iter()
        .map(|d| d * scale)
        .collect();
    Ok(DensitySamples::new(
        x2_grid.to_vec(),
        density,
        Representation::Momentum,
        AxisUnit::Meter,
        x1,
    )?)
}

/// Near-field coincidence density at `x1` in the crystal plane.
pub fn near_field_coincidence(state: &SpdcBiphoton, x1: f64, x2_grid: &[f64]) -> Result<DensitySamples, OpticsError> {
    let profile = ConditionalProfile::new(&(*state).into(), Representation::Position, x1);
    let density = profile.sample(x2_grid, &QuadratureSpec::default())?;
    Ok(DensitySamples::new(
        x2_grid.to_vec(),
        density,
        Representation::Position,
        AxisUnit::Meter,
        x1,
    )?)
}

/// Uniform detector grid of `n` points covering the far-field conditional
/// density at `x1`.
pub fn far_field_axis(
    state: &SpdcBiphoton,
    geometry: &DetectionGeometry,
    x1: f64,
    n: usize,
) -> Result<Vec<f64>, OpticsError> {
    let st: BiphotonState = (*state).into();
    let to_x = geometry.focal_length / state.wavenumber();
    let q1 = far_field_map(x1, geometry, state.wavenumber());
    let profile = ConditionalProfile::new(&st, Representation::Momentum, q1);
    let center = profile.mean(&QuadratureSpec::default())? * to_x;
    let halfwidth = distributions::default_halfwidth(&st, Representation::Momentum, q1) * to_x;
    Ok(distributions::uniform_grid(center, halfwidth, n))
}

/// Uniform crystal-plane grid of `n` points covering the near-field
/// conditional density at `x1`.
pub fn near_field_axis(state: &SpdcBiphoton, x1: f64, n: usize) -> Result<Vec<f64>, OpticsError> {
    let st: BiphotonState = (*state).into();
    let profile = ConditionalProfile::new(&st, Representation::Position, x1);
    let center = profile.mean(&QuadratureSpec::default())?;
    let halfwidth = distributions::default_halfwidth(&st, Representation::Position, x1);
    Ok(distributions::uniform_grid(center, halfwidth, n))
}

/// Convolves with a unit-area top-hat of width `aperture_width` and
/// renormalizes on the same grid.
///
/// The kernel weight of each grid offset is the overlap of its cell with the
/// aperture, so apertures narrower than a cell act as the identity.
pub fn aperture_convolve(density: &DensitySamples, aperture_width: f64) -> Result<DensitySamples, OpticsError> {
    if !(aperture_width >= 0.0 && aperture_width.is_finite()) {
        return Err(OpticsError::InvalidAperture(aperture_width));
    }
    if aperture_width == 0.0 {
        return Ok(density.clone());
    }
    let h = density.spacing();
    let half = 0.5 * aperture_width / h;
    let reach = (half + 0.5).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * reach)
        .map(|i| {
            let j = i as f64 - reach as f64;
            let overlap = ((j + 0.5).min(half) - (j - 0.5).max(-half)).max(0.0);
            overlap / (2.0 * half)
        })
        .collect();
    let src = density.density();
    let n = src.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(n - 1);
        *o = (lo..=hi).map(|m| kernel[m + reach - i] * src[m]).sum();
    }
    let mass = trapezoid(&out, h);
    out.iter_mut().for_each(|v| *v /= mass);
    Ok(DensitySamples::new(
        density.axis().to_vec(),
        out,
        density.representation(),
        density.axis_unit(),
        density.fixed_conjugate_value(),
    )?)
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Near-field density of a single displaced crystal plane.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DisplacedProfile {
    x1: f64,
    b: f64,
    beta: f64,
    pump_rate: f64,
    width: f64,
}

impl DisplacedProfile {
    pub fn new(state: &SpdcBiphoton, z: f64, x1: f64) -> Result<Self, OpticsError> {
        let limit = state.crystal_length();
        if !(z.abs() <= limit) {
            return Err(OpticsError::DisplacementOutOfRange { z, limit });
        }
        let beta = z / (4.0 * state.wavenumber());
        let a = Complex64::new(0.25 * state.pump_waist().powi(2), beta);
        // |pump|² = exp(-σ² Re(1/a)/2) with σ = (x₁ + x₂)/2
        let pump_rate = a.inv().re;
        Ok(Self {
            x1,
            b: state.b(),
            beta,
            pump_rate,
            width: 2.0 / pump_rate.sqrt(),
        })
    }

    /// Phase-matching factor in units of its `z = 0` value `iπ·sint`, so it
    /// reduces to `sint(ρ²/(4b))` for an undisplaced crystal.
    pub fn phase_matching(&self, rho: f64) -> Complex64 {
        // keeps the diagonal finite at the crystal face; ln ρ stays defined
        let rho = rho.abs().max(f64::MIN_POSITIVE);
        let (ta, tb) = (self.beta - self.b, self.beta + self.b);
        let (re, im) = if ta > 0.0 {
            positive_piece(rho, ta, tb)
        } else if tb < 0.0 {
            let (re, im) = positive_piece(rho, -tb, -ta);
            (-re, im)
        } else {
            // principal value across τ = 0: ∫_{w}^{∞} e^{iv}/v dv per side
            let mut re = 0.0;
            let mut im = 0.0;
            match (ta < 0.0, tb > 0.0) {
                (true, true) => {
                    re = ci_difference(rho, -ta, tb);
                    im = PI - si(rho, -ta) - si(rho, tb);
                }
                (false, true) => {
                    re = -ci(rho, tb);
                    im = FRAC_PI_2 - si(rho, tb);
                }
                (true, false) => {
                    re = ci(rho, -ta);
                    im = FRAC_PI_2 - si(rho, -ta);
                }
                (false, false) => {}
            }
            (re, im)
        };
        Complex64::new(im, -re) / PI
    }

    fn pump(&self, x2: f64) -> f64 {
        let sigma = 0.5 * (self.x1 + x2);
        (-0.5 * sigma * sigma * self.pump_rate).exp()
    }
}

/// `∫_{ta}^{tb} e^{iρ²/(4τ)}/τ dτ` for `0 < ta < tb`, as (re, im).
fn positive_piece(rho: f64, ta: f64, tb: f64) -> (f64, f64) {
    (ci_difference(rho, ta, tb), si(rho, ta) - si(rho, tb))
}

fn w_of(rho: f64, t: f64) -> f64 {
    rho * rho / (4.0 * t)
}

fn si(rho: f64, t: f64) -> f64 {
    specfun::sine_integral(w_of(rho, t))
}

/// `Ci(ρ²/(4t))`, through logarithms so a vanishing ρ stays finite.
fn ci(rho: f64, t: f64) -> f64 {
    let w = w_of(rho, t);
    if w >= 1.0 {
        specfun::cosine_integral(w)
    } else {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        EULER_GAMMA + 2.0 * rho.ln() - (4.0 * t).ln() - specfun::cin(w)
    }
}

/// `Ci(ρ²/(4ta)) - Ci(ρ²/(4tb))`, finite at ρ = 0.
fn ci_difference(rho: f64, ta: f64, tb: f64) -> f64 {
    let (wa, wb) = (w_of(rho, ta), w_of(rho, tb));
    if wa.min(wb) >= 1.0 {
        specfun::cosine_integral(wa) - specfun::cosine_integral(wb)
    } else {
        (tb / ta).ln() - specfun::cin(wa) + specfun::cin(wb)
    }
}

impl LineProfile for DisplacedProfile {
    fn center(&self) -> f64 {
        -self.x1
    }

    fn width(&self) -> f64 {
        self.width
    }

    fn density(&self, x2: f64) -> f64 {
        let rho = 0.5 * (self.x1 - x2);
        self.pump(x2) * self.phase_matching(rho).norm_sqr()
    }

    fn nodes(&self, lo: f64, hi: f64) -> Vec<f64> {
        // the diagonal, plus the oscillation nodes ρ²/(4|τ|) = nπ of each
        // transform endpoint; ρ = |x₁ - x₂|/2
        let mut out = Vec::new();
        if (lo..=hi).contains(&self.x1) {
            out.push(self.x1);
        }
        for t in [self.beta - self.b, self.beta + self.b] {
            if t.abs() >= NODE_ENDPOINT_FRACTION * self.b {
                out.extend(symmetric_nodes(self.x1, 4.0 * (t.abs() * PI).sqrt(), 0.0, lo, hi));
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `|G| ≤ 16 max|τ|/ρ²` by parts, and in the tails ρ is at least the
    /// distance from the diagonal to the truncation window.
    fn tail_amplitude(&self, spec: &QuadratureSpec) -> f64 {
        let reach = spec.truncation_radius_factor * self.width;
        let rho_min = 0.5 * (reach - 2.0 * self.x1.abs());
        if rho_min <= 0.0 {
            return f64::INFINITY;
        }
        let tau_max = self.beta.abs() + self.b;
        (16.0 * tau_max / (PI * rho_min * rho_min)).powi(2)
    }
}

/// Near-field conditional density at `x1` for a crystal displaced by `z`.
///
/// Point samples are used where they resolve the density; at and very near
/// the crystal face, where the diagonal is log-singular, the samples are
/// cell averages instead.
pub fn displaced_near_field(
    state: &SpdcBiphoton,
    z: f64,
    x1: f64,
    x2_grid: &[f64],
) -> Result<DensitySamples, OpticsError> {
    check_uniform(x2_grid)?;
    let profile = DisplacedProfile::new(state, z, x1)?;
    let spec = QuadratureSpec::default();
    let build = |density| DensitySamples::new(x2_grid.to_vec(), density, Representation::Position, AxisUnit::Meter, x1);
    match build(profile.sample(x2_grid, &spec)?) {
        Err(DistributionError::UnderResolved { .. } | DistributionError::NegativeDensity) => {
            Ok(build(profile.cell_averages(x2_grid, &spec)?)?)
        }
        other => Ok(other?),
    }
}

/// Variance of [`displaced_near_field`]'s continuum density by direct
/// second-moment quadrature.
pub fn displaced_conditional_variance(state: &SpdcBiphoton, z: f64, x1: f64) -> Result<f64, OpticsError> {
    Ok(DisplacedProfile::new(state, z, x1)?.variance(&QuadratureSpec::default())?)
}

/// Uniform grid of `n` points covering the displaced near-field density.
pub fn displaced_axis(state: &SpdcBiphoton, z: f64, x1: f64, n: usize) -> Result<Vec<f64>, OpticsError> {
    let profile = DisplacedProfile::new(state, z, x1)?;
    let spec = QuadratureSpec::default();
    let center = if x1 == 0.0 {
        0.0
    } else {
        profile.to_physical(profile.moment(1, &spec)? / profile.moment(0, &spec)?)
    };
    Ok(distributions::uniform_grid(
        center,
        distributions::DEFAULT_HALFWIDTH_FACTOR * profile.width(),
        n,
    ))
}
