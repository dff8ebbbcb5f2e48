//! The two pure biphoton families, in one transverse dimension.
//!
//! Every amplitude here factorizes as `S(u₁ + u₂) · D(u₁ - u₂)`, a "sum"
//! factor carrying the pump (or the σ₊ Gaussian) and a "difference" factor
//! carrying the phase matching (or the σ₋ Gaussian). The `*_factor` methods
//! expose that split to the modules that integrate over it.
//!
//! SPDC amplitudes are the two-dimensional forms sliced at zero orthogonal
//! coordinate, which is why the position-space phase-matching factor is
//! `sint` rather than a one-dimensional Fourier transform of `sinc`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::{sinc, sint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, StateError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(StateError::NonPositive { name, value })
    }
}

/// The complementary observable pair: transverse momentum and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Momentum,
    Position,
}

impl Representation {
    pub fn conjugate(self) -> Self {
        match self {
            Self::Momentum => Self::Position,
            Self::Position => Self::Momentum,
        }
    }

    /// Unit of a coordinate in this representation.
    pub fn unit(self) -> &'static str {
        match self {
            Self::Momentum => "1/m",
            Self::Position => "m",
        }
    }
}

/// Two-mode Gaussian state with sum/difference widths σ₊, σ₋ (in 1/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBiphoton {
    sigma_plus: f64,
    sigma_minus: f64,
}

impl GaussianBiphoton {
    pub fn new(sigma_plus: f64, sigma_minus: f64) -> Result<Self, StateError> {
        Ok(Self {
            sigma_plus: positive("sigma_plus", sigma_plus)?,
            sigma_minus: positive("sigma_minus", sigma_minus)?,
        })
    }

    /// The state with `σ₊/σ₋ = p` at the given σ₋.
    pub fn from_p(p: f64, sigma_minus: f64) -> Result<Self, StateError> {
        let p = positive("p", p)?;
        let sigma_minus = positive("sigma_minus", sigma_minus)?;
        Self::new(p * sigma_minus, sigma_minus)
    }

    pub fn sigma_plus(&self) -> f64 {
        self.sigma_plus
    }

    pub fn sigma_minus(&self) -> f64 {
        self.sigma_minus
    }

    pub fn p(&self) -> f64 {
        self.sigma_plus / self.sigma_minus
    }

    /// Closed-form `Δ²(q₂|q₁) = σ₊²σ₋²/(σ₊² + σ₋²)`, independent of q₁.
    pub fn momentum_conditional_variance(&self) -> f64 {
        let (a, b) = (self.sigma_plus.powi(2), self.sigma_minus.powi(2));
        a * b / (a + b)
    }

    /// Closed-form `Δ²(x₂|x₁) = 1/(σ₊² + σ₋²)`, independent of x₁.
    pub fn position_conditional_variance(&self) -> f64 {
        1.0 / (self.sigma_plus.powi(2) + self.sigma_minus.powi(2))
    }
}

/// SPDC spatial biphoton for a Gaussian pump of waist `c` and a crystal of
/// length `L`, with down-converted wavenumber `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdcBiphoton {
    pump_waist: f64,
    crystal_length: f64,
    wavenumber: f64,
}

impl SpdcBiphoton {
    pub fn new(pump_waist: f64, crystal_length: f64, wavenumber: f64) -> Result<Self, StateError> {
        Ok(Self {
            pump_waist: positive("pump_waist", pump_waist)?,
            crystal_length: positive("crystal_length", crystal_length)?,
            wavenumber: positive("wavenumber", wavenumber)?,
        })
    }

    /// Builds the state from laboratory values; `k = 2π/λ` with the vacuum
    /// wavelength of the down-converted photons.
    pub fn from_experiment(
        pump_waist: f64,
        crystal_length: f64,
        vacuum_wavelength: f64,
    ) -> Result<Self, StateError> {
        let lambda = positive("vacuum_wavelength", vacuum_wavelength)?;
        Self::new(pump_waist, crystal_length, 2.0 * PI / lambda)
    }

    /// The state with the given P at fixed crystal length and wavelength.
    pub fn with_p(p: f64, crystal_length: f64, vacuum_wavelength: f64) -> Result<Self, StateError> {
        let p = positive("p", p)?;
        let l = positive("crystal_length", crystal_length)?;
        let k = 2.0 * PI / positive("vacuum_wavelength", vacuum_wavelength)?;
        Self::new((l / (2.0 * k)).sqrt() / p, l, k)
    }

    pub fn pump_waist(&self) -> f64 {
        self.pump_waist
    }

    pub fn crystal_length(&self) -> f64 {
        self.crystal_length
    }

    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    /// Phase-matching coefficient `b = L/(8k)`, in m².
    pub fn b(&self) -> f64 {
        self.crystal_length / (8.0 * self.wavenumber)
    }

    /// `P = √(L/(2k)) / c`.
    pub fn p(&self) -> f64 {
        (self.crystal_length / (2.0 * self.wavenumber)).sqrt() / self.pump_waist
    }

    /// Pump angular spectrum `exp(-c²s²/4)`.
    pub fn pump_angular_spectrum(&self, s: f64) -> f64 {
        (-0.25 * (self.pump_waist * s).powi(2)).exp()
    }

    /// Phase matching `sinc(b d²)`.
    pub fn phase_matching(&self, d: f64) -> f64 {
        sinc(self.b() * d * d)
    }

    /// Pump field `exp(-y²/c²)` at the crystal plane.
    pub fn pump_profile(&self, y: f64) -> f64 {
        (-(y / self.pump_waist).powi(2)).exp()
    }

    /// Position-space phase matching `sint(y²/(4b))`.
    pub fn phase_matching_position(&self, y: f64) -> f64 {
        sint(y * y / (4.0 * self.b()))
    }
}

/// A pure biphoton state of either family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BiphotonState {
    Gaussian(GaussianBiphoton),
    Spdc(SpdcBiphoton),
}

impl From<GaussianBiphoton> for BiphotonState {
    fn from(g: GaussianBiphoton) -> Self {
        Self::Gaussian(g)
    }
}

impl From<SpdcBiphoton> for BiphotonState {
    fn from(s: SpdcBiphoton) -> Self {
        Self::Spdc(s)
    }
}

impl BiphotonState {
    pub fn p(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.p(),
            Self::Spdc(s) => s.p(),
        }
    }

    /// Factor of the amplitude depending on `u₁ + u₂`.
    pub fn sum_factor(&self, rep: Representation, s: f64) -> f64 {
        match (self, rep) {
            (Self::Gaussian(g), Representation::Momentum) => {
                (-s * s / (4.0 * g.sigma_plus.powi(2))).exp()
            }
            (Self::Gaussian(g), Representation::Position) => {
                (-(g.sigma_plus * s).powi(2) / 4.0).exp()
            }
            (Self::Spdc(st), Representation::Momentum) => st.pump_angular_spectrum(s),
            (Self::Spdc(st), Representation::Position) => st.pump_profile(0.5 * s),
        }
    }

    /// Factor of the amplitude depending on `u₁ - u₂`.
    pub fn difference_factor(&self, rep: Representation, d: f64) -> f64 {
        match (self, rep) {
            (Self::Gaussian(g), Representation::Momentum) => {
                (-d * d / (4.0 * g.sigma_minus.powi(2))).exp()
            }
            (Self::Gaussian(g), Representation::Position) => {
                (-(g.sigma_minus * d).powi(2) / 4.0).exp()
            }
            (Self::Spdc(st), Representation::Momentum) => st.phase_matching(d),
            (Self::Spdc(st), Representation::Position) => st.phase_matching_position(0.5 * d),
        }
    }

    /// Unnormalized real amplitude in the given representation.
    pub fn amplitude(&self, rep: Representation, u1: f64, u2: f64) -> f64 {
        self.sum_factor(rep, u1 + u2) * self.difference_factor(rep, u1 - u2)
    }

    /// Standard deviation of `|sum_factor|²` along its argument.
    pub fn sum_width(&self, rep: Representation) -> f64 {
        match (self, rep) {
            (Self::Gaussian(g), Representation::Momentum) => g.sigma_plus,
            (Self::Gaussian(g), Representation::Position) => 1.0 / g.sigma_plus,
            (Self::Spdc(st), Representation::Momentum) => 1.0 / st.pump_waist,
            (Self::Spdc(st), Representation::Position) => st.pump_waist,
        }
    }

    /// Characteristic width of `|difference_factor|²` along its argument: the
    /// standard deviation for Gaussians, the first node for SPDC.
    pub fn difference_width(&self, rep: Representation) -> f64 {
        match (self, rep) {
            (Self::Gaussian(g), Representation::Momentum) => g.sigma_minus,
            (Self::Gaussian(g), Representation::Position) => 1.0 / g.sigma_minus,
            (Self::Spdc(st), Representation::Momentum) => (PI / st.b()).sqrt(),
            // sint(d²/(16b)) has its first node near d²/(16b) ≈ 0.6π
            (Self::Spdc(st), Representation::Position) => 4.0 * (st.b() * PI).sqrt(),
        }
    }
}

/// Laboratory constructor: pump waist, crystal length, vacuum wavelength.
pub fn spdc_from_experiment(
    pump_waist: f64,
    crystal_length: f64,
    vacuum_wavelength: f64,
) -> Result<SpdcBiphoton, StateError> {
    SpdcBiphoton::from_experiment(pump_waist, crystal_length, vacuum_wavelength)
}

/// The dimensionless knob P of either family.
pub fn p_param(state: &BiphotonState) -> f64 {
    state.p()
}

pub fn momentum_amplitude(state: &BiphotonState, q1: f64, q2: f64) -> f64 {
    state.amplitude(Representation::Momentum, q1, q2)
}

pub fn position_amplitude(state: &BiphotonState, x1: f64, x2: f64) -> f64 {
    state.amplitude(Representation::Position, x1, x2)
}
