//! The witness `W = Δ²(q₂|q₁=0)·Δ²(x₂|x₁=0)`, P sweeps, and the P interval
//! on which an SPDC family violates the Gaussian bound.
//!
//! `W` uses conditionals at `u₁ = 0`, which is what a coincidence scan with
//! one detector parked at the center measures. For Gaussian states this
//! equals the inferred-variance product; for SPDC states it does not, and
//! [`crate::distributions::inferred_variance`] is the quantity to use if the
//! full average over `u₁` is wanted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{self, DistributionError};
use crate::schmidt::{self, SchmidtError};
use crate::specfun::QuadratureSpec;
use crate::states::{BiphotonState, GaussianBiphoton, Representation, SpdcBiphoton, StateError};

/// Largest `W` any pure Gaussian state can reach.
pub const GAUSSIAN_BOUND: f64 = 0.25;
/// Relative agreement required between closed-form and quadrature
/// variances for Gaussian states.
pub const GAUSSIAN_CROSS_CHECK: f64 = 1e-6;
/// Coarse bracketing grid for [`violation_interval`].
pub const INTERVAL_SCAN: (f64, f64, f64) = (0.05, 5.0, 0.05);
/// Bisection stops once the bracket is this narrow in P.
pub const INTERVAL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WitnessError {
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Schmidt(#[from] SchmidtError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("closed-form variance {closed} disagrees with quadrature {numeric}")]
    GaussianCrossCheck { closed: f64, numeric: f64 },
    #[error("sweep needs 0 < p_min < p_max and at least 2 steps (got {p_min}, {p_max}, {steps})")]
    InvalidSweep { p_min: f64, p_max: f64, steps: usize },
    #[error("W - 1/4 does not change sign twice on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessResult {
    pub p: f64,
    pub var_q_given_0: f64,
    pub var_x_given_0: f64,
    pub w: f64,
    pub w_uncertainty: Option<f64>,
    pub gaussian_bound_violated: bool,
}

impl WitnessResult {
    pub fn new(p: f64, var_q_given_0: f64, var_x_given_0: f64) -> Self {
        let w = var_q_given_0 * var_x_given_0;
        Self {
            p,
            var_q_given_0,
            var_x_given_0,
            w,
            w_uncertainty: None,
            gaussian_bound_violated: w > GAUSSIAN_BOUND,
        }
    }

    pub fn with_uncertainty(mut self, sigma: f64) -> Self {
        self.w_uncertainty = Some(sigma);
        self
    }
}

pub fn evaluate_witness(state: &BiphotonState) -> Result<WitnessResult, WitnessError> {
    evaluate_witness_with(state, &QuadratureSpec::default())
}

pub fn evaluate_witness_with(state: &BiphotonState, spec: &QuadratureSpec) -> Result<WitnessResult, WitnessError> {
    let numeric = |rep| distributions::conditional_variance_with(state, rep, 0.0, spec);
    let (vq, vx) = match state {
        BiphotonState::Gaussian(g) => {
            let vq = g.momentum_conditional_variance();
            let vx = g.position_conditional_variance();
            for (closed, rep) in [(vq, Representation::Momentum), (vx, Representation::Position)] {
                let n = numeric(rep)?;
                if ((n - closed) / closed).abs() > GAUSSIAN_CROSS_CHECK {
                    return Err(WitnessError::GaussianCrossCheck { closed, numeric: n });
                }
            }
            (vq, vx)
        }
        BiphotonState::Spdc(_) => (numeric(Representation::Momentum)?, numeric(Representation::Position)?),
    };
    Ok(WitnessResult::new(state.p(), vq, vx))
}

/// A one-parameter family of states indexed by P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Gaussian states with fixed σ₋ and σ₊ = P·σ₋.
    Gaussian { sigma_minus: f64 },
    /// SPDC states at fixed crystal length and vacuum wavelength, with the
    /// pump waist chosen to give P.
    Spdc { crystal_length: f64, wavelength: f64 },
}

impl Family {
    pub fn state_at(&self, p: f64) -> Result<BiphotonState, StateError> {
        Ok(match *self {
            Family::Gaussian { sigma_minus } => GaussianBiphoton::from_p(p, sigma_minus)?.into(),
            Family::Spdc {
                crystal_length,
                wavelength,
            } => SpdcBiphoton::with_p(p, crystal_length, wavelength)?.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub k_1d: Option<f64>,
    pub w: Option<f64>,
    pub error: Option<String>,
}

/// Geometrically spaced P values from `p_min` to `p_max` inclusive, so that
/// P and 1/P land on the grid together when the range is symmetric.
pub fn p_grid(p_min: f64, p_max: f64, steps: usize) -> Result<Vec<f64>, WitnessError> {
    if !(p_min > 0.0 && p_max > p_min && p_max.is_finite()) || steps < 2 {
        return Err(WitnessError::InvalidSweep { p_min, p_max, steps });
    }
    let ratio = (p_max / p_min).ln() / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| match i {
            0 => p_min,
            i if i == steps - 1 => p_max,
            i => p_min * (ratio * i as f64).exp(),
        })
        .collect())
}

/// K and W at each P; a failing row records its error and the sweep goes on.
/// Rows run in parallel and come back ordered by P.
pub fn sweep(family: &Family, p_min: f64, p_max: f64, steps: usize) -> Result<Vec<SweepRow>, WitnessError> {
    let grid = p_grid(p_min, p_max, steps)?;
    Ok(grid.into_par_iter().map(|p| sweep_row(family, p)).collect())
}

fn sweep_row(family: &Family, p: f64) -> SweepRow {
    let result = (|| -> Result<(f64, f64), WitnessError> {
        let state = family.state_at(p)?;
        let k = match family {
            Family::Gaussian { .. } => schmidt::k_gaussian_1d(p)?,
            Family::Spdc { .. } => schmidt::schmidt_spectrum_auto(&state)?.schmidt_number(),
        };
        Ok((k, evaluate_witness(&state)?.w))
    })();
    match result {
        Ok((k, w)) => SweepRow {
            p,
            k_1d: Some(k),
            w: Some(w),
            error: None,
        },
        Err(e) => SweepRow {
            p,
            k_1d: None,
            w: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationInterval {
    pub p_low: f64,
    pub p_high: f64,
}

/// `W(P) - 1/4` for a family.
pub fn excess(family: &Family, p: f64) -> Result<f64, WitnessError> {
    Ok(evaluate_witness(&family.state_at(p)?)?.w - GAUSSIAN_BOUND)
}

/// Brackets the first upward and the last downward crossing of the bound on
/// a coarse P grid, then bisects each to [`INTERVAL_TOLERANCE`].
pub fn violation_interval(family: &Family) -> Result<ViolationInterval, WitnessError> {
    let (lo, hi, step) = INTERVAL_SCAN;
    let n = ((hi - lo) / step).round() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let values = grid
        .par_iter()
        .map(|&p| excess(family, p))
        .collect::<Result<Vec<f64>, _>>()?;

    let up = (1..n).find(|&i| values[i - 1] <= 0.0 && values[i] > 0.0);
    let down = (1..n).rev().find(|&i| values[i - 1] > 0.0 && values[i] <= 0.0);
    let (Some(up), Some(down)) = (up, down) else {
        return Err(WitnessError::NoSignChange { lo, hi });
    };
    let p_low = bisect(family, grid[up - 1], grid[up])?;
    let p_high = bisect(family, grid[down - 1], grid[down])?;
    Ok(ViolationInterval { p_low, p_high })
}

fn bisect(family: &Family, mut a: f64, mut b: f64) -> Result<f64, WitnessError> {
    let mut fa = excess(family, a)?;
    while b - a > INTERVAL_TOLERANCE {
        let m = 0.5 * (a + b);
        let fm = excess(family, m)?;
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
