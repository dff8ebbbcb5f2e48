//! Schmidt numbers: closed forms for Gaussian states and a numerical
//! spectrum from the singular values of the discretized momentum kernel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::states::{BiphotonState, Representation};

/// Smallest grid accepted by [`schmidt_spectrum`].
pub const MIN_POINTS: usize = 256;
/// Largest grid the doubling test will try.
pub const MAX_POINTS: usize = 4096;
/// Relative change in K below which two resolutions count as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;
/// Grid half-width in units of the wider ± natural width.
pub const HALFWIDTH_FACTOR: f64 = 8.0;
/// Cells per natural width of the narrower ± factor for the auto grid;
/// midpoint sums of the Gaussian ridge converge spectrally past one cell.
const CELLS_PER_WIDTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchmidtError {
    #[error("P must be positive and finite (got {0})")]
    InvalidP(f64),
    #[error("grid needs an even point count ≥ {MIN_POINTS} and a positive half-width (got {n_points}, {halfwidth})")]
    InvalidGrid { n_points: usize, halfwidth: f64 },
    #[error("Schmidt number not converged at n = {n_points}: K changed from {k_coarse} to {k_fine}")]
    NonConvergence { n_points: usize, k_coarse: f64, k_fine: f64 },
    #[error("kernel vanishes on the grid")]
    EmptyKernel,
}

/// `K = ¼(1/P + P)²` for a two-dimensional Gaussian state.
pub fn k_gaussian_2d(p: f64) -> Result<f64, SchmidtError> {
    Ok(k_gaussian_1d(p)?.powi(2))
}

/// Per-direction Gaussian Schmidt number `½(1/P + P)`.
pub fn k_gaussian_1d(p: f64) -> Result<f64, SchmidtError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(SchmidtError::InvalidP(p));
    }
    Ok(0.5 * (1.0 / p + p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    coefficients: Vec<f64>,
    schmidt_number: f64,
    grid_points: usize,
    grid_halfwidth: f64,
}

impl SchmidtSpectrum {
    fn from_singular_values(mut s: Vec<f64>, grid_points: usize, grid_halfwidth: f64) -> Result<Self, SchmidtError> {
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s.iter().map(|v| v * v).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(SchmidtError::EmptyKernel);
        }
        let coefficients: Vec<f64> = s.iter().map(|v| v * v / total).collect();
        let purity: f64 = coefficients.iter().map(|l| l * l).sum();
        Ok(Self {
            coefficients,
            schmidt_number: 1.0 / purity,
            grid_points,
            grid_halfwidth,
        })
    }

    /// Schmidt coefficients λᵢ, descending, summing to one.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn schmidt_number(&self) -> f64 {
        self.schmidt_number
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    pub fn grid_halfwidth(&self) -> f64 {
        self.grid_halfwidth
    }
}

/// Default momentum grid half-width for the kernel of `state`.
pub fn default_halfwidth(state: &BiphotonState) -> f64 {
    let rep = Representation::Momentum;
    HALFWIDTH_FACTOR * state.sum_width(rep).max(state.difference_width(rep))
}

/// Starting grid size that puts a few cells across the narrower ± factor.
pub fn default_points(state: &BiphotonState, halfwidth: f64) -> usize {
    let rep = Representation::Momentum;
    let narrow = state.sum_width(rep).min(state.difference_width(rep));
    let wanted = (2.0 * halfwidth / narrow * CELLS_PER_WIDTH).ceil() as usize;
    wanted.clamp(MIN_POINTS, MAX_POINTS / 2).next_power_of_two()
}

/// Spectrum on a single `n_points × n_points` grid, no convergence test.
pub fn spectrum_at(state: &BiphotonState, n_points: usize, grid_halfwidth: f64) -> Result<SchmidtSpectrum, SchmidtError> {
    if n_points < MIN_POINTS || n_points % 2 != 0 || !(grid_halfwidth > 0.0 && grid_halfwidth.is_finite()) {
        return Err(SchmidtError::InvalidGrid {
            n_points,
            halfwidth: grid_halfwidth,
        });
    }
    let h = 2.0 * grid_halfwidth / n_points as f64;
    let q = |i: usize| -grid_halfwidth + (i as f64 + 0.5) * h;
    let kernel = |i: usize, j: usize| h * state.amplitude(Representation::Momentum, q(i), q(j));
    // The kernel is even under (q₁, q₂) → (−q₁, −q₂) and the grid is mirror
    // symmetric, so it is block diagonal in the parity basis (e ± ē)/√2.
    let half = n_points / 2;
    let mirror = |j: usize| n_points - 1 - j;
    let even = DMatrix::from_fn(half, half, |i, j| kernel(i, j) + kernel(i, mirror(j)));
    let odd = DMatrix::from_fn(half, half, |i, j| kernel(i, j) - kernel(i, mirror(j)));
    let mut s: Vec<f64> = even.singular_values().iter().copied().collect();
    s.extend(odd.singular_values().iter().copied());
    SchmidtSpectrum::from_singular_values(s, n_points, grid_halfwidth)
}

/// Spectrum of an arbitrary sampled kernel, with `grid_halfwidth` recorded
/// as given.
pub fn kernel_spectrum(kernel: &DMatrix<f64>, grid_halfwidth: f64) -> Result<SchmidtSpectrum, SchmidtError> {
    let s: Vec<f64> = kernel.singular_values().iter().copied().collect();
    SchmidtSpectrum::from_singular_values(s, kernel.nrows(), grid_halfwidth)
}

/// Spectrum starting at `n_points`, doubled until K changes by less than
/// [`CONVERGENCE_TOLERANCE`]; returns the finer of the last two spectra.
pub fn schmidt_spectrum(state: &BiphotonState, n_points: usize, grid_halfwidth: f64) -> Result<SchmidtSpectrum, SchmidtError> {
    let mut coarse = spectrum_at(state, n_points, grid_halfwidth)?;
    loop {
        let n = 2 * coarse.grid_points;
        if n > MAX_POINTS {
            return Err(SchmidtError::NonConvergence {
                n_points: coarse.grid_points,
                k_coarse: coarse.schmidt_number,
                k_fine: f64::NAN,
            });
        }
        let fine = spectrum_at(state, n, grid_halfwidth)?;
        let change = (fine.schmidt_number - coarse.schmidt_number).abs() / fine.schmidt_number;
        if change < CONVERGENCE_TOLERANCE {
            return Ok(fine);
        }
        if 2 * n > MAX_POINTS {
            return Err(SchmidtError::NonConvergence {
                n_points: n,
                k_coarse: coarse.schmidt_number,
                k_fine: fine.schmidt_number,
            });
        }
        coarse = fine;
    }
}

/// [`schmidt_spectrum`] on the default grid for `state`.
pub fn schmidt_spectrum_auto(state: &BiphotonState) -> Result<SchmidtSpectrum, SchmidtError> {
    let hw = default_halfwidth(state);
    schmidt_spectrum(state, default_points(state, hw), hw)
}
