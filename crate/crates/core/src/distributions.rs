//! Conditional and inferred densities and variances.
//!
//! All integrals run in a scaled coordinate `t = (u₂ - center)/width`, where
//! `center`/`width` describe the Gaussian envelope that bounds the density.
//! The envelope is the pump (or σ₊) factor for SPDC and the exact conditional
//! Gaussian for the Gaussian family; it fixes the truncation window and the
//! analytic tail bound. Phase-matching nodes are seeded as panel breakpoints.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::{self, GaussianEnvelope, QuadratureError, QuadratureSpec};
use crate::states::{BiphotonState, Representation, StateError};

/// Largest probability mass a sample grid may leave outside itself.
pub const MAX_OUTSIDE_MASS: f64 = 1e-6;
/// Allowed deviation of a density's trapezoidal integral from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;
/// Default number of grid points for emitted densities.
pub const DEFAULT_POINTS: usize = 4096;
/// Minimum grid size accepted by [`conditional_density`].
pub const MIN_POINTS: usize = 64;
/// Default grid half-width in envelope widths.
pub const DEFAULT_HALFWIDTH_FACTOR: f64 = 10.0;
const MAX_POINTS: usize = 1 << 20;
/// Extent of the phase-matching tail kept by [`inferred_variance`], in
/// units of the phase-matching width. The discarded mass falls off as the
/// inverse cube of this.
const DIFFERENCE_TAIL_FACTOR: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("grid needs at least {MIN_POINTS} points and a positive half-width (got {n_points}, {halfwidth})")]
    InvalidGrid { n_points: usize, halfwidth: f64 },
    #[error("axis must be uniform and strictly increasing")]
    NonUniformAxis,
    #[error("axis and density lengths differ ({axis} vs {density})")]
    LengthMismatch { axis: usize, density: usize },
    #[error("density must be finite and non-negative")]
    NegativeDensity,
    #[error("{outside:e} of the probability mass lies outside the grid")]
    TailMass { outside: f64 },
    #[error("trapezoidal mass {mass} deviates from 1; grid under-resolves the density")]
    UnderResolved { mass: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Unit of a [`DensitySamples`] axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisUnit {
    Meter,
    InverseMeter,
}

impl AxisUnit {
    pub fn of(rep: Representation) -> Self {
        match rep {
            Representation::Momentum => Self::InverseMeter,
            Representation::Position => Self::Meter,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Self::Meter => "m",
            Self::InverseMeter => "per_m",
        }
    }
}

/// A normalized one-dimensional density on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySamples {
    axis: Vec<f64>,
    density: Vec<f64>,
    representation: Representation,
    axis_unit: AxisUnit,
    fixed_conjugate_value: f64,
}

impl DensitySamples {
    /// Validates the grid and the normalization.
    pub fn new(
        axis: Vec<f64>,
        density: Vec<f64>,
        representation: Representation,
        axis_unit: AxisUnit,
        fixed_conjugate_value: f64,
    ) -> Result<Self, DistributionError> {
        if axis.len() != density.len() {
            return Err(DistributionError::LengthMismatch {
                axis: axis.len(),
                density: density.len(),
            });
        }
        check_uniform(&axis)?;
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(DistributionError::NegativeDensity);
        }
        let samples = Self {
            axis,
            density,
            representation,
            axis_unit,
            fixed_conjugate_value,
        };
        let mass = samples.trapezoid_mass();
        if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistributionError::UnderResolved { mass });
        }
        Ok(samples)
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn axis_unit(&self) -> AxisUnit {
        self.axis_unit
    }

    pub fn fixed_conjugate_value(&self) -> f64 {
        self.fixed_conjugate_value
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.axis[self.axis.len() - 1] - self.axis[0]) / (self.axis.len() - 1) as f64
    }

    pub fn trapezoid_mass(&self) -> f64 {
        self.trapezoid_moment(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.trapezoid_moment(|x| x) / self.trapezoid_mass()
    }

    /// Second central moment by the trapezoidal rule.
    pub fn variance(&self) -> f64 {
        let mass = self.trapezoid_mass();
        let mean = self.trapezoid_moment(|x| x) / mass;
        self.trapezoid_moment(|x| (x - mean).powi(2)) / mass
    }

    pub fn peak(&self) -> (f64, f64) {
        self.axis
            .iter()
            .zip(&self.density)
            .fold((f64::NAN, f64::NEG_INFINITY), |best, (&x, &d)| {
                if d > best.1 {
                    (x, d)
                } else {
                    best
                }
            })
    }

    fn trapezoid_moment(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let n = self.axis.len();
        let h = self.spacing();
        let inner: f64 = (1..n - 1).map(|i| weight(self.axis[i]) * self.density[i]).sum();
        h * (inner
            + 0.5 * (weight(self.axis[0]) * self.density[0]
                + weight(self.axis[n - 1]) * self.density[n - 1]))
    }
}

pub(crate) fn check_uniform(axis: &[f64]) -> Result<(), DistributionError> {
    if axis.len() < 2 || axis.iter().any(|x| !x.is_finite()) {
        return Err(DistributionError::NonUniformAxis);
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(DistributionError::NonUniformAxis);
    }
    let uniform = axis
        .windows(2)
        .all(|w| w[1] > w[0] && ((w[1] - w[0]) - h).abs() <= 1e-6 * h);
    if uniform {
        Ok(())
    } else {
        Err(DistributionError::NonUniformAxis)
    }
}

/// Uniform grid of `n` points on `center ± halfwidth`.
pub fn uniform_grid(center: f64, halfwidth: f64, n: usize) -> Vec<f64> {
    let step = 2.0 * halfwidth / (n - 1) as f64;
    (0..n).map(|i| center - halfwidth + step * i as f64).collect()
}

/// Raw (unnormalized) moments `∫ t^k f dt`, k = 0, 1, 2, in the scaled
/// coordinate of a [`ConditionalProfile`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaledMoments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl ScaledMoments {
    pub fn mean(&self) -> f64 {
        self.m1 / self.m0
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        (self.m2 / self.m0 - mean * mean).max(0.0)
    }
}

/// `|amplitude(u₁, u₂)|²` as a function of u₂ at fixed u₁, together with the
/// envelope and node structure needed to integrate it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConditionalProfile {
    state: BiphotonState,
    rep: Representation,
    u1: f64,
    center: f64,
    width: f64,
}

impl ConditionalProfile {
    pub fn new(state: &BiphotonState, rep: Representation, u1: f64) -> Self {
        let (center, width) = match state {
            BiphotonState::Gaussian(_) => {
                // product of N(-u₁, w₊²) and N(u₁, w₋²) in u₂
                let wp2 = state.sum_width(rep).powi(2);
                let wm2 = state.difference_width(rep).powi(2);
                let mean = u1 * (wp2 - wm2) / (wp2 + wm2);
                (mean, (wp2 * wm2 / (wp2 + wm2)).sqrt())
            }
            BiphotonState::Spdc(_) => (-u1, state.sum_width(rep)),
        };
        Self {
            state: *state,
            rep,
            u1,
            center,
            width,
        }
    }

    /// Physical mean of the conditional density; exact zero at u₁ = 0 where
    /// the density is even.
    pub fn mean(&self, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
        match self.state {
            BiphotonState::Gaussian(_) => Ok(self.center),
            BiphotonState::Spdc(_) if self.u1 == 0.0 => Ok(0.0),
            BiphotonState::Spdc(_) => {
                let m0 = self.moment(0, spec)?;
                let m1 = self.moment(1, spec)?;
                Ok(self.to_physical(m1 / m0))
            }
        }
    }
}

impl LineProfile for ConditionalProfile {
    fn center(&self) -> f64 {
        self.center
    }

    fn width(&self) -> f64 {
        self.width
    }

    fn density(&self, u2: f64) -> f64 {
        self.state.amplitude(self.rep, self.u1, u2).powi(2)
    }

    fn nodes(&self, lo: f64, hi: f64) -> Vec<f64> {
        let BiphotonState::Spdc(spdc) = self.state else {
            return Vec::new();
        };
        match self.rep {
            // sinc(b d²) = 0 at b d² = nπ
            Representation::Momentum => symmetric_nodes(self.u1, (PI / spdc.b()).sqrt(), 0.0, lo, hi),
            // sint(d²/(16b)) oscillates with nodes near d²/(16b) = (n + ½)π
            Representation::Position => symmetric_nodes(self.u1, 4.0 * (spdc.b() * PI).sqrt(), 0.5, lo, hi),
        }
    }
}

/// Points `u₁ ± scale·√(n + offset)` (n ≥ 0, or n ≥ 1 when offset is 0)
/// together with `u₁` itself, restricted to `[lo, hi]`.
pub(crate) fn symmetric_nodes(u1: f64, scale: f64, offset: f64, lo: f64, hi: f64) -> Vec<f64> {
    let d_lo = u1 - hi;
    let d_hi = u1 - lo;
    let straddles = d_lo <= 0.0 && d_hi >= 0.0;
    let abs_max = d_lo.abs().max(d_hi.abs());
    let abs_min = if straddles { 0.0 } else { d_lo.abs().min(d_hi.abs()) };
    let first_index = if offset > 0.0 { 0.0 } else { 1.0 };
    let n_first = ((abs_min / scale).powi(2) - offset).ceil().max(first_index);
    let n_last = ((abs_max / scale).powi(2) - offset).floor();
    let mut out = Vec::new();
    if straddles {
        out.push(u1);
    }
    if n_last >= n_first {
        let count = (n_last - n_first) as usize + 1;
        out.reserve(2 * count);
        for i in 0..count {
            let d = scale * (n_first + i as f64 + offset).sqrt();
            for u2 in [u1 - d, u1 + d] {
                if u2 >= lo && u2 <= hi {
                    out.push(u2);
                }
            }
        }
    }
    out
}

/// A non-negative density on the line, bounded by `tail_amplitude` times a
/// unit Gaussian envelope in the scaled coordinate `t = (u - center)/width`
/// beyond the truncation radius.
pub(crate) trait LineProfile {
    fn center(&self) -> f64;
    fn width(&self) -> f64;
    fn density(&self, u: f64) -> f64;
    /// Panel breakpoints in `[lo, hi]`, physical coordinates.
    fn nodes(&self, lo: f64, hi: f64) -> Vec<f64>;

    fn tail_amplitude(&self, _spec: &QuadratureSpec) -> f64 {
        1.0
    }

    fn to_physical(&self, t: f64) -> f64 {
        self.center() + self.width() * t
    }

    fn to_scaled(&self, u: f64) -> f64 {
        (u - self.center()) / self.width()
    }

    fn scaled_density(&self, t: f64) -> f64 {
        self.density(self.to_physical(t))
    }

    fn scaled_nodes(&self, t_lo: f64, t_hi: f64) -> Vec<f64> {
        self.nodes(self.to_physical(t_lo), self.to_physical(t_hi))
            .into_iter()
            .map(|u| self.to_scaled(u))
            .collect()
    }

    /// `∫ t^k f(t) dt` over the whole line (truncated window).
    fn moment(&self, k: u32, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
        let env = GaussianEnvelope::new(0.0, 1.0)
            .with_power(k)
            .with_amplitude(self.tail_amplitude(spec));
        let r = spec.truncation_radius_factor;
        let nodes = self.scaled_nodes(-r, r);
        specfun::integrate_line(|t| t.powi(k as i32) * self.scaled_density(t), &env, &nodes, spec)
    }

    fn moments(&self, spec: &QuadratureSpec) -> Result<ScaledMoments, QuadratureError> {
        Ok(ScaledMoments {
            m0: self.moment(0, spec)?,
            m1: self.moment(1, spec)?,
            m2: self.moment(2, spec)?,
        })
    }

    /// Physical variance by direct second-moment quadrature.
    fn variance(&self, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
        Ok(self.moments(spec)?.variance() * self.width().powi(2))
    }

    /// `∫ f(t) dt` over a scaled interval.
    fn mass_between(&self, t_lo: f64, t_hi: f64, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
        let nodes = self.scaled_nodes(t_lo, t_hi);
        specfun::integrate_with_breakpoints(|t| self.scaled_density(t), t_lo, t_hi, &nodes, spec)
    }

    /// Physical normalization constant over the span of `axis`, after
    /// checking that the span holds all but [`MAX_OUTSIDE_MASS`] of the mass.
    fn grid_normalization(&self, axis: &[f64], spec: &QuadratureSpec) -> Result<f64, DistributionError> {
        check_uniform(axis)?;
        let (t_lo, t_hi) = (self.to_scaled(axis[0]), self.to_scaled(axis[axis.len() - 1]));
        let inside = self.mass_between(t_lo, t_hi, spec)?;
        let r = spec.truncation_radius_factor;
        let total = if t_lo <= -r && t_hi >= r {
            inside
        } else {
            // the grid may stick out of the window on one side
            let window = self.moment(0, spec)?;
            let extra_lo = if t_lo < -r { self.mass_between(t_lo, -r, spec)? } else { 0.0 };
            let extra_hi = if t_hi > r { self.mass_between(r, t_hi, spec)? } else { 0.0 };
            window + extra_lo + extra_hi
        };
        if !(total > 0.0) {
            return Err(DistributionError::TailMass { outside: 1.0 });
        }
        let outside = 1.0 - inside / total;
        if outside > MAX_OUTSIDE_MASS {
            return Err(DistributionError::TailMass { outside });
        }
        Ok(inside * self.width())
    }

    /// Normalized point samples on `axis`.
    fn sample(&self, axis: &[f64], spec: &QuadratureSpec) -> Result<Vec<f64>, DistributionError> {
        let z = self.grid_normalization(axis, spec)?;
        Ok(axis.iter().map(|&u| self.density(u) / z).collect())
    }

    /// Normalized averages over the cells centered on each axis point, for
    /// densities with integrable singularities that point samples miss.
    fn cell_averages(&self, axis: &[f64], spec: &QuadratureSpec) -> Result<Vec<f64>, DistributionError> {
        let z = self.grid_normalization(axis, spec)?;
        let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        axis.iter()
            .map(|&u| {
                let cell = self.mass_between(self.to_scaled(u - 0.5 * h), self.to_scaled(u + 0.5 * h), spec)?;
                Ok(cell * self.width() / (h * z))
            })
            .collect()
    }
}

/// Conditional density `P(u₂|u₁)` sampled on `n_points` across
/// `mean ± grid_halfwidth`.
pub fn conditional_density(
    state: &BiphotonState,
    rep: Representation,
    u1: f64,
    grid_halfwidth: f64,
    n_points: usize,
) -> Result<DensitySamples, DistributionError> {
    conditional_density_with(state, rep, u1, grid_halfwidth, n_points, &QuadratureSpec::default())
}

pub fn conditional_density_with(
    state: &BiphotonState,
    rep: Representation,
    u1: f64,
    grid_halfwidth: f64,
    n_points: usize,
    spec: &QuadratureSpec,
) -> Result<DensitySamples, DistributionError> {
    if n_points < MIN_POINTS || !(grid_halfwidth > 0.0 && grid_halfwidth.is_finite()) {
        return Err(DistributionError::InvalidGrid {
            n_points,
            halfwidth: grid_halfwidth,
        });
    }
    let profile = ConditionalProfile::new(state, rep, u1);
    let center = profile.mean(spec)?;
    let axis = uniform_grid(center, grid_halfwidth, n_points);
    let density = profile.sample(&axis, spec)?;
    DensitySamples::new(axis, density, rep, AxisUnit::of(rep), u1)
}

/// Default half-width for emitted conditional densities.
pub fn default_halfwidth(state: &BiphotonState, rep: Representation, u1: f64) -> f64 {
    DEFAULT_HALFWIDTH_FACTOR * ConditionalProfile::new(state, rep, u1).width()
}

/// [`conditional_density`] on the default grid, doubling the point count
/// from [`DEFAULT_POINTS`] until the samples resolve the density.
pub fn conditional_density_auto(
    state: &BiphotonState,
    rep: Representation,
    u1: f64,
    spec: &QuadratureSpec,
) -> Result<DensitySamples, DistributionError> {
    let halfwidth = default_halfwidth(state, rep, u1);
    with_doubling(DEFAULT_POINTS, |n| {
        conditional_density_with(state, rep, u1, halfwidth, n, spec)
    })
}

pub(crate) fn with_doubling<T>(
    start: usize,
    mut attempt: impl FnMut(usize) -> Result<T, DistributionError>,
) -> Result<T, DistributionError> {
    let mut n = start;
    loop {
        match attempt(n) {
            Err(DistributionError::UnderResolved { .. }) if 2 * n - 1 <= MAX_POINTS => n = 2 * n - 1,
            other => return other,
        }
    }
}

/// `Δ²(u₂|u₁)` by direct second-moment quadrature.
pub fn conditional_variance(
    state: &BiphotonState,
    rep: Representation,
    u1: f64,
) -> Result<f64, DistributionError> {
    conditional_variance_with(state, rep, u1, &QuadratureSpec::default())
}

pub fn conditional_variance_with(
    state: &BiphotonState,
    rep: Representation,
    u1: f64,
    spec: &QuadratureSpec,
) -> Result<f64, DistributionError> {
    let profile = ConditionalProfile::new(state, rep, u1);
    Ok(profile.variance(spec)?)
}

/// Inferred variance `∫ du₁ P(u₁) Δ²(u₂|u₁)` by nested quadrature.
pub fn inferred_variance(state: &BiphotonState, rep: Representation) -> Result<f64, DistributionError> {
    inferred_variance_with(state, rep, &QuadratureSpec::default())
}

pub fn inferred_variance_with(
    state: &BiphotonState,
    rep: Representation,
    spec: &QuadratureSpec,
) -> Result<f64, DistributionError> {
    let inner_spec = QuadratureSpec {
        relative_tolerance: spec.relative_tolerance * 1e-2,
        ..*spec
    };
    let w_sum = state.sum_width(rep);
    let w_diff = state.difference_width(rep);
    // u₁ = (s + d)/2 with s, d the sum and difference coordinates
    let halfwidth = match state {
        BiphotonState::Gaussian(_) => {
            0.5 * spec.truncation_radius_factor * (w_sum * w_sum + w_diff * w_diff).sqrt()
        }
        BiphotonState::Spdc(_) => {
            0.5 * (spec.truncation_radius_factor * w_sum + DIFFERENCE_TAIL_FACTOR * w_diff)
        }
    };
    // outer coordinate r = u₁/unit resolves the marginal's central peak
    let unit = 0.5 * w_sum.min(w_diff);
    let extent = halfwidth / unit;
    let mut breaks = vec![0.0];
    let mut r = 1.0;
    while r < extent {
        breaks.extend([-r, r]);
        r *= 2.0;
    }

    // both outer integrands share the inner moments; cache the last point.
    // Values stay in scaled units so the absolute tolerance is meaningful.
    let cache = std::cell::RefCell::new((f64::NAN, Ok((0.0, 0.0))));
    let width = ConditionalProfile::new(state, rep, 0.0).width();
    let inner = |u1: f64| -> Result<(f64, f64), QuadratureError> {
        let mut c = cache.borrow_mut();
        if c.0.to_bits() == u1.to_bits() {
            return c.1.clone();
        }
        let profile = ConditionalProfile::new(state, rep, u1);
        let result = profile
            .moments(&inner_spec)
            .map(|m| (m.m0, m.m0 * m.variance()));
        *c = (u1, result.clone());
        result
    };

    let failure = std::cell::RefCell::new(None);
    let component = |r: f64, pick: fn((f64, f64)) -> f64| match inner(r * unit) {
        Ok(v) => pick(v),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };

    let norm = specfun::integrate_with_breakpoints(|r| component(r, |v| v.0), -extent, extent, &breaks, spec);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e.into());
    }
    let weighted =
        specfun::integrate_with_breakpoints(|r| component(r, |v| v.1), -extent, extent, &breaks, spec);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e.into());
    }
    Ok(weighted? / norm? * width * width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{GaussianBiphoton, SpdcBiphoton};

    fn gauss(sp: f64, sm: f64) -> BiphotonState {
        GaussianBiphoton::new(sp, sm).unwrap().into()
    }

    #[test]
    fn gaussian_closed_forms() {
        let st = gauss(2.0, 1.0);
        let vq = conditional_variance(&st, Representation::Momentum, 0.0).unwrap();
        let vx = conditional_variance(&st, Representation::Position, 0.0).unwrap();
        assert!((vq - 0.8).abs() < 1e-12, "{vq}");
        assert!((vx - 0.2).abs() < 1e-12, "{vx}");
    }

    #[test]
    fn gaussian_density_samples() {
        let st = gauss(2.0, 1.0);
        let d = conditional_density(&st, Representation::Momentum, 0.0, 10.0 * 0.8f64.sqrt(), 4096).unwrap();
        assert!((d.trapezoid_mass() - 1.0).abs() < 1e-12);
        assert!((d.variance() - 0.8).abs() < 1e-9);
        let sigma = 1.7;
        let st = gauss(sigma, sigma);
        let d = conditional_density(&st, Representation::Position, 0.0, 8.0 / sigma, 1000).unwrap();
        assert!((d.variance() - 1.0 / (2.0 * sigma * sigma)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_inferred_equals_conditional() {
        let st = gauss(1.3, 0.4);
        for rep in [Representation::Momentum, Representation::Position] {
            let inferred = inferred_variance(&st, rep).unwrap();
            let conditional = conditional_variance(&st, rep, 0.0).unwrap();
            assert!(((inferred - conditional) / conditional).abs() < 1e-8);
        }
    }

    #[test]
    fn u1_independence() {
        let st = gauss(2.0, 1.0);
        let base = conditional_variance(&st, Representation::Momentum, 0.0).unwrap();
        for u1 in [2.0, -2.0, 6.0, -6.0] {
            let v = conditional_variance(&st, Representation::Momentum, u1).unwrap();
            assert!(((v - base) / base).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_errors() {
        let st = gauss(2.0, 1.0);
        assert!(matches!(
            conditional_density(&st, Representation::Momentum, 0.0, 1.0, 10),
            Err(DistributionError::InvalidGrid { .. })
        ));
        // ±1 natural width leaves ~30% of the mass outside
        let w = 0.8f64.sqrt();
        assert!(matches!(
            conditional_density(&st, Representation::Momentum, 0.0, w, 512),
            Err(DistributionError::TailMass { .. })
        ));
        // 64 points over ±10 widths of a narrow density is too coarse
        assert!(matches!(
            conditional_density(&st, Representation::Momentum, 0.0, 60.0 * w, 64),
            Err(DistributionError::UnderResolved { .. })
        ));
    }

    #[test]
    fn spdc_density_is_even() {
        let st: BiphotonState = SpdcBiphoton::from_experiment(35e-6, 1.8e-2, 710e-9).unwrap().into();
        for rep in [Representation::Momentum, Representation::Position] {
            let d = conditional_density_auto(&st, rep, 0.0, &QuadratureSpec::default()).unwrap();
            let n = d.len();
            let peak = d.peak().1;
            for i in 0..n / 2 {
                let diff = (d.density()[i] - d.density()[n - 1 - i]).abs();
                assert!(diff <= 1e-10 * peak, "asymmetry {diff}");
            }
        }
    }

    #[test]
    fn density_samples_validation() {
        let axis = vec![0.0, 1.0, 2.0];
        assert!(DensitySamples::new(axis.clone(), vec![0.0, 1.0, 0.0], Representation::Position, AxisUnit::Meter, 0.0).is_ok());
        assert!(matches!(
            DensitySamples::new(axis.clone(), vec![0.0, 2.0, 0.0], Representation::Position, AxisUnit::Meter, 0.0),
            Err(DistributionError::UnderResolved { .. })
        ));
        assert!(matches!(
            DensitySamples::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 0.0], Representation::Position, AxisUnit::Meter, 0.0),
            Err(DistributionError::NonUniformAxis)
        ));
        assert!(matches!(
            DensitySamples::new(axis, vec![-0.5, 1.0, 1.5], Representation::Position, AxisUnit::Meter, 0.0),
            Err(DistributionError::NegativeDensity)
        ));
    }
}
