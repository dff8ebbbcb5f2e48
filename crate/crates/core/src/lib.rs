//! EPR-steering witness for pure continuous-variable biphoton states.
//!
//! A pure bipartite Gaussian state always satisfies
//! `W = Δ²(q₂|q₁) · Δ²(x₂|x₁) ≤ 1/4`, with equality only for product states.
//! An entangled pure state with `W > 1/4` is therefore certified
//! non-Gaussian. This crate evaluates `W` for Gaussian states and for the
//! spatial biphoton of spontaneous parametric down-conversion (SPDC), along
//! with the supporting pieces: Schmidt spectra, far/near-field coincidence
//! distributions, aperture effects, and a fit/error-propagation pipeline for
//! coincidence scans.

pub mod analysis;
pub mod cli;
pub mod specfun;
pub mod distributions;
pub mod optics;
pub mod schmidt;
pub mod states;
pub mod witness;

pub use states::{BiphotonState, GaussianBiphoton, Representation, SpdcBiphoton};
