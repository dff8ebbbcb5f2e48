//! Special functions used by the biphoton amplitudes, plus the adaptive
//! quadrature engine every variance and normalization integral runs through.
//!
//! The sine and cosine integrals use a power series below [`SERIES_CUTOFF`]
//! and a continued fraction for the exponential integral `E1(ix)` above it.
//! Above the cutoff the continued fraction returns `Si(x) - π/2` directly, so
//! [`sint`] keeps full relative accuracy far out in its oscillating tail.

mod quadrature;

pub use quadrature::{
    integrate, integrate_line, integrate_with_breakpoints, GaussianEnvelope, QuadratureError,
    QuadratureSpec,
};

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

/// Crossover between the power series and the continued fraction.
pub const SERIES_CUTOFF: f64 = 4.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const CF_MAX_ITER: usize = 100_000;

/// `sin(x)/x`, with the removable singularity at zero filled in.
pub fn sinc(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Sine integral `Si(x) = ∫₀ˣ sinc(t) dt`, odd in `x`.
pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    if x <= SERIES_CUTOFF {
        si_series(x)
    } else {
        FRAC_PI_2 + continued_fraction_tail(x).si_minus_half_pi
    }
}

/// Cosine integral `Ci(x) = γ + ln x - ∫₀ˣ (1 - cos t)/t dt` for `x > 0`.
///
/// Returns `-∞` at zero and `NaN` for negative arguments.
pub fn cosine_integral(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x <= SERIES_CUTOFF {
        EULER_GAMMA + x.ln() - cin_series(x)
    } else {
        continued_fraction_tail(x).ci
    }
}

/// Entire part of the cosine integral, `Cin(x) = ∫₀ˣ (1 - cos t)/t dt`.
///
/// Even in `x`; finite at zero, unlike [`cosine_integral`].
pub fn cin(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= SERIES_CUTOFF {
        cin_series(ax)
    } else {
        EULER_GAMMA + ax.ln() - continued_fraction_tail(ax).ci
    }
}

/// Transverse-position phase-matching profile `1 - (2/π) Si(x)`.
pub fn sint(x: f64) -> f64 {
    if x.abs() <= SERIES_CUTOFF {
        1.0 - 2.0 / PI * sine_integral(x)
    } else if x > 0.0 {
        -2.0 / PI * continued_fraction_tail(x).si_minus_half_pi
    } else {
        2.0 - sint(-x)
    }
}

fn si_series(x: f64) -> f64 {
    // Σ (-1)^n x^(2n+1) / ((2n+1)(2n+1)!)
    let x2 = x * x;
    let mut term = x; // x^(2n+1)/(2n+1)!
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        let k = f64::from(2 * n);
        term *= -x2 / (k * (k + 1.0));
        let contrib = term / (k + 1.0);
        sum += contrib;
        if contrib.abs() <= f64::EPSILON * 1e-2 * sum.abs() {
            break;
        }
    }
    sum
}

fn cin_series(x: f64) -> f64 {
    // Σ_{n≥1} (-1)^(n+1) x^(2n) / (2n (2n)!)
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mut term = 1.0; // (-1)^(n+1) x^(2n)/(2n)! up to sign
    let mut sum = 0.0;
    let mut n = 0u32;
    loop {
        n += 1;
        let k = f64::from(2 * n);
        term *= -x2 / ((k - 1.0) * k);
        let contrib = -term / k;
        sum += contrib;
        if contrib.abs() <= f64::EPSILON * 1e-2 * sum.abs() {
            break;
        }
    }
    sum
}

struct CiSiTail {
    ci: f64,
    si_minus_half_pi: f64,
}

/// Modified Lentz evaluation of `E1(ix)`; valid and fast for `x > 2`.
fn continued_fraction_tail(x: f64) -> CiSiTail {
    let tiny = 1e-300;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..CF_MAX_ITER {
        let a = -((i - 1) as f64).powi(2);
        b += Complex64::new(2.0, 0.0);
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
            break;
        }
    }
    h *= Complex64::new(x.cos(), -x.sin());
    CiSiTail {
        ci: -h.re,
        si_minus_half_pi: h.im,
    }
}
