use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Tolerances and limits for [`integrate`] and friends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
    /// Total panel budget, including the panels seeded from breakpoints.
    pub max_subdivisions: usize,
    /// Half-width of a truncated infinite domain, in natural widths.
    pub truncation_radius_factor: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-9,
            absolute_tolerance: 1e-12,
            max_subdivisions: 200_000,
            truncation_radius_factor: 10.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        let ok = self.relative_tolerance > 0.0
            && self.absolute_tolerance > 0.0
            && self.max_subdivisions >= 1
            && self.truncation_radius_factor >= 5.0;
        if ok {
            Ok(())
        } else {
            Err(QuadratureError::InvalidSpec(*self))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature spec {0:?}")]
    InvalidSpec(QuadratureSpec),
    #[error("invalid integration interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error(
        "no convergence after {subdivisions} panels: estimate {estimate:e}, error {error:e} > {target:e}"
    )]
    NonConvergence {
        subdivisions: usize,
        estimate: f64,
        error: f64,
        target: f64,
    },
    #[error("truncated tail bound {bound:e} exceeds absolute tolerance {tolerance:e}")]
    TailTooLarge { bound: f64, tolerance: f64 },
}

// Kronrod 15-point nodes (non-negative half) and weights; the 7-point Gauss
// rule uses the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

/// Heap entry ordered by error, ties broken by panel index for determinism.
#[derive(Debug, PartialEq)]
struct Ranked {
    error: f64,
    index: usize,
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.index.cmp(&self.index))
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |x: f64| -> Result<f64, QuadratureError> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadratureError::NonFinite { x })
        }
    };

    let fc = eval(center)?;
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = fc.abs() * WGK[7];
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();

    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel {
        lo,
        hi,
        value,
        error,
    })
}

/// Adaptive Gauss–Kronrod quadrature of `f` over `[lo, hi]`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    integrate_with_breakpoints(f, lo, hi, &[], spec)
}

/// Like [`integrate`], but with the initial panels split at `breakpoints`.
///
/// Breakpoints outside `(lo, hi)` are ignored; they need not be sorted.
/// Callers pass known zeros or kinks of oscillatory integrands here so the
/// adaptive refinement never has to discover them.
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    spec.validate()?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(QuadratureError::InvalidInterval { lo, hi });
    }

    let mut edges: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(lo);
    edges.extend(breakpoints.iter().copied().filter(|&b| b > lo && b < hi));
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut panels = Vec::with_capacity(edges.len().max(64));
    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        let p = kronrod15(&f, w[0], w[1])?;
        heap.push(Ranked {
            error: p.error,
            index: panels.len(),
        });
        panels.push(p);
    }

    let mut estimate: f64 = panels.iter().map(|p| p.value).sum();
    let mut error: f64 = panels.iter().map(|p| p.error).sum();
    let target = |estimate: f64| spec.absolute_tolerance.max(spec.relative_tolerance * estimate.abs());

    while error > target(estimate) {
        if panels.len() >= spec.max_subdivisions {
            return Err(QuadratureError::NonConvergence {
                subdivisions: panels.len(),
                estimate,
                error,
                target: target(estimate),
            });
        }
        let Some(Ranked { index, .. }) = heap.pop() else {
            break;
        };
        let worst = panels[index];
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // cannot split further in floating point
            return Err(QuadratureError::NonConvergence {
                subdivisions: panels.len(),
                estimate,
                error,
                target: target(estimate),
            });
        }
        let left = kronrod15(&f, worst.lo, mid)?;
        let right = kronrod15(&f, mid, worst.hi)?;
        estimate += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;

        panels[index] = left;
        heap.push(Ranked {
            error: left.error,
            index,
        });
        heap.push(Ranked {
            error: right.error,
            index: panels.len(),
        });
        panels.push(right);

        // refresh the running sums now and then to stop drift
        if panels.len() % 1024 == 0 {
            estimate = panels.iter().map(|p| p.value).sum();
            error = panels.iter().map(|p| p.error).sum();
        }
    }

    panels.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(neumaier_sum(panels.iter().map(|p| p.value)))
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Bound on an integrand's decay outside its truncation window:
/// `|f(x)| ≤ amplitude · |t|^power · exp(-t²/2)` with `t = (x - center)/width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEnvelope {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub power: u32,
}

impl GaussianEnvelope {
    pub fn new(center: f64, width: f64) -> Self {
        Self {
            center,
            width,
            amplitude: 1.0,
            power: 0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_power(mut self, power: u32) -> Self {
        self.power = power;
        self
    }

    /// Upper bound on `∫_{|t|>r} |f|` for both tails together.
    pub fn tail_bound(&self, r: f64) -> f64 {
        let m = f64::from(self.power);
        let one_side = if self.power == 0 {
            (-0.5 * r * r).exp() / r
        } else {
            // ∫_r^∞ t^m e^{-t²/2} dt ≤ r^(m-1) e^{-r²/2} / (1 - (m-1)/r²)
            let denom = 1.0 - (m - 1.0) / (r * r);
            if denom <= 0.0 {
                return f64::INFINITY;
            }
            r.powf(m - 1.0) * (-0.5 * r * r).exp() / denom
        };
        2.0 * self.amplitude * self.width * one_side
    }
}

/// Integrates `f` over the whole real line, truncated at
/// `center ± truncation_radius_factor · width` of `envelope`.
///
/// The analytic tail bound of the envelope must fall below the absolute
/// tolerance, otherwise [`QuadratureError::TailTooLarge`] is returned.
pub fn integrate_line<F: Fn(f64) -> f64>(
    f: F,
    envelope: &GaussianEnvelope,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    spec.validate()?;
    let r = spec.truncation_radius_factor;
    let bound = envelope.tail_bound(r);
    if !(bound < spec.absolute_tolerance) {
        return Err(QuadratureError::TailTooLarge {
            bound,
            tolerance: spec.absolute_tolerance,
        });
    }
    let lo = envelope.center - r * envelope.width;
    let hi = envelope.center + r * envelope.width;
    integrate_with_breakpoints(f, lo, hi, breakpoints, spec)
}
