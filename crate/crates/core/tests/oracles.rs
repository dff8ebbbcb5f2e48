//! Library results against independent reference computations: brute-force
//! sums, textbook constants and values produced by separate dense-grid codes.

use std::f64::consts::PI;

use biphoton::distributions::inferred_variance;
use biphoton::optics::displaced_conditional_variance;
use biphoton::schmidt::schmidt_spectrum_auto;
use biphoton::specfun::{self, integrate, integrate_with_breakpoints, sinc, sint, QuadratureSpec};
use biphoton::{BiphotonState, GaussianBiphoton, Representation, SpdcBiphoton};

const L: f64 = 1.8e-2;
const LAMBDA: f64 = 710e-9;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn sine_integral_at_pi() {
    const SI_PI: f64 = 1.851_937_051_982_466_2;
    let spec = QuadratureSpec::default();
    let q = integrate(sinc, 0.0, PI, &spec).unwrap();
    assert!((q - SI_PI).abs() < 1e-12, "{q}");
    assert!((specfun::sine_integral(PI) - SI_PI).abs() < 1e-14);
}

#[test]
fn sinc_squared_against_simpson() {
    let hi = 20.0 * PI;
    let n = 1_000_000;
    let h = hi / n as f64;
    let f = |x: f64| sinc(x).powi(2);
    let mut simpson = f(0.0) + f(hi);
    for i in 1..n {
        simpson += if i % 2 == 1 { 4.0 } else { 2.0 } * f(h * i as f64);
    }
    simpson *= h / 3.0;
    let nodes: Vec<f64> = (1..20).map(|k| k as f64 * PI).collect();
    let q = integrate_with_breakpoints(f, 0.0, hi, &nodes, &QuadratureSpec::default()).unwrap();
    assert!((q - simpson).abs() < 1e-9, "{q} vs {simpson}");
}

/// Transverse phase matching is a function of `|u|²` in the plane, so its
/// transform is taken in 2D and read off along one axis (zero orthogonal
/// coordinate). Midpoint sum on a 2048² grid, folded to one quadrant, with a
/// smooth radial window that only touches the non-stationary oscillating tail.
fn phase_matching_transform(t: f64) -> f64 {
    let (cut, n) = (28.0, 1024);
    let h = cut / n as f64;
    let r0 = 0.8 * cut;
    let mut acc = 0.0;
    for i in 0..n {
        let ux = (i as f64 + 0.5) * h;
        let c = (ux * t).cos();
        for j in 0..n {
            let uy = (j as f64 + 0.5) * h;
            let r2 = ux * ux + uy * uy;
            let w = (-(r2 / (r0 * r0)).powi(4)).exp();
            acc += sinc(r2) * w * c;
        }
    }
    4.0 * acc * h * h
}

#[test]
fn spdc_position_factor_is_fourier_transform_of_phase_matching() {
    let f0 = phase_matching_transform(0.0);
    // ∫ sinc(r²) d²u = π²/2
    assert!(rel(f0, PI * PI / 2.0) < 1e-6, "{f0}");
    // sint crosses zero, so errors are relative to the peak value
    for i in 0..=40 {
        let y = 0.5 * i as f64;
        let ratio = phase_matching_transform((4.0 * y).sqrt()) / f0;
        assert!((ratio - sint(y)).abs() < 1e-3, "y={y}: {ratio} vs {}", sint(y));
    }
    // the state's own position factor is the same profile in physical units
    let s = SpdcBiphoton::from_experiment(100e-6, L, LAMBDA).unwrap();
    let y = 3.0 * s.b().sqrt();
    assert!((s.phase_matching_position(y) - sint(y * y / (4.0 * s.b()))).abs() < 1e-15);
}

#[test]
fn gaussian_position_factor_is_fourier_transform() {
    let g: BiphotonState = GaussianBiphoton::new(1.7, 0.6).unwrap().into();
    let transform = |x: f64| {
        let (n, cut) = (20_000, 40.0);
        let h = 2.0 * cut / n as f64;
        (0..n)
            .map(|i| {
                let s = -cut + (i as f64 + 0.5) * h;
                g.sum_factor(Representation::Momentum, s) * (0.5 * s * x).cos()
            })
            .sum::<f64>()
            * h
    };
    let t0 = transform(0.0);
    for x in [0.3, 1.0, 2.5] {
        let ratio = transform(x) / t0;
        assert!((ratio - g.sum_factor(Representation::Position, x)).abs() < 1e-10);
    }
}

#[test]
fn inferred_variances_match_dense_double_sum() {
    // double Riemann sums over ±60 natural widths with 8192² points
    let s = SpdcBiphoton::with_p(0.9112, L, LAMBDA).unwrap();
    let st: BiphotonState = s.into();
    let vu = inferred_variance(&st, Representation::Momentum).unwrap() * s.b();
    let vv = inferred_variance(&st, Representation::Position).unwrap() / (16.0 * s.b());
    assert!(rel(vu, 0.153_970_088_8) < 1e-6, "{vu}");
    assert!(rel(vv, 0.153_964_087_1) < 1e-6, "{vv}");
}

#[test]
fn displaced_widths_match_dense_grid() {
    // conditional standard deviations from a 2^18-point dense grid
    let cases = [
        (200e-6, 0.5, 3.000_613_25e-5),
        (200e-6, -0.5, 3.000_613_25e-5),
        (200e-6, 0.0, 3.654_342_06e-5),
        (35e-6, 0.5, 1.780_692_7e-5),
        (35e-6, 0.0, 2.451_533_12e-5),
    ];
    for (c, frac, std) in cases {
        let s = SpdcBiphoton::from_experiment(c, L, LAMBDA).unwrap();
        let v = displaced_conditional_variance(&s, frac * L, 0.0).unwrap();
        assert!(rel(v.sqrt(), std) < 1e-5, "c={c} z={frac}L: {}", v.sqrt());
    }
}

#[test]
fn schmidt_numbers_match_dense_svd() {
    // full SVD of the scaled kernel on 3072 midpoints over ±60
    for (p, k) in [(1.0, 1.186_257), (0.5, 1.783_488)] {
        let st: BiphotonState = SpdcBiphoton::with_p(p, L, LAMBDA).unwrap().into();
        let got = schmidt_spectrum_auto(&st).unwrap().schmidt_number();
        assert!(rel(got, k) < 1e-4, "P={p}: {got}");
    }
}
