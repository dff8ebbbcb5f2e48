//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

use std::process::Command;
use std::time::{Duration, Instant};

use biphoton::analysis::{fit_coverage, propagate_witness_error, Measured, PropagationMode, ScanPlane};
use biphoton::cli::{EXPERIMENT_CRYSTAL_LENGTH as L, EXPERIMENT_PUMP_WAISTS, EXPERIMENT_VARIANCES, EXPERIMENT_WAVELENGTH as LAMBDA};
use biphoton::distributions::conditional_variance;
use biphoton::optics::{
    aperture_convolve, displaced_conditional_variance, displaced_near_field, far_field_axis, far_field_coincidence,
    near_field_axis, near_field_coincidence, DetectionGeometry,
};
use biphoton::schmidt::{default_halfwidth, k_gaussian_1d, k_gaussian_2d, schmidt_spectrum_auto, spectrum_at};
use biphoton::witness::{evaluate_witness, violation_interval, Family, WitnessError, GAUSSIAN_BOUND};
use biphoton::{BiphotonState, GaussianBiphoton, Representation, SpdcBiphoton};

const TABLE1_P: [f64; 6] = [0.1595, 0.3189, 0.4556, 0.7087, 0.7973, 0.9112];
const TABLE2_WT: [f64; 6] = [0.033, 0.11, 0.19, 0.34, 0.38, 0.43];
const WT_TOLERANCE: f64 = 0.015;
/// Printed W_E ± σ and the number of printed decimals.
const TABLE2_WE: [(f64, f64, i32); 6] = [
    (0.024, 0.002, 3),
    (0.115, 0.009, 3),
    (0.20, 0.02, 2),
    (0.36, 0.03, 2),
    (0.38, 0.03, 2),
    (0.42, 0.03, 2),
];
const INTERVAL: (f64, f64) = (0.56, 2.58);
const INTERVAL_TOLERANCE: f64 = 0.03;
const COVERAGE_SEEDS: u64 = 200;
const COVERAGE_TARGET: f64 = 0.95;
const DISPLACED_LIMIT: f64 = 0.10;

type Outcome = Result<String, String>;

fn experiment(c: f64) -> SpdcBiphoton {
    SpdcBiphoton::from_experiment(c, L, LAMBDA).unwrap()
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let note = format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs());
    match out {
        Ok(msg) if took < limit => Ok(format!("{msg}; {note}")),
        Ok(msg) => Err(format!("{msg}; too slow: {note}")),
        Err(msg) => Err(format!("{msg}; {note}")),
    }
}

fn fail_if(bad: Vec<String>, ok: String) -> Outcome {
    if bad.is_empty() {
        Ok(ok)
    } else {
        Err(bad.join("; "))
    }
}

fn table_one() -> Outcome {
    timed(Duration::from_secs(1), || {
        let mut bad = Vec::new();
        for (c, want) in EXPERIMENT_PUMP_WAISTS.iter().zip(TABLE1_P) {
            let p = experiment(*c).p();
            if (p * 1e4).round() / 1e4 != want {
                bad.push(format!("c={c}: P={p:.6} vs {want}"));
            }
        }
        fail_if(bad, "six P values match to 4 decimals".into())
    })
}

fn table_two_theory() -> Outcome {
    timed(Duration::from_secs(60), || {
        let mut bad = Vec::new();
        let mut got = Vec::new();
        for (c, want) in EXPERIMENT_PUMP_WAISTS.iter().zip(TABLE2_WT) {
            let w = evaluate_witness(&experiment(*c).into()).map_err(|e| e.to_string())?.w;
            got.push(format!("{w:.4}"));
            if (w - want).abs() > WT_TOLERANCE {
                bad.push(format!("c={c}: W={w:.4} vs {want}"));
            }
        }
        fail_if(bad, format!("W_T = {}", got.join(", ")))
    })
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn table_two_analysis() -> Outcome {
    let mut bad = Vec::new();
    for (i, ((vx, sx, vq, sq), (we, sw, d))) in EXPERIMENT_VARIANCES.iter().zip(TABLE2_WE).enumerate() {
        let m = propagate_witness_error(Measured::new(*vq, *sq), Measured::new(*vx, *sx), PropagationMode::LinearSum)
            .map_err(|e| e.to_string())?;
        let (v, s) = (round_to(m.value, d), round_to(m.sigma, d));
        if (v - we).abs() > 1e-12 || (s - sw).abs() > 1e-12 {
            bad.push(format!("row {}: {:.5} ± {:.5} vs {we} ± {sw}", i + 1, m.value, m.sigma));
        }
    }
    fail_if(bad, "six W_E ± σ rows reproduced to printed precision".into())
}

fn interval() -> Outcome {
    let spdc = Family::Spdc {
        crystal_length: L,
        wavelength: LAMBDA,
    };
    let iv = violation_interval(&spdc).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    if (iv.p_low - INTERVAL.0).abs() > INTERVAL_TOLERANCE {
        bad.push(format!("p_low {:.4} vs {}", iv.p_low, INTERVAL.0));
    }
    if (iv.p_high - INTERVAL.1).abs() > INTERVAL_TOLERANCE {
        bad.push(format!("p_high {:.4} vs {}", iv.p_high, INTERVAL.1));
    }
    match violation_interval(&Family::Gaussian { sigma_minus: 1.0 }) {
        Err(WitnessError::NoSignChange { .. }) => {}
        other => bad.push(format!("Gaussian family gave {other:?}")),
    }
    fail_if(bad, format!("({:.4}, {:.4}); Gaussian family has none", iv.p_low, iv.p_high))
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn gaussian_oracle() -> Outcome {
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for p in geometric(0.1, 10.0, 20) {
        let g = GaussianBiphoton::from_p(p, 1.0).unwrap();
        let st: BiphotonState = g.into();
        let vq = conditional_variance(&st, Representation::Momentum, 0.0).map_err(|e| e.to_string())?;
        let vx = conditional_variance(&st, Representation::Position, 0.0).map_err(|e| e.to_string())?;
        let rq = (vq / g.momentum_conditional_variance() - 1.0).abs();
        let rx = (vx / g.position_conditional_variance() - 1.0).abs();
        let rw = (vq * vx * 4.0 * k_gaussian_2d(p).unwrap() - 1.0).abs();
        worst = worst.max(rq).max(rx).max(rw);
        if rq > 1e-6 || rx > 1e-6 || rw > 1e-6 {
            bad.push(format!("P={p:.4}: rel errors {rq:.1e}, {rx:.1e}, W {rw:.1e}"));
        }
    }
    fail_if(bad, format!("20 P values, worst relative error {worst:.1e}"))
}

fn gaussian_bound() -> Outcome {
    let mut grid = geometric(0.01, 100.0, 4001);
    grid.extend((0..=2000).map(|i| 0.99 + 1e-5 * i as f64));
    let mut best = (0.0, f64::NAN);
    let mut above = Vec::new();
    for p in grid {
        let w = evaluate_witness(&GaussianBiphoton::from_p(p, 1.0).unwrap().into())
            .map_err(|e| e.to_string())?
            .w;
        if w > GAUSSIAN_BOUND {
            above.push(p);
        }
        if w > best.0 {
            best = (w, p);
        }
    }
    let mut bad = Vec::new();
    if (best.0 - 0.25).abs() > 1e-9 {
        bad.push(format!("max W {:.12}", best.0));
    }
    if (best.1 - 1.0).abs() > 1e-3 {
        bad.push(format!("max at P={}", best.1));
    }
    if !above.is_empty() {
        bad.push(format!("W > 1/4 at {} grid points", above.len()));
    }
    fail_if(bad, format!("max W = {:.12} at P = {:.5}", best.0, best.1))
}

fn schmidt() -> Outcome {
    let mut bad = Vec::new();
    for p in [0.5, 1.0, 2.0] {
        let st: BiphotonState = GaussianBiphoton::from_p(p, 1.0).unwrap().into();
        let k = spectrum_at(&st, 512, default_halfwidth(&st)).map_err(|e| e.to_string())?.schmidt_number();
        let want = k_gaussian_1d(p).unwrap();
        if ((k - want) / want).abs() >= 1e-3 {
            bad.push(format!("Gaussian P={p}: K={k:.6} vs {want:.6}"));
        }
    }
    let mut min_k = f64::INFINITY;
    for i in 1..=30 {
        let p = 0.1 * i as f64;
        let st: BiphotonState = SpdcBiphoton::with_p(p, L, LAMBDA).unwrap().into();
        let k = schmidt_spectrum_auto(&st).map_err(|e| e.to_string())?.schmidt_number();
        min_k = min_k.min(k);
        if k <= 1.001 {
            bad.push(format!("SPDC P={p:.1}: K={k:.6}"));
        }
    }
    fail_if(bad, format!("Gaussian K within 1e-3; SPDC min K = {min_k:.4}"))
}

fn scale_invariance() -> Outcome {
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for c in EXPERIMENT_PUMP_WAISTS {
        let a = evaluate_witness(&experiment(c).into()).map_err(|e| e.to_string())?.w;
        let s = SpdcBiphoton::from_experiment(2.0 * c, 4.0 * L, LAMBDA).unwrap();
        let b = evaluate_witness(&s.into()).map_err(|e| e.to_string())?.w;
        let r = ((b - a) / a).abs();
        worst = worst.max(r);
        if r > 1e-6 {
            bad.push(format!("c={c}: {r:.1e}"));
        }
    }
    fail_if(bad, format!("worst relative change {worst:.1e}"))
}

fn apertures() -> Outcome {
    let geom = DetectionGeometry::default();
    let mut bad = Vec::new();
    let mut summary = Vec::new();
    for (i, c) in EXPERIMENT_PUMP_WAISTS.iter().enumerate() {
        let s = experiment(*c);
        let far_axis = far_field_axis(&s, &geom, 0.0, 4097).map_err(|e| e.to_string())?;
        let far = far_field_coincidence(&s, &geom, 0.0, &far_axis).map_err(|e| e.to_string())?;
        let slit = aperture_convolve(&far, geom.slit_width()).map_err(|e| e.to_string())?;
        let near_axis = near_field_axis(&s, 0.0, 4097).map_err(|e| e.to_string())?;
        let near = near_field_coincidence(&s, 0.0, &near_axis).map_err(|e| e.to_string())?;
        let fiber = aperture_convolve(&near, geom.fiber_core_diameter()).map_err(|e| e.to_string())?;
        let df = slit.variance() / far.variance() - 1.0;
        let dn = fiber.variance() / near.variance() - 1.0;
        summary.push(format!("{:.2}%/{:.2}%", 100.0 * df, 100.0 * dn));
        if df.abs() >= 0.01 {
            bad.push(format!("state {}: slit changes variance by {:.2}%", i + 1, 100.0 * df));
        }
        if dn.abs() >= 0.01 {
            bad.push(format!("state {}: fibre changes variance by {:.2}%", i + 1, 100.0 * dn));
        }
    }
    fail_if(bad, format!("slit/fibre variance changes {}", summary.join(", ")))
}

fn coverage() -> Outcome {
    timed(Duration::from_secs(300), || {
        let geom = DetectionGeometry::default();
        let seeds: Vec<u64> = (0..COVERAGE_SEEDS).collect();
        let mut bad = Vec::new();
        let mut worst = 1.0f64;
        for c in EXPERIMENT_PUMP_WAISTS {
            for plane in [ScanPlane::FarField, ScanPlane::NearField] {
                let cov = fit_coverage(&experiment(c), plane, &geom, 41, 100, &seeds, 3.0).map_err(|e| e.to_string())?;
                worst = worst.min(cov.fraction);
                if cov.fraction < COVERAGE_TARGET {
                    bad.push(format!(
                        "c={c} {plane}: {}/{} covered, {} unconverged",
                        cov.covered, cov.runs, cov.unconverged
                    ));
                }
            }
        }
        fail_if(bad, format!("lowest 3σ coverage {:.1}% over 12 configurations", 100.0 * worst))
    })
}

fn displaced() -> Outcome {
    let mut bad = Vec::new();
    let mut changes = Vec::new();
    for (i, c) in EXPERIMENT_PUMP_WAISTS.iter().enumerate() {
        let s = experiment(*c);
        let w0 = displaced_conditional_variance(&s, 0.0, 0.0).map_err(|e| e.to_string())?.sqrt();
        for z in [-0.5 * L, 0.5 * L] {
            let w = displaced_conditional_variance(&s, z, 0.0).map_err(|e| e.to_string())?.sqrt();
            let change = w / w0 - 1.0;
            if z > 0.0 {
                changes.push(format!("{:+.1}%", 100.0 * change));
            }
            if change.abs() >= DISPLACED_LIMIT || change > 0.0 {
                bad.push(format!("state {} z={:+}L: width {:+.1}%", i + 1, z / L, 100.0 * change));
            }
        }
        let axis = near_field_axis(&s, 0.0, 2049).map_err(|e| e.to_string())?;
        let a = near_field_coincidence(&s, 0.0, &axis).map_err(|e| e.to_string())?;
        let b = displaced_near_field(&s, 0.0, 0.0, &axis).map_err(|e| e.to_string())?;
        let peak = a.peak().1;
        let diff = a.density().iter().zip(b.density()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if diff > 1e-6 * peak {
            bad.push(format!("state {}: z=0 differs from near field by {:.1e} of peak", i + 1, diff / peak));
        }
    }
    fail_if(bad, format!("width change at L/2: {}", changes.join(", ")))
}

fn bin(args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_biphoton"))
        .args(args)
        .env("BIPHOTON_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out.stdout)
}

/// `(axis, density)` blocks from a density CSV, split on the leading column
/// when there is one.
fn density_blocks(csv: &str) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut blocks: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (key, x, d) = match cols.len() {
            2 => (String::new(), cols[0], cols[1]),
            _ => (cols[0].to_string(), cols[1], cols[2]),
        };
        if blocks.last().map(|b| b.0 != key).unwrap_or(true) {
            blocks.push((key, Vec::new(), Vec::new()));
        }
        let b = blocks.last_mut().unwrap();
        b.1.push(x.parse().unwrap());
        b.2.push(d.parse().unwrap());
    }
    blocks.into_iter().map(|(_, x, d)| (x, d)).collect()
}

fn normalization_and_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scan = dir.path().join("scan.csv");
    let scan = scan.to_str().unwrap();
    let densities: Vec<Vec<&str>> = vec![
        vec!["distribution", "--c", "100e-6", "--plane", "near"],
        vec!["distribution", "--c", "100e-6", "--plane", "far"],
        vec!["distribution", "--c", "35e-6", "--plane", "near", "--aperture"],
        vec!["distribution", "--c", "35e-6", "--plane", "far", "--aperture", "--fixed", "1e-4"],
        vec!["displace", "--c", "100e-6", "--z", "-9e-3,-4.5e-3,0,4.5e-3,9e-3"],
    ];
    let mut bad = Vec::new();
    let mut blocks = 0;
    let mut worst: f64 = 0.0;
    for args in &densities {
        let text = String::from_utf8(bin(args, "1")?).map_err(|e| e.to_string())?;
        for (x, d) in density_blocks(&text) {
            blocks += 1;
            let mass: f64 = x.windows(2).zip(d.windows(2)).map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1])).sum();
            worst = worst.max((mass - 1.0).abs());
            if (mass - 1.0).abs() > 1e-8 {
                bad.push(format!("{args:?}: mass {mass:.12}"));
            }
        }
    }
    bin(&["simulate", "--c", "70e-6", "--plane", "near", "--seed", "7", "--output", scan], "1")?;
    let mut commands: Vec<Vec<&str>> = densities;
    commands.extend([
        vec!["witness", "--c", "45e-6"],
        vec!["witness", "--c", "45e-6", "--format", "csv"],
        vec!["sweep", "--p-min", "0.2", "--p-max", "5", "--steps", "9"],
        vec!["sweep", "--p-min", "0.2", "--p-max", "5", "--steps", "9", "--format", "json"],
        vec!["simulate", "--c", "35e-6", "--plane", "far", "--seed", "11"],
        vec!["fit", "--c", "70e-6", "--scan", scan],
        vec!["reproduce-table2"],
        vec!["reproduce-table2", "--format", "json"],
        vec!["interval", "--family", "gaussian"],
    ]);
    for args in &commands {
        let runs = [bin(args, "1")?, bin(args, "1")?, bin(args, "4")?];
        if runs[0] != runs[1] || runs[0] != runs[2] {
            bad.push(format!("{args:?}: output differs between runs"));
        }
    }
    fail_if(
        bad,
        format!(
            "{blocks} densities, worst mass error {worst:.1e}; {} commands byte-identical across reruns and thread counts",
            commands.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("Table I reproduction", table_one),
        ("Table II theory column", table_two_theory),
        ("Table II analysis column", table_two_analysis),
        ("violation interval", interval),
        ("Gaussian oracle equivalence", gaussian_oracle),
        ("Gaussian bound", gaussian_bound),
        ("Schmidt consistency", schmidt),
        ("scale invariance", scale_invariance),
        ("negligible apertures", apertures),
        ("fit coverage", coverage),
        ("displaced crystal", displaced),
        ("normalization and determinism", normalization_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
