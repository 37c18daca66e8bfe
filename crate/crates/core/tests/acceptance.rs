//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qkdsim_core::channel::{su2_rotation, ChannelParams};
use qkdsim_core::jones::{smzi_outputs, JonesVector, PhaseSettings};
use qkdsim_core::postproc::{cascade_correct, h2, skr_curve, toeplitz_hash, SecurityParams};
use qkdsim_core::protocol::{
    calibrate_duty_factor, calibrate_misalignment, rate_model, sift, sifted_rate, simulate_block_with, Class,
    McOptions, SystemParams,
};
use qkdsim_core::scenario::{run_long_run, run_visibility_scan, LongRunConfig, ScenarioConfig};

/// Reference measurements per channel loss: (loss dB, sifted bps, secure bps, QBER).
const REFERENCE: [(f64, f64, f64, f64); 5] = [
    (10.0, 21969.0, 6894.9, 0.00899),
    (12.6, 11804.8, 3675.9, 0.00958),
    (15.0, 7299.7, 2128.3, 0.01181),
    (20.0, 2408.6, 537.0, 0.01991),
    (25.0, 838.8, 54.6, 0.04205),
];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Parameters with `e_mis` and the duty factor fixed from the 10 dB row.
fn calibrated() -> SystemParams {
    let (loss, sifted, _, qber) = REFERENCE[0];
    let base = SystemParams::default();
    let e_mis = calibrate_misalignment(&base, loss, qber).expect("e_mis");
    let p = SystemParams { e_mis, ..base };
    let duty_factor = calibrate_duty_factor(&p, loss, sifted).expect("duty factor");
    SystemParams { duty_factor, ..p }
}

/// Random points on the Poincaré sphere, random modulator phases and random
/// U(2) channel matrices; returns (max insensitivity error, max energy error,
/// max deviation of the reference from the closed-form fringe, seconds).
fn polarization_sweep() -> (f64, f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reference_input = JonesVector::from_angles(0.0, 0.0);
    let start = Instant::now();
    let (mut insens, mut energy, mut closed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let theta = rng.random_range(0.0..PI);
        let beta = rng.random_range(0.0..2.0 * PI);
        let phases = PhaseSettings::new(rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let z: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let norm = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt().max(1e-12);
        let unitary = su2_rotation([z[0] / norm, z[1] / norm, z[2] / norm], rng.random_range(0.0..4.0 * PI))
            .scale(Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)));
        let e_in = unitary.apply(&JonesVector::from_angles(theta, beta));

        let (o1, o2) = smzi_outputs(&e_in, phases).expect("unit input");
        let (r1, r2) = smzi_outputs(&reference_input, phases).expect("unit input");
        let (i1, i2) = (o1.intensity(), o2.intensity());
        insens = insens.max((i1 - r1.intensity()).abs()).max((i2 - r2.intensity()).abs());
        energy = energy.max((i1 + i2 - 1.0).abs());
        let fringe = 0.5 * (1.0 - (phases.phi_a - phases.phi_b).cos());
        closed = closed.max((r1.intensity() - fringe).abs());
    }
    (insens, energy, closed, start.elapsed().as_secs_f64())
}

fn c1_insensitivity() -> Outcome {
    let (insens, _, closed, secs) = polarization_sweep();
    check(
        insens < 1e-12 && closed < 1e-12 && secs < 1.0,
        format!("max |I - I_ref| = {insens:.2e}, reference vs closed form {closed:.2e}, {secs:.3} s for 1e4 tuples"),
    )
}

fn c2_energy() -> Outcome {
    let (_, energy, _, _) = polarization_sweep();
    check(energy < 1e-12, format!("max |I1 + I2 - 1| = {energy:.2e}"))
}

fn c3_qber() -> Outcome {
    let p = calibrated();
    let mut worst = 0.0f64;
    let mut parts = vec![format!("e_mis = {:.5}", p.e_mis)];
    for &(loss, _, _, qber) in &REFERENCE[1..] {
        let e = rate_model(&p, loss).map_err(|e| e.to_string())?.error_rate(Class::Signal);
        worst = worst.max((e - qber).abs());
        parts.push(format!("{loss} dB {:.3}%", 100.0 * e));
    }
    parts.push(format!("max deviation {:.3} pp", 100.0 * worst));
    check(worst <= 0.003 && (p.e_mis - 0.0056).abs() < 5e-4, parts.join(", "))
}

fn c4_sifted() -> Outcome {
    let p = calibrated();
    let mut worst = 0.0f64;
    let mut parts = vec![format!("duty factor = {:.4}", p.duty_factor)];
    for &(loss, sifted, _, _) in &REFERENCE[1..] {
        let r = sifted_rate(&p, &rate_model(&p, loss).map_err(|e| e.to_string())?);
        let rel = r / sifted - 1.0;
        worst = worst.max(rel.abs());
        parts.push(format!("{loss} dB {r:.1} bps ({:+.1}%)", 100.0 * rel));
    }
    check(worst <= 0.15, parts.join(", "))
}

fn c5_skr() -> Outcome {
    let p = calibrated();
    let security = SecurityParams::default();
    let losses: Vec<f64> = REFERENCE.iter().map(|r| r.0).collect();
    let curve = skr_curve(&p, &security, &losses).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (point, &(loss, _, skr, _)) in curve.iter().zip(&REFERENCE) {
        if loss < 25.0 {
            let rel = point.skr_bps / skr - 1.0;
            ok &= rel.abs() <= 0.25;
            parts.push(format!("{loss} dB {:.1} bps ({:+.1}%)", point.skr_bps, 100.0 * rel));
        } else {
            ok &= point.skr_bps > 0.0;
            parts.push(format!("{loss} dB {:.1} bps", point.skr_bps));
        }
    }
    let far: Vec<f64> = (0..=58).map(|i| 31.5 + 0.5 * i as f64).collect();
    let tail = skr_curve(&p, &security, &far).map_err(|e| e.to_string())?;
    let positive_far = tail.iter().filter(|t| t.skr_bps > 0.0).count();
    ok &= positive_far == 0;
    parts.push(format!("{positive_far} positive points in (31, 60] dB"));
    check(ok, parts.join(", "))
}

fn c6_monte_carlo() -> Outcome {
    let p = calibrated();
    let mut ok = true;
    let mut worst_z = 0.0f64;
    let mut slowest = 0.0f64;
    for (i, &(loss, ..)) in REFERENCE.iter().enumerate() {
        let channel = ChannelParams {
            loss_db: loss,
            scramble_rate: 2.0,
            phase_drift_sigma: 0.0,
            seed: 100 + i as u64,
        };
        let start = Instant::now();
        let record = simulate_block_with(&p, &channel, 100_000_000, 7 + i as u64, &McOptions::default())
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let stats = sift(&record);
        let model = rate_model(&p, loss).map_err(|e| e.to_string())?;
        for c in Class::ALL {
            let n = record.sent(c) as f64;
            let q = model.gain(c);
            let zq = (record.gain(c) - q) / (q * (1.0 - q) / n).sqrt();
            let m = stats.sifted[c.index()];
            let e = model.error_rate(c);
            let ze = (stats.qber(c) - e) / (e * (1.0 - e) / m).sqrt();
            worst_z = worst_z.max(zq.abs()).max(ze.abs());
            ok &= zq.abs() <= 3.0 && ze.abs() <= 3.0;
        }
    }
    ok &= slowest < 60.0;
    check(
        ok,
        format!("max |z| = {worst_z:.2} over Q_k and E_k at 5 losses x 3 intensities, slowest point {slowest:.2} s"),
    )
}

fn c7_visibility() -> Outcome {
    let config = ScenarioConfig::default().with_seed(7);
    let report = run_visibility_scan(&config).map_err(|e| e.to_string())?;
    let m = &report.summary.metrics;
    let mean = m["visibility_mean"];
    check(
        (0.9906..=0.9936).contains(&mean) && m["rounds"] >= 100.0,
        format!(
            "mean V = {:.4}% +- {:.4}% over {} rounds",
            100.0 * mean,
            100.0 * m["visibility_std"],
            m["rounds"]
        ),
    )
}

fn c8_cascade() -> Outcome {
    let n = 1usize << 20;
    let errors = n / 100;
    let (mut failures, mut f_min, mut f_max, mut f_sum) = (0, f64::INFINITY, 0.0f64, 0.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let mut b = a.clone();
        for i in sample(&mut rng, n, errors) {
            b[i] ^= 1;
        }
        let q = errors as f64 / n as f64;
        match cascade_correct(&a, &b, q, seed) {
            Ok(out) if out.corrected == a => {
                let f = out.leak_bits as f64 / (n as f64 * h2(q));
                f_min = f_min.min(f);
                f_max = f_max.max(f);
                f_sum += f;
            }
            _ => failures += 1,
        }
    }
    check(
        failures == 0 && f_min >= 1.0 && f_max <= 1.3,
        format!(
            "{} of 100 blocks corrected, f mean {:.4}, range [{f_min:.4}, {f_max:.4}]",
            100 - failures,
            f_sum / 100.0
        ),
    )
}

/// Dense GF(2) product with `T[i][j] = s[i - j]` (i >= j) and `s[m - 1 + j - i]` otherwise.
fn naive_toeplitz(key: &[u8], seed: &[u8], m: usize) -> Vec<u8> {
    (0..m)
        .map(|i| {
            key.iter().enumerate().fold(0u8, |acc, (j, &k)| {
                let t = if i >= j { seed[i - j] } else { seed[m - 1 + j - i] };
                acc ^ (t & k)
            })
        })
        .collect()
}

fn c9_toeplitz() -> Outcome {
    let n = 1usize << 12;
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let m = rng.random_range(1..=n);
        let key: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let s: Vec<u8> = (0..n + m - 1).map(|_| rng.random_range(0..2u8)).collect();
        let fast = toeplitz_hash(&key, &s, m).map_err(|e| e.to_string())?;
        if fast != naive_toeplitz(&key, &s, m) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{} of 100 random 2^12-bit instances bit-exact", 100 - mismatches))
}

fn phase_run(sigma: f64, tracking: bool) -> Result<(f64, f64), String> {
    let mut config = ScenarioConfig::default().with_seed(21);
    config.channel.phase_drift_sigma = sigma;
    config.scenario.long_run = LongRunConfig {
        duration_s: 600.0,
        compression: 1.0,
        tracking,
        bin_s: 60.0,
        fine_bin_s: 10.0,
        ..Default::default()
    };
    let report = run_long_run(&config).map_err(|e| e.to_string())?;
    let m = &report.summary.metrics;
    Ok((m["qber_signal"], m["qber_signal_bin_max"]))
}

fn c10_phase_tracking() -> Outcome {
    let (baseline, _) = phase_run(0.0, false)?;
    let (tracked_mean, tracked_max) = phase_run(0.05, true)?;
    let (_, untracked_max) = phase_run(0.05, false)?;
    check(
        tracked_max < 1.3 * baseline && untracked_max > 2.0 * baseline,
        format!(
            "drift-free E_mu {:.3}%, tracked mean {:.3}% / worst 60 s bin {:.3}% ({:.2}x), untracked worst bin {:.3}% ({:.2}x)",
            100.0 * baseline,
            100.0 * tracked_mean,
            100.0 * tracked_max,
            tracked_max / baseline,
            100.0 * untracked_max,
            untracked_max / baseline
        ),
    )
}

fn run_cli(scenario: &str, config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_qkdsim"))
        .arg(scenario)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{scenario}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn c11_determinism() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for scenario in ["visibility-scan", "long-run", "loss-sweep", "postprocess-demo"] {
        let config = configs.join(format!("{scenario}.json"));
        let (a, b) = (tmp.path().join(format!("{scenario}-a")), tmp.path().join(format!("{scenario}-b")));
        run_cli(scenario, &config, &a)?;
        run_cli(scenario, &config, &b)?;
        let mut names: Vec<_> = std::fs::read_dir(&a)
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        names.sort();
        for name in names {
            let x = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(&name)).map_err(|e| e.to_string())?;
            if x != y {
                return Err(format!("{scenario}/{} differs between runs", name.to_string_lossy()));
            }
            files += 1;
        }
    }
    Ok(format!("4 scenarios run twice through the CLI, {files} output files byte-identical"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("polarization insensitivity", c1_insensitivity),
        ("energy conservation", c2_energy),
        ("QBER vs loss", c3_qber),
        ("sifted rate vs loss", c4_sifted),
        ("secure key rate vs loss", c5_skr),
        ("Monte Carlo vs analytic model", c6_monte_carlo),
        ("fringe visibility under scrambling", c7_visibility),
        ("Cascade correctness and efficiency", c8_cascade),
        ("Toeplitz hash vs dense oracle", c9_toeplitz),
        ("phase tracking under drift", c10_phase_tracking),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
