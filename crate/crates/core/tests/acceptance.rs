//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr, bypassing output capture, and then asserts.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use num_complex::Complex64 as C;
use rand::Rng;
use rayon::prelude::*;

use rbqp::channel::{sample_with_ground_truth, ChannelParams, SourceParams};
use rbqp::decoy::{analyze, analyze_observation, n_bound_asymptotic_decoy, n_bound_original, GainStatistics};
use rbqp::hom::{breakdown, multiphoton_visibility, spectral_visibility, FilterSpec, PhotonNumbers};
use rbqp::i1dc::{client_angle_update, i1dc_step, run_group, simulate_replay, I1dcGroup};
use rbqp::optimizer::{optimize, sweep_distance, Budgets, Calibration, EstimationMode, SearchSpec};
use rbqp::protocol::{blindness_audit, plan_run, run_protocol, run_with_client, ClientState, Outcome, TransportKind};
use rbqp::qubit::{plus_theta_state, Angle, DensityMatrix};
use rbqp::reference;
use rbqp::rng::substream;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict}  {}\n", detail.as_ref());
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[test]
fn criterion_01_optimal_signal_intensity() {
    let start = Instant::now();
    // Long-distance regime: transmittance and background of the measured link.
    let ch = ChannelParams { vacuum_yield_override: Some(1.7951e-8), ..ChannelParams::ideal(1e-4) };
    let r = optimize(&ch, &Budgets::default(), &SearchSpec::default(), EstimationMode::Asymptotic, 1).unwrap();
    let coeff = 1.0 / (0.7 * -(-(-0.7f64).exp()).ln_1p());
    let elapsed = start.elapsed();
    let pass = (r.mu - 0.70).abs() <= 0.01 && (coeff - 2.08).abs() <= 0.01 && elapsed < Duration::from_secs(1);
    report(1, pass, format!("mu* = {:.4}, coefficient = {coeff:.4}, {:.0} ms", r.mu, elapsed.as_secs_f64() * 1e3));
}

#[test]
fn criterion_02_scaling_laws() {
    let start = Instant::now();
    let (s, eps) = (1000.0, 1e-10);
    let etas: Vec<f64> = (0..=30).map(|i| 10f64.powf(-3.0 + 0.1 * f64::from(i))).collect();
    let lx: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let orig: Vec<f64> = etas.iter().map(|&e| n_bound_original(s, eps, e).unwrap().ln()).collect();
    let decoy: Vec<f64> = etas.iter().map(|&e| n_bound_asymptotic_decoy(s, eps, e, 0.7, 1.0).unwrap().ln()).collect();
    let (so, sd) = (fit_slope(&lx, &orig), fit_slope(&lx, &decoy));
    let elapsed = start.elapsed();
    let pass = (so + 4.0).abs() <= 0.05 && (sd + 1.0).abs() <= 0.05 && elapsed < Duration::from_secs(1);
    report(2, pass, format!("slopes original {so:.4}, decoy {sd:.4}"));
}

/// Gains as explicit Poisson sums of the per-photon-number yields
/// `Y_n = y0 + 1 − (1−η)^n`.
fn poisson_gain(lambda: f64, eta: f64, y0: f64) -> f64 {
    let mut p = (-lambda).exp();
    let mut q = 0.0;
    for n in 0..200i32 {
        if n > 0 {
            p *= lambda / f64::from(n);
        }
        q += p * (y0 + 1.0 - (1.0 - eta).powi(n)).min(1.0);
    }
    q
}

#[test]
fn criterion_03_decoy_bound_soundness() {
    let start = Instant::now();
    let mut rng = substream(3, "acceptance.c3", 0);
    let mut exact_violations = 0;
    for _ in 0..1000 {
        let mu = rng.random_range(0.2..1.2);
        let nu = rng.random_range(0.01..0.8) * mu;
        let p_mu = rng.random_range(0.3..0.9);
        let p_nu = rng.random_range(0.05..(0.99 - p_mu));
        let eta = 10f64.powf(rng.random_range(-5.0..0.0));
        let y0 = 10f64.powf(rng.random_range(-9.0..-4.0));
        let n_total = 10f64.powf(rng.random_range(6.0..14.0));
        let src = SourceParams::new(mu, nu, p_mu, p_nu, 100, 1e-6, 1e-10).unwrap();
        let mut stats = GainStatistics::expected(&src, eta, y0, n_total);
        stats.gain = [poisson_gain(mu, eta, y0), poisson_gain(nu, eta, y0), poisson_gain(0.0, eta, y0)];
        let truth = n_total * p_mu * mu * (-mu).exp() * (y0 + eta);
        let r = analyze(&src, &stats).unwrap();
        if r.m1_lower > truth * (1.0 + 1e-12) {
            exact_violations += 1;
        }
    }

    let configs: Vec<(SourceParams, ChannelParams, u64)> = (0..10)
        .map(|i| {
            let mu = rng.random_range(0.4..1.0);
            let src = SourceParams::new(mu, mu * rng.random_range(0.05..0.4), 0.8, 0.15, 100, 1e-6, 1e-10).unwrap();
            let ch = ChannelParams {
                vacuum_yield_override: Some(10f64.powf(rng.random_range(-7.0..-5.0))),
                ..ChannelParams::ideal(10f64.powf(rng.random_range(-3.0..-1.0)))
            };
            (src, ch, 10u64.pow(7 + i % 3))
        })
        .collect();
    let sampled: Vec<Option<(bool, f64)>> = (0..10_000u64)
        .into_par_iter()
        .map(|t| {
            let (src, ch, n) = &configs[(t % 10) as usize];
            let mut r = substream(3, "acceptance.c3.trial", t);
            let g = sample_with_ground_truth(src, ch, *n, &mut r);
            analyze_observation(src, &g.observation).ok().map(|b| {
                let truth = g.single_photon_signal_detections as f64;
                (b.m1_lower > truth, b.m1_lower / truth)
            })
        })
        .collect();
    let analyzed = sampled.iter().filter(|v| v.is_some()).count();
    let sampled_violations = sampled.iter().filter(|v| matches!(v, Some((true, _)))).count();
    let mut tightness: Vec<f64> = sampled.iter().flatten().map(|v| v.1).collect();
    tightness.sort_by(f64::total_cmp);
    let median_tightness = tightness.get(tightness.len() / 2).copied().unwrap_or(0.0);
    let elapsed = start.elapsed();
    let pass = exact_violations == 0
        && sampled_violations == 0
        && analyzed == sampled.len()
        && elapsed < Duration::from_secs(300);
    report(
        3,
        pass,
        format!(
            "exact violations {exact_violations}/1000, sampled violations {sampled_violations}/{analyzed}, median bound/truth {median_tightness:.3}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Reproduction of the measured pulse counts with per-distance calibration.
/// Not met: the finite bound on the fitted channels comes out 11 to 63 times
/// below the measured counts, and the original-protocol count at 0 km is
/// about 1e22.
#[test]
fn criterion_04_measured_table_order_of_magnitude() {
    let distances: Vec<f64> = reference::MEASURED_RUNS.iter().map(|r| r.length_km).collect();
    let rows = sweep_distance(
        &ChannelParams::default(),
        &distances,
        &Budgets::default(),
        &SearchSpec::default(),
        Calibration::MeasuredGains,
        4,
    )
    .unwrap();
    let ratios: Vec<f64> =
        rows.iter().zip(reference::MEASURED_RUNS.iter()).map(|(row, m)| row.decoy.n_required / m.n_required).collect();
    let within = ratios.iter().all(|r| (0.2..=5.0).contains(r));
    let n_orig = rows[0].n_original;
    let orig_ok = (1e25..=1e28).contains(&n_orig);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    report(
        4,
        within && orig_ok,
        format!("model/measured ratios [{}], original N at 0 km {n_orig:.3e}", shown.join(", ")),
    );
}

#[test]
fn criterion_05_protocol_monte_carlo_soundness() {
    let start = Instant::now();
    let ch = common::desk_channel();
    let budgets = Budgets { size: 10, eps: 1e-3, eps_d: 1e-3 };
    let planned = plan_run(&ch, &budgets, &SearchSpec::default(), 4096, 5).unwrap();
    let plan = planned.plan.clone();
    let results: Vec<(bool, usize)> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let out = run_protocol(&plan, &ch, TransportKind::Inproc, seed).unwrap();
            (matches!(out.outcome, Outcome::Done { .. }), out.soundness.groups_without_single_photon)
        })
        .collect();
    let completed = results.iter().filter(|r| r.0).count();
    let failures = results.iter().filter(|r| r.0 && r.1 > 0).count();
    let elapsed = start.elapsed();
    let pass = failures == 0 && completed > 0 && elapsed < Duration::from_secs(600);
    report(
        5,
        pass,
        format!(
            "N = {} (threshold {:.0}, bound {:.0}), completed {completed}/10000, failure events {failures}, {:.1} s",
            plan.n_pulses,
            planned.n_threshold,
            planned.n_bound,
            elapsed.as_secs_f64()
        ),
    );
}

/// Independent oracle: 4-dimensional statevector of `|+θa⟩|+θb⟩` through
/// `H⊗I`, then `CZ`, then projection of the first qubit on `|±⟩`.
fn statevector_branch(a: Angle, b: Angle, y: u8) -> (DensityMatrix, f64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let ket = |t: f64| [C::new(s, 0.0), C::from_polar(s, t)];
    let (ka, kb) = (ket(a.radians()), ket(b.radians()));
    let mut psi = [C::new(0.0, 0.0); 4];
    for i in 0..2 {
        for j in 0..2 {
            psi[2 * i + j] = ka[i] * kb[j];
        }
    }
    let h = [[s, s], [s, -s]];
    let mut after_h = [C::new(0.0, 0.0); 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                after_h[2 * i + j] += psi[2 * k + j] * h[i][k];
            }
        }
    }
    after_h[3] = -after_h[3];
    let sign = if y == 0 { 1.0 } else { -1.0 };
    let phi = [(after_h[0] + after_h[2] * sign) * s, (after_h[1] + after_h[3] * sign) * s];
    let p = phi[0].norm_sqr() + phi[1].norm_sqr();
    let m = [
        [phi[0] * phi[0].conj() / p, phi[0] * phi[1].conj() / p],
        [phi[1] * phi[0].conj() / p, phi[1] * phi[1].conj() / p],
    ];
    (DensityMatrix::new(m).unwrap(), p)
}

#[test]
fn criterion_06_i1dc_algebra_oracle() {
    let mut worst_state = 0.0f64;
    let mut worst_prob = 0.0f64;
    let mut worst_marginal = 0.0f64;
    let mut closed = true;
    for a in Angle::all() {
        for b in Angle::all() {
            for y in 0..2u8 {
                let (_, rho, p) = i1dc_step(&plus_theta_state(a), &plus_theta_state(b), Some(y), 0).unwrap();
                let (oracle, po) = statevector_branch(a, b, y);
                worst_state = worst_state.max(rho.max_abs_diff(&oracle));
                worst_prob = worst_prob.max((p - po).abs());
                worst_marginal = worst_marginal.max((p - 0.5).abs());
                let predicted = plus_theta_state(client_angle_update(a, b, y));
                closed &= rho.max_abs_diff(&predicted) < 1e-10;
            }
        }
    }
    let pass = worst_state < 1e-10 && worst_prob < 1e-10 && closed && worst_marginal < 1e-14;
    report(
        6,
        pass,
        format!("max state error {worst_state:.1e}, max probability error {worst_prob:.1e}, max |P(y)-1/2| {worst_marginal:.1e}, closed {closed}"),
    );
}

#[test]
fn criterion_07_i1dc_blindness() {
    // Ensemble over the first angle.
    let mut rng = substream(7, "acceptance.c7", 0);
    let mut worst = 0.0f64;
    for k in 2..=6 {
        for trial in 0..10 {
            let rest: Vec<Angle> = (1..k).map(|_| Angle::random(&mut rng)).collect();
            let finals: Vec<DensityMatrix> = Angle::all()
                .map(|first| {
                    let mut angles = vec![first];
                    angles.extend(&rest);
                    run_group(&I1dcGroup::pure(&angles).unwrap(), trial).unwrap().final_state
                })
                .collect();
            let avg = DensityMatrix::average(&finals).unwrap();
            worst = worst.max(avg.max_abs_diff(&DensityMatrix::maximally_mixed()));
        }
    }

    // Transcripts under differing Client angles.
    let plan = common::mid_plan();
    let ch = ChannelParams::ideal(1.0);
    let seed = 2;
    let honest: Vec<_> = (0..3)
        .map(|k| {
            let s = common::secrets_with_angles(&plan, seed, 100 + k);
            let angles = s.angles.clone();
            let c = ClientState::new(plan.clone(), s, seed).unwrap();
            let (t, c, _) = run_with_client(c, &ch, TransportKind::Inproc, seed).unwrap();
            (t, angles, matches!(rbqp::protocol::ClientEndpoint::outcome(&c), Some(Outcome::Done { .. })))
        })
        .collect();
    let completed = honest.iter().all(|h| h.2);
    let (ts, sets): (Vec<_>, Vec<_>) = honest.into_iter().map(|(t, a, _)| (t, a)).unzip();
    let audit = blindness_audit(&ts, &sets);

    let leaky: Vec<_> = (0..3)
        .map(|k| {
            let s = common::secrets_with_angles(&plan, seed, 100 + k);
            let c = common::LeakyClient(ClientState::new(plan.clone(), s, seed).unwrap());
            run_with_client(c, &ch, TransportKind::Inproc, seed).unwrap().0
        })
        .collect();
    let leak_audit = blindness_audit(&leaky, &sets);

    let pass = worst < 1e-10 && completed && audit.passed && !leak_audit.passed;
    report(
        7,
        pass,
        format!(
            "ensemble deviation {worst:.1e}, honest audit passed {}, leaky audit flagged runs {:?}",
            audit.passed, leak_audit.mismatched_runs
        ),
    );
}

#[test]
fn criterion_08_recorded_run_replay() {
    let f = reference::mean_qnd_fidelity(0.0).unwrap();
    let r = simulate_replay(4384, 1000, f, 8).unwrap();
    let census_ok = r.census.get(&4) == Some(&616) && r.census.get(&5) == Some(&384) && r.census.len() == 2;
    let pass = (0.77..=0.87).contains(&r.mean_fidelity) && census_ok;
    report(
        8,
        pass,
        format!(
            "input fidelity {f:.6}, mean output fidelity {:.4} (sd {:.4}), census {:?}",
            r.mean_fidelity, r.std_fidelity, r.census
        ),
    );
}

/// Direct evaluation of the reduced multi-photon expression, written out
/// term by term.
fn reduced_oracle(n1: f64, n2: f64, eta: f64, eta_i: f64) -> f64 {
    let herald = n1 * (1.0 - eta_i / 2.0);
    let num = 2.0 * n2 + n2.powi(2) / 2.0 * (2.0 - eta) + 2.0 * herald * n2 * (2.0 - eta);
    let den = 2.0 * n2 + 3.0 * n2.powi(2) / 4.0 * (2.0 - eta) + 3.0 * herald * n2 * (2.0 - eta) + 4.0 * n1;
    num / den
}

/// Spectral expression with every term normalized by `σ₂²`.
fn spectral_oracle(sp: f64, s1: f64, s2: f64) -> f64 {
    let (p, a) = ((sp / s2).powi(2), (s1 / s2).powi(2));
    let top = a * (p + a) + a / p * (2.0 + a) + p / a + 3.0;
    1.0 / (0.5 + top / (4.0 * (p + 2.0 * a))).sqrt()
}

#[test]
fn criterion_09_hom_formulas() {
    let f = FilterSpec::new(reference::SIGMA_P, reference::SIGMA_1, reference::SIGMA_2).unwrap();
    let p = PhotonNumbers { n1: 0.0020, n2: 0.0645, eta: 0.105, eta_i: 0.08 };
    let spectral = spectral_visibility(&f).unwrap();
    let reduced = multiphoton_visibility(&p, true).unwrap().value;
    let b = breakdown(&f, &p).unwrap();
    let spectral_ok = (spectral - 0.984).abs() <= 0.001 && (spectral - spectral_oracle(54.0, 27.0, 27.0)).abs() < 1e-12;
    let reduced_ok =
        (reduced - 0.929).abs() <= 0.001 && (reduced - reduced_oracle(0.0020, 0.0645, 0.105, 0.08)).abs() < 1e-12;
    let combined_ok = [b.combined_full, b.combined_reduced].iter().all(|v| (0.90..=0.935).contains(v));
    report(
        9,
        spectral_ok && reduced_ok && combined_ok,
        format!(
            "spectral {spectral:.5}, reduced {reduced:.5}, combined full {:.4}, combined reduced {:.4}",
            b.combined_full, b.combined_reduced
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("desk.txt");
    std::fs::write(
        &params,
        "S = 10\neps = 1e-3\neps_d = 1e-3\nalpha = 0\neta_d = 1\neta_qnd = 0.1\nbatch_size = 2048\ngrid = 8\n",
    )
    .unwrap();
    let run = |name: &str, transport: &str| {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_rbqp"))
            .args(["simulate", "--seed", "10", "--transport", transport, "--params"])
            .arg(&params)
            .arg("--out")
            .arg(&out)
            .arg("--report")
            .arg(dir.path().join(format!("{name}.json")))
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.ndjson", "inproc");
    let b = run("b.ndjson", "inproc");
    let c = run("c.ndjson", "socket");
    let pass = !a.is_empty() && a == b && a == c;
    report(
        10,
        pass,
        format!(
            "transcript {} bytes, {} records, identical across runs and transports: {pass}",
            a.len(),
            a.iter().filter(|&&x| x == b'\n').count()
        ),
    );
}
