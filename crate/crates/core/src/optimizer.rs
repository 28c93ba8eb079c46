//! Minimization of the required pulse count over the source parameters
//! `(μ, ν, p_μ, p_ν)`: a coarse parallel grid followed by Nelder–Mead
//! refinement, plus distance sweeps with gain-based channel calibration.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_transmittance, expected_gain, ChannelParams, SourceParams};
use crate::decoy::{analyze, n_bound_original, GainStatistics};
use crate::error::{Error, Result};
use crate::reference;
use crate::rng;

pub const MU_MAX: f64 = 1.5;
pub const NU_MAX: f64 = 0.5;
/// Largest pulse count the search will consider.
pub const N_CEILING: f64 = 1e40;

/// Size of the computation and the two failure budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub size: u64,
    pub eps: f64,
    pub eps_d: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { size: reference::SIZE, eps: reference::EPS, eps_d: reference::EPS_D }
    }
}

impl Budgets {
    pub fn source(&self, mu: f64, nu: f64, p_mu: f64, p_nu: f64) -> Result<SourceParams> {
        SourceParams::new(mu, nu, p_mu, p_nu, self.size, self.eps, self.eps_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// Hoeffding-bounded gains and the two-decoy single-photon bound.
    #[default]
    Finite,
    /// Exact single-photon fraction, no statistical widths, signal only.
    Asymptotic,
}

/// One objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    /// Continuous minimal pulse count; infinite when infeasible.
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub mode: EstimationMode,
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub n_required: f64,
    pub constraint_value: f64,
    /// Best value found by the grid before refinement.
    pub grid_n: f64,
    pub trace: Vec<Evaluation>,
}

fn grouping_constraint(src: &SourceParams, eta: f64, y0: f64, n: f64, mode: EstimationMode) -> Result<f64> {
    match mode {
        EstimationMode::Finite => Ok(analyze(src, &GainStatistics::expected(src, eta, y0, n))?.constraint_value),
        EstimationMode::Asymptotic => {
            let s = src.size as f64;
            let q = expected_gain(src.mu, eta, y0);
            let p1 = exact_single_photon_fraction(src.mu, eta, y0);
            let m = n * src.p_mu * q;
            Ok(s * ((m / s) * (-p1).ln_1p()).exp())
        }
    }
}

/// Single-photon share of the signal gain, `μe^{−μ}(y0+η)/Q_μ`.
pub fn exact_single_photon_fraction(mu: f64, eta: f64, y0: f64) -> f64 {
    let q = expected_gain(mu, eta, y0);
    if q > 0.0 {
        (mu * (-mu).exp() * (y0 + eta) / q).min(1.0)
    } else {
        0.0
    }
}

/// Smallest real `N` at which the grouping constraint holds at nominal
/// statistics. The constraint value is nonincreasing in `N`, so bisection on
/// `ln N` finds the threshold.
pub fn minimal_pulses(src: &SourceParams, ch: &ChannelParams, mode: EstimationMode) -> Result<f64> {
    let eta = effective_transmittance(ch);
    let y0 = ch.vacuum_yield();
    let ok = |n: f64| grouping_constraint(src, eta, y0, n, mode).map(|v| v <= src.eps);
    if !ok(N_CEILING)? {
        return Err(Error::Infeasible);
    }
    if ok(1.0)? {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, N_CEILING.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid.exp())? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// Required pulse count (ceiling) and the constraint value it achieves.
pub fn objective(src: &SourceParams, ch: &ChannelParams, mode: EstimationMode) -> Result<(f64, f64)> {
    let n = minimal_pulses(src, ch, mode)?.ceil();
    let v = grouping_constraint(src, effective_transmittance(ch), ch.vacuum_yield(), n, mode)?;
    Ok((n, v))
}

fn in_box(x: &[f64; 4], mode: EstimationMode) -> bool {
    let [mu, nu, p_mu, p_nu] = *x;
    match mode {
        EstimationMode::Asymptotic => mu > 0.0 && mu <= MU_MAX,
        EstimationMode::Finite => {
            mu > nu && mu <= MU_MAX && nu > 0.0 && nu <= NU_MAX && p_mu > 0.0 && p_nu > 0.0 && p_mu + p_nu < 1.0
        }
    }
}

fn evaluate(x: &[f64; 4], ch: &ChannelParams, budgets: &Budgets, mode: EstimationMode) -> f64 {
    if !in_box(x, mode) {
        return f64::INFINITY;
    }
    let src = match mode {
        EstimationMode::Finite => budgets.source(x[0], x[1], x[2], x[3]),
        // The decoy intensity is unused; any valid placeholder will do.
        EstimationMode::Asymptotic => budgets.source(x[0], x[0] / 2.0, 1.0, 0.0),
    };
    src.and_then(|s| minimal_pulses(&s, ch, mode)).unwrap_or(f64::INFINITY)
}

fn grid_points(resolution: usize, mode: EstimationMode) -> Vec<[f64; 4]> {
    let r = resolution as f64;
    let axis = |max: f64| (1..=resolution).map(move |i| max * i as f64 / r);
    let probs = || (1..=resolution).map(|i| i as f64 / (r + 1.0));
    match mode {
        EstimationMode::Asymptotic => axis(MU_MAX).map(|mu| [mu, 0.0, 1.0, 0.0]).collect(),
        EstimationMode::Finite => {
            let mut pts = Vec::new();
            for mu in axis(MU_MAX) {
                for nu in axis(NU_MAX) {
                    for p_mu in probs() {
                        for p_nu in probs() {
                            let x = [mu, nu, p_mu, p_nu];
                            if in_box(&x, mode) {
                                pts.push(x);
                            }
                        }
                    }
                }
            }
            pts
        }
    }
}

/// Grid resolution and refinement controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Points per dimension, at least 8.
    pub resolution: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec { resolution: 10, restarts: 4, max_iter: 4000 }
    }
}

/// Derivative-free simplex minimization of `f` over `dim` coordinates of
/// `x0`; the remaining coordinates stay fixed. Returns the best point and
/// its value. The best vertex is never replaced by a worse one, so the
/// result is never worse than `f(x0)`.
fn nelder_mead<F>(
    f: &F,
    x0: [f64; 4],
    dim: usize,
    steps: [f64; 4],
    max_iter: usize,
    trace: &mut Vec<([f64; 4], f64)>,
) -> ([f64; 4], f64)
where
    F: Fn(&[f64; 4]) -> f64,
{
    let eval = |x: [f64; 4], trace: &mut Vec<([f64; 4], f64)>| {
        let v = f(&x);
        trace.push((x, v));
        (x, v)
    };
    let mut simplex = vec![eval(x0, trace)];
    for d in 0..dim {
        let mut x = x0;
        x[d] += steps[d];
        simplex.push(eval(x, trace));
    }
    let cmp = |a: &([f64; 4], f64), b: &([f64; 4], f64)| a.1.total_cmp(&b.1);
    for _ in 0..max_iter {
        simplex.sort_by(cmp);
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if worst.is_finite() { (worst - best).abs() } else { f64::INFINITY };
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| (0..dim).map(|d| (x[d] - simplex[0].0[d]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-13 * best.abs().max(1e-300) && size <= 1e-10 {
            break;
        }
        let mut centroid = [0.0; 4];
        centroid.copy_from_slice(&x0);
        for d in 0..dim {
            centroid[d] = simplex[..dim].iter().map(|(x, _)| x[d]).sum::<f64>() / dim as f64;
        }
        let along = |t: f64| {
            let mut x = centroid;
            for d in 0..dim {
                x[d] = centroid[d] + t * (simplex[dim].0[d] - centroid[d]);
            }
            x
        };
        let r = eval(along(-1.0), trace);
        if r.1 < simplex[0].1 {
            let e = eval(along(-2.0), trace);
            simplex[dim] = if e.1 < r.1 { e } else { r };
        } else if r.1 < simplex[dim - 1].1 {
            simplex[dim] = r;
        } else {
            let c = if r.1 < simplex[dim].1 { eval(along(-0.5), trace) } else { eval(along(0.5), trace) };
            if c.1 < simplex[dim].1.min(r.1) {
                simplex[dim] = c;
            } else {
                let b = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let mut x = v.0;
                    for d in 0..dim {
                        x[d] = b[d] + 0.5 * (x[d] - b[d]);
                    }
                    *v = eval(x, trace);
                }
            }
        }
    }
    simplex.sort_by(cmp);
    simplex[0]
}

/// Grid search followed by seeded Nelder–Mead restarts from the best grid
/// point. Deterministic for a given seed and search spec.
pub fn optimize(
    ch: &ChannelParams,
    budgets: &Budgets,
    search: &SearchSpec,
    mode: EstimationMode,
    seed: u64,
) -> Result<OptimizationResult> {
    if search.resolution < 8 {
        return Err(Error::InvalidParameter(format!(
            "grid resolution {} below 8 points per dimension",
            search.resolution
        )));
    }
    ch.validate()?;
    budgets.source(0.5, 0.1, 0.5, 0.25)?;

    let pts = grid_points(search.resolution, mode);
    let values: Vec<f64> = pts.par_iter().map(|x| evaluate(x, ch, budgets, mode)).collect();
    let mut trace: Vec<Evaluation> = Vec::with_capacity(pts.len());
    let mut start = 0;
    for (i, (x, &v)) in pts.iter().zip(&values).enumerate() {
        trace.push(Evaluation { mu: x[0], nu: x[1], p_mu: x[2], p_nu: x[3], n: v });
        if v < values[start] {
            start = i;
        }
    }
    let grid_n = values[start];
    if !grid_n.is_finite() {
        return Err(Error::Infeasible);
    }

    let (dim, base_steps) = match mode {
        EstimationMode::Finite => (4, [0.1, 0.03, 0.05, 0.03]),
        EstimationMode::Asymptotic => (1, [0.1, 0.0, 0.0, 0.0]),
    };
    // Work on ln N so the simplex tolerances are relative.
    let f = |x: &[f64; 4]| evaluate(x, ch, budgets, mode).ln();
    let mut best = (pts[start], grid_n.ln());
    let mut raw = Vec::new();
    for restart in 0..=search.restarts {
        let mut jitter = rng::substream(seed, "optimizer.simplex", restart as u64);
        let shrink = 0.5f64.powi(restart as i32);
        let mut steps = [0.0; 4];
        for d in 0..dim {
            steps[d] = base_steps[d] * shrink * (0.75 + 0.5 * jitter.random::<f64>());
            if jitter.random::<bool>() {
                steps[d] = -steps[d];
            }
        }
        let cand = nelder_mead(&f, best.0, dim, steps, search.max_iter, &mut raw);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    trace.extend(raw.into_iter().map(|(x, v)| Evaluation { mu: x[0], nu: x[1], p_mu: x[2], p_nu: x[3], n: v.exp() }));

    let [mu, nu, p_mu, p_nu] = best.0;
    let src = match mode {
        EstimationMode::Finite => budgets.source(mu, nu, p_mu, p_nu)?,
        EstimationMode::Asymptotic => budgets.source(mu, mu / 2.0, 1.0, 0.0)?,
    };
    let (n_required, constraint_value) = objective(&src, ch, mode)?;
    let (nu, p_nu) = match mode {
        EstimationMode::Finite => (nu, p_nu),
        EstimationMode::Asymptotic => (0.0, 0.0),
    };
    Ok(OptimizationResult { mode, mu, nu, p_mu: src.p_mu, p_nu, n_required, constraint_value, grid_n, trace })
}

/// How the per-distance channel is obtained in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Use the template channel with only the fiber length changed.
    #[default]
    Fixed,
    /// Fit the QND success probability and vacuum yield to the measured
    /// gains at each distance.
    MeasuredGains,
}

/// Fits `η_qnd` and `y0` so that the model reproduces a measured signal and
/// vacuum gain at the signal intensity the optimizer chooses. Iterates
/// optimizer and fit until the intensity settles.
pub fn calibrate_to_gains(
    template: &ChannelParams,
    length_km: f64,
    q_mu: f64,
    q_0: f64,
    budgets: &Budgets,
    search: &SearchSpec,
    seed: u64,
) -> Result<(ChannelParams, OptimizationResult)> {
    if !(q_mu > q_0 && q_0 >= 0.0 && q_mu < 1.0) {
        return Err(Error::InvalidParameter(format!("cannot fit gains Q_mu={q_mu}, Q_0={q_0}")));
    }
    let base = ChannelParams { vacuum_yield_override: Some(q_0), ..template.with_length(length_km) };
    let loss = base.fiber_transmission() * base.detector_efficiency;
    let fit = |mu: f64| -> Result<ChannelParams> {
        let eta = -(-(q_mu - q_0)).ln_1p() / mu;
        let qnd = eta / loss;
        if !(qnd > 0.0 && qnd <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fitted QND success probability {qnd} at {length_km} km is not a probability"
            )));
        }
        Ok(ChannelParams { qnd_success_prob: qnd, ..base.clone() })
    };
    let mut mu = 0.7;
    let mut last = None;
    for _ in 0..12 {
        let ch = fit(mu)?;
        let r = optimize(&ch, budgets, search, EstimationMode::Finite, seed)?;
        let settled = (r.mu - mu).abs() < 1e-6;
        mu = r.mu;
        last = Some((ch, r));
        if settled {
            break;
        }
    }
    let (ch, r) = last.expect("at least one iteration");
    Ok((ch, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub length_km: f64,
    pub eta: f64,
    pub y0: f64,
    pub qnd_success_prob: f64,
    pub decoy: OptimizationResult,
    pub n_original: f64,
}

/// Optimizes the decoy protocol at each distance and evaluates the original
/// protocol at the same transmittance.
pub fn sweep_distance(
    template: &ChannelParams,
    distances: &[f64],
    budgets: &Budgets,
    search: &SearchSpec,
    calibration: Calibration,
    seed: u64,
) -> Result<Vec<DistanceRow>> {
    if distances.is_empty() {
        return Err(Error::InvalidParameter("no distances given".into()));
    }
    distances
        .iter()
        .map(|&l| {
            let (ch, decoy) = match calibration {
                Calibration::Fixed => {
                    let ch = template.with_length(l);
                    let r = optimize(&ch, budgets, search, EstimationMode::Finite, seed)?;
                    (ch, r)
                }
                Calibration::MeasuredGains => {
                    let run = reference::measured_run(l)
                        .ok_or_else(|| Error::InvalidParameter(format!("no measured gains at {l} km")))?;
                    calibrate_to_gains(template, l, run.q_mu, run.q_0, budgets, search, seed)?
                }
            };
            let eta = effective_transmittance(&ch);
            Ok(DistanceRow {
                length_km: l,
                eta,
                y0: ch.vacuum_yield(),
                qnd_success_prob: ch.qnd_success_prob,
                n_original: n_bound_original(budgets.size as f64, budgets.eps, eta)?,
                decoy,
            })
        })
        .collect()
}
