//! Interlaced 1-D cluster computation: a group of equatorial qubits is fused
//! pairwise by `CZ·(H⊗I)` followed by an X measurement of the first qubit,
//! leaving one qubit whose angle only the Client can compute.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::{apply_noise, fidelity, mean_std, plus_theta_state, Angle, DensityMatrix, NoiseModel};
use crate::rng;

type C = Complex64;
type M4 = [[C; 4]; 4];

/// Smallest branch probability that may be forced.
pub const MIN_BRANCH_PROB: f64 = 1e-15;

fn kron(a: &[[C; 2]; 2], b: &[[C; 2]; 2]) -> M4 {
    let mut out = [[C::new(0.0, 0.0); 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Rows of `(⟨±|⊗I)·CZ·(H⊗I)`: maps the two-qubit space onto the surviving qubit.
fn kraus(y: u8) -> [[C; 4]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sign = if y == 0 { 1.0 } else { -1.0 };
    // ⟨±| = (1, ±1)/√2 on the first qubit; CZ flips the sign of |11⟩.
    let bra = [h, sign * h];
    let mut out = [[C::new(0.0, 0.0); 4]; 2];
    for (b, row) in out.iter_mut().enumerate() {
        for a_in in 0..2 {
            let mut v = 0.0;
            for (a, bra_a) in bra.iter().enumerate() {
                let hadamard = if a == 1 && a_in == 1 { -h } else { h };
                let cz = if a == 1 && b == 1 { -1.0 } else { 1.0 };
                v += bra_a * cz * hadamard;
            }
            row[2 * a_in + b] = C::new(v, 0.0);
        }
    }
    out
}

fn apply_branch(rho: &M4, y: u8) -> ([[C; 2]; 2], f64) {
    let k = kraus(y);
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = C::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    acc += k[r][i] * rho[i][j] * k[c][j].conj();
                }
            }
            out[r][c] = acc;
        }
    }
    let p = (out[0][0] + out[1][1]).re;
    (out, p)
}

/// One fusion step. `rho_a` is measured, `rho_b` survives. Returns the
/// outcome bit, the normalized state of the surviving qubit and the
/// probability of that outcome.
pub fn i1dc_step_with_rng<R: Rng + ?Sized>(
    rho_a: &DensityMatrix,
    rho_b: &DensityMatrix,
    forced: Option<u8>,
    rng: &mut R,
) -> Result<(u8, DensityMatrix, f64)> {
    let joint = kron(&rho_a.entries(), &rho_b.entries());
    let y = match forced {
        Some(y @ (0 | 1)) => y,
        Some(y) => return Err(Error::InvalidParameter(format!("outcome bit {y} is not 0 or 1"))),
        None => {
            let (_, p0) = apply_branch(&joint, 0);
            u8::from(rng.random::<f64>() >= p0)
        }
    };
    let (m, p) = apply_branch(&joint, y);
    if p < MIN_BRANCH_PROB {
        return Err(Error::ImpossibleOutcome(p));
    }
    let scaled = [[m[0][0] / p, m[0][1] / p], [m[1][0] / p, m[1][1] / p]];
    Ok((y, DensityMatrix::from_raw(scaled), p))
}

pub fn i1dc_step(
    rho_a: &DensityMatrix,
    rho_b: &DensityMatrix,
    forced: Option<u8>,
    seed: u64,
) -> Result<(u8, DensityMatrix, f64)> {
    i1dc_step_with_rng(rho_a, rho_b, forced, &mut rng::substream(seed, "i1dc.step", 0))
}

/// `θ_next + (−1)^y·θ_acc`: the angle of the surviving qubit.
pub fn client_angle_update(acc: Angle, next: Angle, y: u8) -> Angle {
    if y == 0 {
        next + acc
    } else {
        next - acc
    }
}

/// Folds the Client's secret angles with the Server's outcome bits.
pub fn client_final_angle(angles: &[Angle], y: &[u8]) -> Option<Angle> {
    let (first, rest) = angles.split_first()?;
    if rest.len() != y.len() {
        return None;
    }
    Some(rest.iter().zip(y).fold(*first, |acc, (&next, &bit)| client_angle_update(acc, next, bit)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I1dcGroup {
    pub states: Vec<DensityMatrix>,
    /// Ground-truth angles, known only in simulation.
    pub true_angles: Option<Vec<Angle>>,
}

impl I1dcGroup {
    pub fn new(states: Vec<DensityMatrix>, true_angles: Option<Vec<Angle>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter("a group needs at least one qubit".into()));
        }
        if let Some(a) = &true_angles {
            if a.len() != states.len() {
                return Err(Error::InvalidParameter(format!("{} angles for {} states", a.len(), states.len())));
            }
        }
        for s in &states {
            s.validate()?;
        }
        Ok(I1dcGroup { states, true_angles })
    }

    pub fn pure(angles: &[Angle]) -> Result<Self> {
        I1dcGroup::new(angles.iter().map(|&a| plus_theta_state(a)).collect(), Some(angles.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I1dcOutcome {
    pub y: Vec<u8>,
    pub final_state: DensityMatrix,
    /// Angle the Client computes from its secrets and `y`; present when the
    /// group carries ground truth.
    pub final_angle_client: Option<Angle>,
}

pub fn run_group_with_rng<R: Rng + ?Sized>(group: &I1dcGroup, rng: &mut R) -> Result<I1dcOutcome> {
    let (first, rest) =
        group.states.split_first().ok_or_else(|| Error::InvalidParameter("a group needs at least one qubit".into()))?;
    let mut state = *first;
    let mut y = Vec::with_capacity(rest.len());
    for next in rest {
        let (bit, out, _) = i1dc_step_with_rng(&state, next, None, rng)?;
        y.push(bit);
        state = out;
    }
    let final_angle_client = group.true_angles.as_deref().and_then(|a| client_final_angle(a, &y));
    Ok(I1dcOutcome { y, final_state: state, final_angle_client })
}

pub fn run_group(group: &I1dcGroup, seed: u64) -> Result<I1dcOutcome> {
    run_group_with_rng(group, &mut rng::substream(seed, "i1dc.group", 0))
}

/// Sizes of `s` groups covering `n` items: `n mod s` groups get `⌈n/s⌉`, the
/// rest `⌊n/s⌋`, larger groups first.
pub fn group_sizes(n: usize, s: usize) -> Vec<usize> {
    if s == 0 {
        return Vec::new();
    }
    let (q, r) = (n / s, n % s);
    (0..s).map(|g| if g < r { q + 1 } else { q }).collect()
}

/// Outcome of a replay of the recorded I1DC run with modeled noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub mean_fidelity: f64,
    pub std_fidelity: f64,
    /// Group size → number of groups.
    pub census: BTreeMap<usize, usize>,
}

/// Splits `n_signal` noisy equatorial qubits into `s` groups, runs every
/// group and scores its output against the noiseless target angle. Each
/// input state is depolarized so that its fidelity equals `noise_fidelity`.
pub fn simulate_replay(n_signal: usize, s: usize, noise_fidelity: f64, seed: u64) -> Result<ReplaySummary> {
    if s == 0 || n_signal < s {
        return Err(Error::InvalidParameter(format!("need n_signal >= S >= 1, got {n_signal} and {s}")));
    }
    if !(0.5..=1.0).contains(&noise_fidelity) {
        return Err(Error::InvalidParameter(format!("single-state fidelity {noise_fidelity} outside [0.5, 1]")));
    }
    let strength = 2.0 * (1.0 - noise_fidelity);
    let sizes = group_sizes(n_signal, s);
    let scores = sizes
        .par_iter()
        .enumerate()
        .map(|(g, &k)| {
            let mut rng = rng::substream(seed, "replay.group", g as u64);
            let angles: Vec<Angle> = (0..k).map(|_| Angle::random(&mut rng)).collect();
            let states = angles
                .iter()
                .map(|&a| apply_noise(&plus_theta_state(a), NoiseModel::Depolarizing, strength))
                .collect::<Result<Vec<_>>>()?;
            let out = run_group_with_rng(&I1dcGroup::new(states, Some(angles))?, &mut rng)?;
            let target = out.final_angle_client.expect("ground truth supplied");
            Ok(fidelity(&out.final_state, target))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean_fidelity, std_fidelity) = mean_std(&scores);
    let mut census = BTreeMap::new();
    for k in sizes {
        *census.entry(k).or_insert(0) += 1;
    }
    Ok(ReplaySummary { mean_fidelity, std_fidelity, census })
}
