//! Photon-number statistics of phase-randomized weak coherent pulses and the
//! threshold detection model behind the Server's QND step.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy::{DecoyObservation, IntensityCounts};
use crate::error::{Error, Result};
use crate::rng;

/// Pulses handled by one sampling substream.
pub const PULSE_BLOCK: u64 = 1 << 16;

/// Physical link description. Defaults reproduce the experimental parameter
/// table at zero fiber length with an ideal QND step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub fiber_length_km: f64,
    /// α in dB/km.
    pub loss_coeff_db_per_km: f64,
    pub detector_efficiency: f64,
    /// Dark-count probability per detector per pulse.
    pub dark_count_prob: f64,
    /// Effective QND success probability; a calibration parameter.
    pub qnd_success_prob: f64,
    pub idler_efficiency: f64,
    /// Number of detectors whose dark counts can herald a pulse.
    pub n_detectors: u32,
    /// Replaces the dark-count derived vacuum yield when set.
    pub vacuum_yield_override: Option<f64>,
    /// Depolarizing strength applied to every stored qubit.
    pub qnd_noise: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            fiber_length_km: 0.0,
            loss_coeff_db_per_km: 0.2,
            detector_efficiency: 0.105,
            dark_count_prob: 4e-7,
            qnd_success_prob: 1.0,
            idler_efficiency: 0.08,
            n_detectors: 8,
            vacuum_yield_override: None,
            qnd_noise: 0.0,
        }
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} is not a probability")))
    }
}

impl ChannelParams {
    /// A lossless, noiseless link with the given overall transmittance.
    pub fn ideal(eta: f64) -> Self {
        ChannelParams {
            fiber_length_km: 0.0,
            loss_coeff_db_per_km: 0.0,
            detector_efficiency: 1.0,
            dark_count_prob: 0.0,
            qnd_success_prob: eta,
            idler_efficiency: 1.0,
            n_detectors: 0,
            vacuum_yield_override: None,
            qnd_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fiber_length_km >= 0.0 && self.fiber_length_km.is_finite()) {
            return Err(Error::InvalidParameter(format!("fiber length {} must be non-negative", self.fiber_length_km)));
        }
        if !(self.loss_coeff_db_per_km >= 0.0 && self.loss_coeff_db_per_km.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loss coefficient {} must be non-negative",
                self.loss_coeff_db_per_km
            )));
        }
        check_probability("detector_efficiency", self.detector_efficiency)?;
        check_probability("dark_count_prob", self.dark_count_prob)?;
        check_probability("qnd_success_prob", self.qnd_success_prob)?;
        check_probability("idler_efficiency", self.idler_efficiency)?;
        check_probability("qnd_noise", self.qnd_noise)?;
        if let Some(y0) = self.vacuum_yield_override {
            check_probability("vacuum_yield", y0)?;
        }
        Ok(())
    }

    pub fn with_length(&self, km: f64) -> Self {
        ChannelParams { fiber_length_km: km, ..self.clone() }
    }

    /// Fiber transmission `10^(−αL/10)`.
    pub fn fiber_transmission(&self) -> f64 {
        10f64.powf(-self.loss_coeff_db_per_km * self.fiber_length_km / 10.0)
    }

    /// Background click probability per pulse, `y0 = 1 − (1 − P_dark)^n_det`.
    pub fn vacuum_yield(&self) -> f64 {
        self.vacuum_yield_override.unwrap_or_else(|| 1.0 - (1.0 - self.dark_count_prob).powi(self.n_detectors as i32))
    }
}

/// `η = 10^(−αL/10) · η_d · η_qnd`
pub fn effective_transmittance(ch: &ChannelParams) -> f64 {
    ch.fiber_transmission() * ch.detector_efficiency * ch.qnd_success_prob
}

/// Gain `Q_λ = y0 + 1 − e^{−ηλ}`, clamped to 1.
pub fn expected_gain(lambda: f64, eta: f64, y0: f64) -> f64 {
    (y0 - (-eta * lambda).exp_m1()).min(1.0)
}

/// Single-photon contribution to the gain, `ημe^{−μ}`.
pub fn expected_single_photon_gain(mu: f64, eta: f64) -> f64 {
    eta * mu * (-mu).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intensity {
    #[serde(rename = "mu")]
    Signal,
    #[serde(rename = "nu")]
    Decoy,
    #[serde(rename = "0")]
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn label(self) -> &'static str {
        match self {
            Intensity::Signal => "mu",
            Intensity::Decoy => "nu",
            Intensity::Vacuum => "0",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "mu" | "signal" => Some(Intensity::Signal),
            "nu" | "decoy" => Some(Intensity::Decoy),
            "0" | "vac" | "vacuum" => Some(Intensity::Vacuum),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Source intensities, their emission probabilities, and protocol budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_0: f64,
    /// Computation size S: number of qubits to prepare.
    pub size: u64,
    pub eps: f64,
    pub eps_d: f64,
}

impl SourceParams {
    /// `p_0` is taken as `1 − p_μ − p_ν`.
    pub fn new(mu: f64, nu: f64, p_mu: f64, p_nu: f64, size: u64, eps: f64, eps_d: f64) -> Result<Self> {
        let s = SourceParams { mu, nu, p_mu, p_nu, p_0: 1.0 - p_mu - p_nu, size, eps, eps_d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > self.nu && self.nu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("need mu > nu >= 0, got mu={} nu={}", self.mu, self.nu)));
        }
        for (n, p) in [("p_mu", self.p_mu), ("p_nu", self.p_nu), ("p_0", self.p_0)] {
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(Error::InvalidParameter(format!("{n} = {p} is not a probability")));
            }
        }
        if (self.p_mu + self.p_nu + self.p_0 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("emission probabilities must sum to 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps = {} outside (0, 1)", self.eps)));
        }
        if !(self.eps_d > 0.0 && self.eps_d <= 1.0) {
            return Err(Error::InvalidParameter(format!("eps_d = {} outside (0, 1]", self.eps_d)));
        }
        if self.size < 1 {
            return Err(Error::InvalidParameter("S must be at least 1".into()));
        }
        Ok(())
    }

    pub fn intensity(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Signal => self.mu,
            Intensity::Decoy => self.nu,
            Intensity::Vacuum => 0.0,
        }
    }

    pub fn probability(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Signal => self.p_mu,
            Intensity::Decoy => self.p_nu,
            Intensity::Vacuum => self.p_0.max(0.0),
        }
    }

    pub fn choose_intensity<R: Rng + ?Sized>(&self, rng: &mut R) -> Intensity {
        let u: f64 = rng.random();
        if u < self.p_mu {
            Intensity::Signal
        } else if u < self.p_mu + self.p_nu {
            Intensity::Decoy
        } else {
            Intensity::Vacuum
        }
    }
}

/// What happened to one pulse on its way through the QND measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseDetection {
    /// Photons emitted by the source.
    pub photons: u32,
    /// Photons that survived fiber, QND and detector losses.
    pub survivors: u32,
    pub detected: bool,
}

impl PulseDetection {
    /// Exactly one photon was emitted and it reached the Server.
    pub fn single_photon_originated(&self) -> bool {
        self.photons == 1 && self.survivors == 1
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 10.0 {
        return Poisson::new(lambda).map(|d| d.sample(rng) as u32).unwrap_or(0);
    }
    // Inversion by sequential search; cheap for the small means used here.
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cum = p;
    let mut k = 0u32;
    while u > cum && p > 0.0 {
        k += 1;
        p *= lambda / f64::from(k);
        cum += p;
    }
    k
}

/// One pulse: Poisson photon number, independent per-photon survival,
/// threshold detection OR'ed with a background click.
pub fn detect_pulse<R: Rng + ?Sized>(rng: &mut R, lambda: f64, eta: f64, y0: f64) -> PulseDetection {
    let photons = poisson(rng, lambda);
    let survivors = (0..photons).filter(|_| rng.random::<f64>() < eta).count() as u32;
    let dark = rng.random::<f64>() < y0;
    PulseDetection { photons, survivors, detected: survivors > 0 || dark }
}

/// Monte Carlo realization of the QND reports, aggregated per intensity.
///
/// Pulses are processed in blocks of [`PULSE_BLOCK`], each with its own
/// substream of `seed`, so the result is independent of thread count.
pub fn sample_detections(src: &SourceParams, ch: &ChannelParams, n_pulses: u64, seed: u64) -> Result<DecoyObservation> {
    if n_pulses < 1 {
        return Err(Error::InvalidParameter("need at least one pulse".into()));
    }
    src.validate()?;
    ch.validate()?;
    let eta = effective_transmittance(ch);
    let y0 = ch.vacuum_yield();
    let blocks = n_pulses.div_ceil(PULSE_BLOCK);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::substream(seed, "channel.pulses", b);
            let len = PULSE_BLOCK.min(n_pulses - b * PULSE_BLOCK);
            let mut c = [IntensityCounts::default(); 3];
            for _ in 0..len {
                let i = src.choose_intensity(&mut rng);
                let d = detect_pulse(&mut rng, src.intensity(i), eta, y0);
                c[i.index()].sent += 1;
                c[i.index()].detected += u64::from(d.detected);
            }
            c
        })
        .reduce(
            || [IntensityCounts::default(); 3],
            |mut a, b| {
                for k in 0..3 {
                    a[k].sent += b[k].sent;
                    a[k].detected += b[k].detected;
                }
                a
            },
        );
    Ok(DecoyObservation::from_counts(counts))
}

/// Aggregate sample with simulation ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSample {
    pub observation: DecoyObservation,
    /// Detected signal pulses that carried exactly one photon.
    pub single_photon_signal_detections: u64,
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Statistically equivalent to [`sample_detections`] but drawn per intensity
/// class with binomials, so it costs O(1) regardless of `n_pulses`. Also
/// reports how many detected signal pulses were single-photon emissions
/// (with the detection caused by the photon or by background).
pub fn sample_with_ground_truth<R: Rng + ?Sized>(
    src: &SourceParams,
    ch: &ChannelParams,
    n_pulses: u64,
    rng: &mut R,
) -> GroundTruthSample {
    let eta = effective_transmittance(ch);
    let y0 = ch.vacuum_yield();
    let n_mu = binomial(rng, n_pulses, src.p_mu);
    let rest = n_pulses - n_mu;
    let p_nu_cond = if src.p_mu < 1.0 { src.p_nu / (1.0 - src.p_mu) } else { 0.0 };
    let n_nu = binomial(rng, rest, p_nu_cond.min(1.0));
    let n_0 = rest - n_nu;

    // Exact yield of the threshold-or-background model: Y_n = 1 − (1−y0)(1−η)^n.
    let gain = |lambda: f64| 1.0 - (1.0 - y0) * (-eta * lambda).exp();
    let mu = src.mu;
    let single_detect = mu * (-mu).exp() * (1.0 - (1.0 - y0) * (1.0 - eta));
    let q_mu = gain(mu);
    let d_single = binomial(rng, n_mu, single_detect);
    let other = ((q_mu - single_detect) / (1.0 - single_detect)).clamp(0.0, 1.0);
    let d_mu = d_single + binomial(rng, n_mu - d_single, other);
    let d_nu = binomial(rng, n_nu, gain(src.nu));
    let d_0 = binomial(rng, n_0, y0);

    GroundTruthSample {
        observation: DecoyObservation::from_counts([
            IntensityCounts { sent: n_mu, detected: d_mu },
            IntensityCounts { sent: n_nu, detected: d_nu },
            IntensityCounts { sent: n_0, detected: d_0 },
        ]),
        single_photon_signal_detections: d_single,
    }
}
