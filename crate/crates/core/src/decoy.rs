//! Finite-size decoy-state analysis: Hoeffding-bounded gains, the two-decoy
//! single-photon lower bound, the failure probability of the grouping step
//! and the pulse-count bounds built from them.

use serde::{Deserialize, Serialize};

use crate::channel::{expected_gain, Intensity, SourceParams};
use crate::error::{Error, Result};

/// Sent and detected pulse counts for one intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityCounts {
    pub sent: u64,
    pub detected: u64,
}

impl IntensityCounts {
    pub fn gain(&self) -> Option<f64> {
        (self.sent > 0).then(|| self.detected as f64 / self.sent as f64)
    }
}

/// Per-intensity counts reported by the QND step, indexed by [`Intensity`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyObservation {
    counts: [IntensityCounts; 3],
}

impl DecoyObservation {
    pub fn new(counts: [IntensityCounts; 3]) -> Result<Self> {
        for (c, i) in counts.iter().zip(Intensity::ALL) {
            if c.detected > c.sent {
                return Err(Error::InvalidParameter(format!(
                    "intensity {i}: {} detections out of {} pulses",
                    c.detected, c.sent
                )));
            }
        }
        Ok(DecoyObservation { counts })
    }

    pub(crate) fn from_counts(counts: [IntensityCounts; 3]) -> Self {
        debug_assert!(counts.iter().all(|c| c.detected <= c.sent));
        DecoyObservation { counts }
    }

    pub fn counts(&self, i: Intensity) -> IntensityCounts {
        self.counts[i.index()]
    }

    pub fn all_counts(&self) -> [IntensityCounts; 3] {
        self.counts
    }

    pub fn gain(&self, i: Intensity) -> Result<f64> {
        self.counts(i).gain().ok_or(Error::EmptyIntensity(i.label()))
    }

    pub fn total_sent(&self) -> u64 {
        self.counts.iter().map(|c| c.sent).sum()
    }

    pub fn total_detected(&self) -> u64 {
        self.counts.iter().map(|c| c.detected).sum()
    }
}

/// Pulse numbers and gains per intensity as real numbers. Built either from an
/// observation or from the expected behavior of a channel, so the same bound
/// code serves the Client's threshold check and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainStatistics {
    pub sent: [f64; 3],
    pub gain: [f64; 3],
}

impl GainStatistics {
    pub fn from_observation(obs: &DecoyObservation) -> Result<Self> {
        let mut sent = [0.0; 3];
        let mut gain = [0.0; 3];
        for i in Intensity::ALL {
            gain[i.index()] = obs.gain(i)?;
            sent[i.index()] = obs.counts(i).sent as f64;
        }
        Ok(GainStatistics { sent, gain })
    }

    /// Nominal statistics: `N_λ = N·p_λ` and `Q_λ` from the gain model.
    pub fn expected(src: &SourceParams, eta: f64, y0: f64, n_total: f64) -> Self {
        let mut sent = [0.0; 3];
        let mut gain = [0.0; 3];
        for i in Intensity::ALL {
            sent[i.index()] = n_total * src.probability(i);
            gain[i.index()] = expected_gain(src.intensity(i), eta, y0);
        }
        GainStatistics { sent, gain }
    }

    pub fn signal_detections(&self) -> f64 {
        self.sent[0] * self.gain[0]
    }
}

/// Two-sided confidence interval on a gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub lower: f64,
    pub gain: f64,
    pub upper: f64,
}

/// `Q ± √(Q·ln(1/ε_d)/(2N))`, clamped to `[0, 1]`.
pub fn hoeffding_interval(q: f64, n: f64, eps_d: f64) -> Result<GainBounds> {
    if !(n > 0.0) {
        return Err(Error::InvalidParameter("Hoeffding interval needs N > 0".into()));
    }
    if !(eps_d > 0.0 && eps_d <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps_d = {eps_d} outside (0, 1]")));
    }
    let w = (q * (1.0 / eps_d).ln() / (2.0 * n)).sqrt();
    Ok(GainBounds { lower: (q - w).max(0.0), gain: q, upper: (q + w).min(1.0) })
}

fn bounds_from_stats(stats: &GainStatistics, eps_d: f64) -> Result<[GainBounds; 3]> {
    let mut out = [GainBounds { lower: 0.0, gain: 0.0, upper: 0.0 }; 3];
    for i in Intensity::ALL {
        let k = i.index();
        if !(stats.sent[k] > 0.0) {
            return Err(Error::EmptyIntensity(i.label()));
        }
        out[k] = hoeffding_interval(stats.gain[k], stats.sent[k], eps_d)?;
    }
    Ok(out)
}

/// Hoeffding interval for every intensity of an observation.
pub fn hoeffding_gain_bounds(obs: &DecoyObservation, eps_d: f64) -> Result<[GainBounds; 3]> {
    let mut out = [GainBounds { lower: 0.0, gain: 0.0, upper: 0.0 }; 3];
    for i in Intensity::ALL {
        let c = obs.counts(i);
        if c.sent == 0 {
            return Err(Error::EmptyIntensity(i.label()));
        }
        out[i.index()] = hoeffding_interval(c.detected as f64 / c.sent as f64, c.sent as f64, eps_d)?;
    }
    Ok(out)
}

fn check_intensities(src: &SourceParams) -> Result<()> {
    let (mu, nu) = (src.mu, src.nu);
    if !(nu > 0.0 && mu > nu && mu * nu - nu * nu > 0.0) {
        return Err(Error::DegenerateIntensities(format!("mu={mu}, nu={nu}")));
    }
    Ok(())
}

/// Unclamped bracket of the two-decoy bound, per signal pulse sent.
fn m1_per_signal_pulse(src: &SourceParams, b: &[GainBounds; 3]) -> f64 {
    let (mu, nu) = (src.mu, src.nu);
    let [q_mu, q_nu, q_0] = b;
    let bracket = q_nu.lower * nu.exp() - q_0.upper - (nu * nu) / (mu * mu) * (q_mu.upper * mu.exp() - q_0.lower);
    mu * mu * (-mu).exp() / (mu * nu - nu * nu) * bracket
}

/// Lower bound on the number of detected single-photon signal pulses,
/// `M₁ᴸ = N p_μ μ² e^{−μ}/(μν−ν²) · [Q_ν⁻e^ν − Q_0⁺ − ν²/μ²·(Q_μ⁺e^μ − Q_0⁻)]`,
/// clamped at zero.
pub fn single_photon_lower_bound(src: &SourceParams, n_total: f64, bounds: &[GainBounds; 3]) -> Result<f64> {
    check_intensities(src)?;
    Ok((n_total * src.p_mu * m1_per_signal_pulse(src, bounds)).max(0.0))
}

/// `P_f = min(1, S·(1−p₁)^m)`
pub fn failure_probability(p1: f64, m: f64, s: f64) -> f64 {
    if p1 >= 1.0 {
        return 0.0;
    }
    (s * (m * (-p1.clamp(0.0, 1.0)).ln_1p()).exp()).min(1.0)
}

/// Hoeffding bracket `M ± √(M·ln(1/ε_d)/2)` on a detection count.
pub fn count_bounds(m: f64, eps_d: f64) -> (f64, f64) {
    let w = (m * (1.0 / eps_d).ln() / 2.0).sqrt();
    ((m - w).max(0.0), m + w)
}

/// Left side of the grouping constraint, `S·(1 − M₁ᴸ/M⁺)^{M⁻/S}`.
pub fn constraint_value(s: f64, m1_lower: f64, m_lower: f64, m_upper: f64) -> f64 {
    if !(m_upper > 0.0) {
        return s;
    }
    let r = (m1_lower / m_upper).clamp(0.0, 1.0);
    if r >= 1.0 {
        return 0.0;
    }
    s * ((m_lower / s) * (-r).ln_1p()).exp()
}

/// Every quantity the Client derives from one round of QND reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub m1_lower: f64,
    pub m_mu: f64,
    pub m_mu_lower: f64,
    pub m_mu_upper: f64,
    /// `M₁ᴸ / (N_μ Q_μ⁺)`
    pub p1_lower: f64,
    pub q_bounds: [GainBounds; 3],
    pub constraint_value: f64,
    /// Set when the single-photon bound was negative before clamping.
    pub clamped: bool,
}

/// Applies all bounds to a set of gain statistics.
pub fn analyze(src: &SourceParams, stats: &GainStatistics) -> Result<BoundResult> {
    check_intensities(src)?;
    let q_bounds = bounds_from_stats(stats, src.eps_d)?;
    let raw = stats.sent[0] * m1_per_signal_pulse(src, &q_bounds);
    let m1_lower = raw.max(0.0);
    let m_mu = stats.signal_detections();
    let (m_mu_lower, m_mu_upper) = count_bounds(m_mu, src.eps_d);
    let denom = stats.sent[0] * q_bounds[0].upper;
    let p1_lower = if denom > 0.0 { m1_lower / denom } else { 0.0 };
    Ok(BoundResult {
        m1_lower,
        m_mu,
        m_mu_lower,
        m_mu_upper,
        p1_lower,
        q_bounds,
        constraint_value: constraint_value(src.size as f64, m1_lower, m_mu_lower, m_mu_upper),
        clamped: raw < 0.0,
    })
}

pub fn analyze_observation(src: &SourceParams, obs: &DecoyObservation) -> Result<BoundResult> {
    analyze(src, &GainStatistics::from_observation(obs)?)
}

/// Pulses needed by the original protocol, `⌈18·ln(S/ε)/η⁴⌉`. Returned as a
/// float because realistic values overflow 64-bit integers.
pub fn n_bound_original(s: f64, eps: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!("transmittance {eta} outside (0, 1]")));
    }
    Ok((18.0 * (s / eps).ln() / eta.powi(4)).ceil())
}

/// Decoy-state bound with infinite statistics,
/// `⌈S/(p_μημ) · ln(ε/S)/ln(1−e^{−μ})⌉`.
pub fn n_bound_asymptotic_decoy(s: f64, eps: f64, eta: f64, mu: f64, p_mu: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!("transmittance {eta} outside (0, 1]")));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("signal intensity {mu} must be positive")));
    }
    if !(p_mu > 0.0 && p_mu <= 1.0) {
        return Err(Error::InvalidParameter(format!("p_mu = {p_mu} outside (0, 1]")));
    }
    let ln_miss = (-(-mu).exp()).ln_1p();
    Ok((s / (p_mu * eta * mu) * (eps / s).ln() / ln_miss).ceil())
}

/// `N = S·ln(S/ε) / (p_μ Q_μ⁺ · (−ln(1−p₁⁻)))`, the pulse count at which the
/// expected number of signal detections per group reaches the point where a
/// group with no single photon has probability below `ε/S`.
pub fn n_bound_from_p1(src: &SourceParams, q_mu_upper: f64, p1_lower: f64) -> Result<f64> {
    if !(p1_lower > 0.0) {
        return Err(Error::InsufficientDecoyStatistics(p1_lower));
    }
    if p1_lower >= 1.0 {
        return Err(Error::ImpossibleBound(p1_lower));
    }
    let s = src.size as f64;
    Ok((s * (s / src.eps).ln() / (src.p_mu * q_mu_upper * -(-p1_lower).ln_1p())).ceil())
}

pub fn n_bound_finite(src: &SourceParams, obs: &DecoyObservation) -> Result<f64> {
    let r = analyze_observation(src, obs)?;
    n_bound_from_p1(src, r.q_bounds[0].upper, r.p1_lower)
}

/// Why the Client stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    ThresholdNotMet,
    InsufficientStatistics,
    ProtocolViolation,
}

impl AbortReason {
    pub fn code(self) -> &'static str {
        match self {
            AbortReason::ThresholdNotMet => "threshold_not_met",
            AbortReason::InsufficientStatistics => "insufficient_statistics",
            AbortReason::ProtocolViolation => "protocol_violation",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        [AbortReason::ThresholdNotMet, AbortReason::InsufficientStatistics, AbortReason::ProtocolViolation]
            .into_iter()
            .find(|r| r.code() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Continue,
    Abort(AbortReason),
}

/// Continue iff the grouping constraint holds (inclusive). Observations that
/// cannot be analyzed at all, such as an intensity that was never sent, abort.
pub fn threshold_check(src: &SourceParams, obs: &DecoyObservation) -> Decision {
    match analyze_observation(src, obs) {
        Ok(r) if r.constraint_value <= src.eps => Decision::Continue,
        Ok(_) => Decision::Abort(AbortReason::ThresholdNotMet),
        Err(_) => Decision::Abort(AbortReason::InsufficientStatistics),
    }
}
