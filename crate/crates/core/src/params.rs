//! Flat `key = value` parameter files and per-intensity count files.
//!
//! ```text
//! # budgets
//! eps = 1e-10
//! S = 1000
//! length_km = 50
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Intensity, SourceParams};
use crate::decoy::{DecoyObservation, IntensityCounts};
use crate::error::{Error, Result};
use crate::hom::{FilterSpec, PhotonNumbers};
use crate::optimizer::{Budgets, SearchSpec};
use crate::reference;

/// Everything a subcommand may need, with experimental defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub channel: ChannelParams,
    pub budgets: Budgets,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub p_mu: Option<f64>,
    pub p_nu: Option<f64>,
    /// Pulses sent in a protocol run; derived from the finite bound if absent.
    pub n_pulses: Option<u64>,
    pub batch_size: u64,
    pub search: SearchSpec,
    pub filters: FilterSpec,
    pub photons: PhotonNumbers,
    /// Signal qubits and single-state fidelity for the I1DC replay.
    pub n_signal: u64,
    pub noise_fidelity: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let channel = ChannelParams::default();
        Config {
            photons: PhotonNumbers {
                n1: reference::MU_SPDC,
                n2: reference::N_WCP,
                eta: reference::DETECTOR_EFFICIENCY,
                eta_i: reference::IDLER_EFFICIENCY,
            },
            channel,
            budgets: Budgets::default(),
            mu: None,
            nu: None,
            p_mu: None,
            p_nu: None,
            n_pulses: None,
            batch_size: 4096,
            search: SearchSpec::default(),
            filters: FilterSpec {
                sigma_p: reference::SIGMA_P,
                sigma_1: reference::SIGMA_1,
                sigma_2: reference::SIGMA_2,
            },
            n_signal: reference::I1DC_SIGNAL_PULSES,
            noise_fidelity: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse { line, message: format!("cannot parse value {raw:?} for {key}") })
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        let mut seen = BTreeSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, message: format!("expected key = value, got {content:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse { line, message: format!("duplicate key {key}") });
            }
            let f = || parse_value::<f64>(line, key, value);
            let u = || parse_value::<u64>(line, key, value);
            match key {
                "eps" => c.budgets.eps = f()?,
                "eps_d" => c.budgets.eps_d = f()?,
                "S" => c.budgets.size = u()?,
                "eta_d" => c.channel.detector_efficiency = f()?,
                "p_dark" => c.channel.dark_count_prob = f()?,
                "mu_spdc" => c.photons.n1 = f()?,
                "alpha" => c.channel.loss_coeff_db_per_km = f()?,
                "length_km" => c.channel.fiber_length_km = f()?,
                "eta_qnd" => c.channel.qnd_success_prob = f()?,
                "eta_i" => {
                    c.channel.idler_efficiency = f()?;
                    c.photons.eta_i = c.channel.idler_efficiency;
                }
                "n_detectors" => c.channel.n_detectors = parse_value(line, key, value)?,
                "y0" => c.channel.vacuum_yield_override = Some(f()?),
                "qnd_noise" => c.channel.qnd_noise = f()?,
                "mu" => c.mu = Some(f()?),
                "nu" => c.nu = Some(f()?),
                "p_mu" => c.p_mu = Some(f()?),
                "p_nu" => c.p_nu = Some(f()?),
                "n_pulses" => c.n_pulses = Some(u()?),
                "batch_size" => c.batch_size = u()?,
                "grid" => c.search.resolution = parse_value(line, key, value)?,
                "sigma_p" => c.filters.sigma_p = f()?,
                "sigma_1" => c.filters.sigma_1 = f()?,
                "sigma_2" => c.filters.sigma_2 = f()?,
                "n_wcp" => c.photons.n2 = f()?,
                "eta_hom" => c.photons.eta = f()?,
                "n_signal" => c.n_signal = u()?,
                "noise_fidelity" => c.noise_fidelity = Some(f()?),
                _ => return Err(Error::Parse { line, message: format!("unknown key {key}") }),
            }
        }
        c.channel.validate()?;
        if c.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(c)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Source parameters; all four of `mu`, `nu`, `p_mu`, `p_nu` must be set.
    pub fn source(&self) -> Result<SourceParams> {
        match (self.mu, self.nu, self.p_mu, self.p_nu) {
            (Some(mu), Some(nu), Some(p_mu), Some(p_nu)) => self.budgets.source(mu, nu, p_mu, p_nu),
            _ => Err(Error::InvalidParameter("mu, nu, p_mu and p_nu must all be given".into())),
        }
    }
}

/// Reads a CSV count file: one `label,sent,detected` record per intensity,
/// optionally preceded by a header line.
pub fn parse_counts(text: &str) -> Result<DecoyObservation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut counts = [None; 3];
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, got {}", rec.len()) });
        }
        if rec[0].eq_ignore_ascii_case("label") {
            continue;
        }
        let i = Intensity::from_label(&rec[0])
            .ok_or_else(|| Error::Parse { line, message: format!("unknown intensity label {:?}", &rec[0]) })?;
        if counts[i.index()].is_some() {
            return Err(Error::Parse { line, message: format!("intensity {i} listed twice") });
        }
        counts[i.index()] = Some(IntensityCounts {
            sent: parse_value(line, "sent", &rec[1])?,
            detected: parse_value(line, "detected", &rec[2])?,
        });
    }
    let mut out = [IntensityCounts::default(); 3];
    for i in Intensity::ALL {
        out[i.index()] =
            counts[i.index()].ok_or_else(|| Error::Parse { line: 0, message: format!("missing intensity {i}") })?;
    }
    DecoyObservation::new(out)
}

/// Inverse of [`parse_counts`].
pub fn write_counts(obs: &DecoyObservation) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "sent", "detected"]).expect("in-memory write");
    for i in Intensity::ALL {
        let c = obs.counts(i);
        w.write_record([i.label().to_string(), c.sent.to_string(), c.detected.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}
