//! Command-line front end. Every subcommand reads an optional parameter
//! file, does its work through the library and emits a JSON report.
//!
//! Exit codes: 0 on success, 1 on bad input, 2 when the channel is too lossy
//! for the requested budgets.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::decoy::{analyze_observation, n_bound_finite, threshold_check, BoundResult, Decision};
use crate::error::{Error, Result};
use crate::hom::{breakdown, HomBreakdown};
use crate::i1dc::{simulate_replay, ReplaySummary};
use crate::optimizer::{
    calibrate_to_gains, optimize, sweep_distance, Calibration, DistanceRow, EstimationMode, OptimizationResult,
};
use crate::params::{parse_counts, Config};
use crate::protocol::{plan_run, run_protocol, Outcome, RunPlan, Soundness, TransportKind};
use crate::reference;

/// Bumped whenever a report, CSV or record layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// Largest pulse count `simulate` will attempt.
pub const MAX_SIMULATED_PULSES: u64 = 1_000_000_000;

#[derive(Debug, Parser)]
#[command(name = "rbqp", version, about = "Decoy-state remote blind qubit preparation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationArg {
    Fixed,
    Measured,
}

impl From<CalibrationArg> for Calibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Fixed => Calibration::Fixed,
            CalibrationArg::Measured => Calibration::MeasuredGains,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Finite,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Inproc,
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Records,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Parameter file of `key = value` lines.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize source intensities and probabilities at one distance.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fixed")]
        calibration: CalibrationArg,
        #[arg(long, value_enum, default_value = "finite")]
        mode: ModeArg,
    },
    /// Run the protocol end to end and write the transcript to --out.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "inproc")]
        transport: TransportArg,
        /// Where to write the JSON report; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Required pulses against distance for the decoy and original protocols.
    Curves {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fiber lengths in km.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        distances: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "fixed")]
        calibration: CalibrationArg,
    },
    /// Bound the single-photon detections from a count file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// CSV of `label,sent,detected` rows.
        #[arg(long)]
        counts: PathBuf,
    },
    /// Replay the I1DC grouping on noisy equatorial qubits.
    I1dc {
        #[command(flatten)]
        common: Common,
    },
    /// HOM visibility breakdown for the configured filters and photon numbers.
    Hom {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub transport: TransportKind,
    pub plan: RunPlan,
    /// Present when the pulse count came from the planner.
    pub n_threshold: Option<f64>,
    pub n_bound: Option<f64>,
    pub outcome: Outcome,
    pub soundness: Soundness,
    pub transcript_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSummary {
    pub bounds: BoundResult,
    pub decision: Decision,
    /// Pulse count the finite bound asks for, when the bound is informative.
    pub n_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: &'static str,
    pub seed: u64,
    pub inputs: Config,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub distances: Vec<DistanceRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic: Option<OptimizationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i1dc: Option<ReplaySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hom: Option<HomBreakdown>,
}

impl RunReport {
    fn new(command: &'static str, seed: u64, inputs: Config) -> Self {
        RunReport {
            format_version: FORMAT_VERSION,
            command,
            seed,
            inputs,
            distances: Vec::new(),
            asymptotic: None,
            simulation: None,
            estimate: None,
            i1dc: None,
            hom: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

fn load(params: Option<&Path>) -> Result<Config> {
    params.map_or_else(|| Ok(Config::default()), Config::read)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", p.display())))
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| Error::Transport(format!("stdout: {e}"))),
    }
}

pub fn cmd_optimize(
    params: Option<&Path>,
    seed: u64,
    calibration: Calibration,
    mode: EstimationMode,
) -> Result<RunReport> {
    let cfg = load(params)?;
    let mut report = RunReport::new("optimize", seed, cfg.clone());
    let length = cfg.channel.fiber_length_km;
    match mode {
        EstimationMode::Finite => {
            report.distances = sweep_distance(&cfg.channel, &[length], &cfg.budgets, &cfg.search, calibration, seed)?;
        }
        EstimationMode::Asymptotic => {
            let ch = match calibration {
                Calibration::Fixed => cfg.channel.clone(),
                Calibration::MeasuredGains => {
                    let run = reference::measured_run(length)
                        .ok_or_else(|| Error::InvalidParameter(format!("no measured gains at {length} km")))?;
                    calibrate_to_gains(&cfg.channel, length, run.q_mu, run.q_0, &cfg.budgets, &cfg.search, seed)?.0
                }
            };
            report.asymptotic = Some(optimize(&ch, &cfg.budgets, &cfg.search, mode, seed)?);
        }
    }
    Ok(report)
}

/// Runs the protocol and returns the report with the transcript bytes.
pub fn cmd_simulate(params: Option<&Path>, seed: u64, transport: TransportKind) -> Result<(RunReport, Vec<u8>)> {
    let cfg = load(params)?;
    let (plan, n_threshold, n_bound) = match (cfg.source(), cfg.n_pulses) {
        (Ok(src), Some(n)) => (RunPlan { src, n_pulses: n, batch_size: cfg.batch_size }, None, None),
        (Ok(src), None) => {
            let (n, _) = crate::optimizer::objective(&src, &cfg.channel, EstimationMode::Finite)?;
            let b = crate::protocol::self_consistent_bound(&src, &cfg.channel, n)?;
            let total = n.max(b);
            if total > MAX_SIMULATED_PULSES as f64 {
                return Err(too_many(total));
            }
            (RunPlan { src, n_pulses: total as u64, batch_size: cfg.batch_size }, Some(n), Some(b))
        }
        (Err(_), _) => {
            let p = plan_run(&cfg.channel, &cfg.budgets, &cfg.search, cfg.batch_size, seed)?;
            let (mut plan, t, b) = (p.plan, p.n_threshold, p.n_bound);
            if let Some(n) = cfg.n_pulses {
                plan.n_pulses = n;
            }
            (plan, Some(t), Some(b))
        }
    };
    if plan.n_pulses > MAX_SIMULATED_PULSES {
        return Err(too_many(plan.n_pulses as f64));
    }
    let out = run_protocol(&plan, &cfg.channel, transport, seed)?;
    let bytes = out.transcript.to_bytes();
    let mut report = RunReport::new("simulate", seed, cfg);
    report.simulation = Some(SimulationSummary {
        transport,
        plan,
        n_threshold,
        n_bound,
        outcome: out.outcome,
        soundness: out.soundness,
        transcript_records: out.transcript.len(),
    });
    Ok((report, bytes))
}

fn too_many(n: f64) -> Error {
    Error::InvalidParameter(format!("{n:e} pulses exceed the simulation limit of {MAX_SIMULATED_PULSES}"))
}

/// One line of the curves table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub length_km: f64,
    pub eta_eff: f64,
    pub y0: f64,
    pub eta_qnd: f64,
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub n_decoy: f64,
    pub n_original: f64,
}

impl From<&DistanceRow> for CurveRow {
    fn from(r: &DistanceRow) -> Self {
        CurveRow {
            length_km: r.length_km,
            eta_eff: r.eta,
            y0: r.y0,
            eta_qnd: r.qnd_success_prob,
            mu: r.decoy.mu,
            nu: r.decoy.nu,
            p_mu: r.decoy.p_mu,
            p_nu: r.decoy.p_nu,
            n_decoy: r.decoy.n_required,
            n_original: r.n_original,
        }
    }
}

const CURVES_BANNER: &str = "# rbqp curves format 1\n";

pub fn write_curves(rows: &[CurveRow], format: FormatArg) -> Vec<u8> {
    let mut out = CURVES_BANNER.as_bytes().to_vec();
    match format {
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).expect("in-memory write");
            }
            out.extend(w.into_inner().expect("in-memory flush"));
        }
        FormatArg::Records => {
            for r in rows {
                out.extend(serde_json::to_string(r).expect("rows serialize").bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

/// Inverse of [`write_curves`].
pub fn parse_curves(text: &str, format: FormatArg) -> Result<Vec<CurveRow>> {
    if !text.starts_with(CURVES_BANNER) {
        return Err(Error::Parse { line: 1, message: "missing or unsupported curves banner".into() });
    }
    match format {
        FormatArg::Csv => csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes())
            .deserialize()
            .map(|r| {
                r.map_err(|e: csv::Error| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })
            })
            .collect(),
        FormatArg::Records => text
            .lines()
            .enumerate()
            .skip(1)
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
            .collect(),
    }
}

pub fn cmd_curves(
    params: Option<&Path>,
    seed: u64,
    distances: &[f64],
    calibration: Calibration,
) -> Result<(RunReport, Vec<CurveRow>)> {
    if distances.is_empty() {
        return Err(Error::InvalidParameter("--distances needs at least one value".into()));
    }
    let cfg = load(params)?;
    let rows = sweep_distance(&cfg.channel, distances, &cfg.budgets, &cfg.search, calibration, seed)?;
    let curves = rows.iter().map(CurveRow::from).collect();
    let mut report = RunReport::new("curves", seed, cfg);
    report.distances = rows;
    Ok((report, curves))
}

pub fn cmd_estimate(params: Option<&Path>, counts: &Path) -> Result<RunReport> {
    let cfg = load(params)?;
    let src = cfg.source()?;
    let text = std::fs::read_to_string(counts)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", counts.display())))?;
    let obs = parse_counts(&text)?;
    let bounds = analyze_observation(&src, &obs)?;
    let summary =
        EstimateSummary { decision: threshold_check(&src, &obs), n_bound: n_bound_finite(&src, &obs).ok(), bounds };
    let mut report = RunReport::new("estimate", 0, cfg);
    report.estimate = Some(summary);
    Ok(report)
}

pub fn cmd_i1dc(params: Option<&Path>, seed: u64) -> Result<RunReport> {
    let cfg = load(params)?;
    let length = cfg.channel.fiber_length_km;
    let fidelity = match cfg.noise_fidelity {
        Some(f) => f,
        None => reference::mean_qnd_fidelity(length).ok_or_else(|| {
            Error::InvalidParameter(format!("no measured fidelities at {length} km; set noise_fidelity"))
        })?,
    };
    let summary = simulate_replay(cfg.n_signal as usize, cfg.budgets.size as usize, fidelity, seed)?;
    let mut report = RunReport::new("i1dc", seed, cfg);
    report.i1dc = Some(summary);
    Ok(report)
}

pub fn cmd_hom(params: Option<&Path>) -> Result<RunReport> {
    let cfg = load(params)?;
    let b = breakdown(&cfg.filters, &cfg.photons)?;
    let mut report = RunReport::new("hom", 0, cfg);
    report.hom = Some(b);
    Ok(report)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RBQP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("RBQP_THREADS={raw:?} is not a thread count")))?;
    // 0 keeps rayon's default. A second call in one process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Optimize { common, calibration, mode } => {
            let mode = match mode {
                ModeArg::Finite => EstimationMode::Finite,
                ModeArg::Asymptotic => EstimationMode::Asymptotic,
            };
            let r = cmd_optimize(common.params.as_deref(), common.seed, calibration.into(), mode)?;
            write_output(common.out.as_deref(), r.to_json().as_bytes())
        }
        Command::Simulate { common, transport, report } => {
            let kind = match transport {
                TransportArg::Inproc => TransportKind::Inproc,
                TransportArg::Socket => TransportKind::Socket,
            };
            let (r, transcript) = cmd_simulate(common.params.as_deref(), common.seed, kind)?;
            write_output(common.out.as_deref(), &transcript)?;
            match (report, common.out.is_some()) {
                (Some(p), _) => write_output(Some(&p), r.to_json().as_bytes()),
                (None, true) => write_output(None, r.to_json().as_bytes()),
                // Transcript already went to stdout.
                (None, false) => Ok(()),
            }
        }
        Command::Curves { common, distances, format, calibration } => {
            let (_, rows) = cmd_curves(common.params.as_deref(), common.seed, &distances, calibration.into())?;
            write_output(common.out.as_deref(), &write_curves(&rows, format))
        }
        Command::Estimate { common, counts } => {
            let r = cmd_estimate(common.params.as_deref(), &counts)?;
            write_output(common.out.as_deref(), r.to_json().as_bytes())
        }
        Command::I1dc { common } => {
            let r = cmd_i1dc(common.params.as_deref(), common.seed)?;
            write_output(common.out.as_deref(), r.to_json().as_bytes())
        }
        Command::Hom { common } => {
            let r = cmd_hom(common.params.as_deref())?;
            write_output(common.out.as_deref(), r.to_json().as_bytes())
        }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rbqp: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn malformed_params_exit_one() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "bad.txt", "S = 10\nnot a line\n");
        let err = cmd_optimize(Some(&p), 0, Calibration::Fixed, EstimationMode::Finite).unwrap_err();
        assert_eq!(err, Error::Parse { line: 2, message: "expected key = value, got \"not a line\"".into() });
        assert_eq!(exit_code(&err), 1);
        let code = run(["rbqp", "optimize", "--params", p.to_str().unwrap()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn infeasible_budgets_exit_two() {
        let d = tempfile::tempdir().unwrap();
        // Without dark counts the gains vanish along with the transmittance.
        let p = write(&d, "lossy.txt", "length_km = 5000\ny0 = 0\ngrid = 8\n");
        assert_eq!(run(["rbqp", "optimize", "--params", p.to_str().unwrap()]), 2);
    }

    #[test]
    fn unknown_flags_exit_one() {
        assert_eq!(run(["rbqp", "optimize", "--bogus"]), 1);
        assert_eq!(run(["rbqp", "--help"]), 0);
    }

    #[test]
    fn empty_distance_list_rejected() {
        let err = cmd_curves(None, 0, &[], Calibration::Fixed).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("c.csv");
        assert_eq!(run(["rbqp", "curves", "--distances", "", "--out", out.to_str().unwrap()]), 1);
    }

    #[test]
    fn curves_round_trip_both_formats() {
        let rows = vec![
            CurveRow {
                length_km: 26.0,
                eta_eff: 0.1 / 3.0,
                y0: 3.2e-6,
                eta_qnd: 1.0,
                mu: 0.7592,
                nu: 0.1,
                p_mu: 0.88,
                p_nu: 0.09,
                n_decoy: 1.2345678901234e11,
                n_original: 1.1e22,
            },
            CurveRow { length_km: 0.0, n_decoy: 5.0, ..CurveRow::from_parts_for_test() },
        ];
        for f in [FormatArg::Csv, FormatArg::Records] {
            let bytes = write_curves(&rows, f);
            let text = String::from_utf8(bytes.clone()).unwrap();
            let back = parse_curves(&text, f).unwrap();
            assert_eq!(back, rows);
            assert_eq!(write_curves(&back, f), bytes);
        }
        assert!(parse_curves("length_km\n", FormatArg::Csv).is_err());
    }

    impl CurveRow {
        fn from_parts_for_test() -> Self {
            CurveRow {
                length_km: 0.0,
                eta_eff: 1e-3,
                y0: 0.0,
                eta_qnd: 0.5,
                mu: 0.5,
                nu: 0.05,
                p_mu: 0.5,
                p_nu: 0.25,
                n_decoy: 1.0,
                n_original: 2.0,
            }
        }
    }

    #[test]
    fn estimate_reads_count_files() {
        let d = tempfile::tempdir().unwrap();
        let p =
            write(&d, "p.txt", "S = 10\neps = 1e-3\neps_d = 1e-3\nmu = 0.95\nnu = 0.12\np_mu = 0.69\np_nu = 0.31\n");
        let c = write(&d, "c.csv", "label,sent,detected\nmu,57000,5200\nnu,26000,310\n0,1000,0\n");
        let r = cmd_estimate(Some(&p), &c).unwrap();
        let e = r.estimate.unwrap();
        assert!(e.bounds.m1_lower > 0.0 && e.bounds.m1_lower < e.bounds.m_mu);
        assert!(e.n_bound.is_some());
    }

    #[test]
    fn hom_and_i1dc_reports() {
        let r = cmd_hom(None).unwrap();
        let h = r.hom.unwrap();
        assert!((h.spectral - 0.9847).abs() < 1e-3);
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "p.txt", "S = 10\nn_signal = 45\n");
        let r = cmd_i1dc(Some(&p), 1).unwrap();
        assert_eq!(r.i1dc.unwrap().census.get(&5), Some(&5));
        let q = write(&d, "q.txt", "length_km = 13\n");
        assert!(cmd_i1dc(Some(&q), 1).is_err());
    }

    #[test]
    fn simulate_abort_path_reports_reason() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "p.txt",
            "S = 2\neps = 0.5\neps_d = 0.5\neta_qnd = 0\nmu = 0.9\nnu = 0.1\np_mu = 0.7\np_nu = 0.2\nn_pulses = 64\nbatch_size = 16\n",
        );
        let (r, transcript) = cmd_simulate(Some(&p), 3, TransportKind::Inproc).unwrap();
        let s = r.simulation.unwrap();
        assert!(matches!(s.outcome, Outcome::Aborted { .. }));
        assert!(String::from_utf8(transcript).unwrap().contains("\"tag\":\"ABORT\""));
    }
}
