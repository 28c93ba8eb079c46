//! Client and Server state machines. Each transition is a deterministic
//! function of the current state and the inbound message.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::{detect_pulse, effective_transmittance, ChannelParams, Intensity, SourceParams};
use crate::decoy::{threshold_check, AbortReason, Decision, DecoyObservation, IntensityCounts};
use crate::error::{Error, Result};
use crate::i1dc::{client_final_angle, group_sizes, run_group_with_rng, I1dcGroup};
use crate::qubit::{apply_noise, plus_theta_state, Angle, DensityMatrix, NoiseModel};
use crate::rng;

use super::message::*;

/// A phase-randomized weak coherent pulse on the optical link.
#[derive(Debug, Clone, PartialEq)]
pub struct WcpPulse {
    pub mean_photon_number: f64,
    pub polarization: DensityMatrix,
}

/// Optical output that accompanies a `PULSE_BATCH` announcement.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalBatch {
    pub batch: u64,
    pub pulses: Vec<WcpPulse>,
}

/// Classical messages emitted by one transition. Pulses announced by a
/// `PULSE_BATCH` are fetched separately with [`ClientEndpoint::optical`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outbound {
    pub messages: Vec<ProtocolMessage>,
}

/// Source settings and pulse budget for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub src: SourceParams,
    pub n_pulses: u64,
    pub batch_size: u64,
}

impl RunPlan {
    pub fn n_batches(&self) -> u64 {
        self.n_pulses.div_ceil(self.batch_size)
    }

    fn batch_range(&self, b: u64) -> (u64, u64) {
        let start = b * self.batch_size;
        (start, self.batch_size.min(self.n_pulses - start))
    }

    pub fn validate(&self) -> Result<()> {
        self.src.validate()?;
        if self.n_pulses == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("pulse count and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// The Client's private choices: intensity and polarization of every pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSecrets {
    pub intensities: Vec<Intensity>,
    pub angles: Vec<Angle>,
}

impl ClientSecrets {
    pub fn generate(src: &SourceParams, n_pulses: u64, seed: u64) -> Self {
        let mut ri = rng::substream(seed, "client.intensity", 0);
        let mut ra = rng::substream(seed, "client.angle", 0);
        ClientSecrets {
            intensities: (0..n_pulses).map(|_| src.choose_intensity(&mut ri)).collect(),
            angles: (0..n_pulses).map(|_| Angle::random(&mut ra)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientPhase {
    Init,
    Sending,
    AwaitingReport,
    Deciding,
    AwaitingI1dc,
    Done,
    Aborted,
}

impl ClientPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ClientPhase::Done | ClientPhase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerPhase {
    Init,
    Receiving,
    AwaitingDecision,
    AwaitingGrouping,
    AwaitingDone,
    Done,
    Aborted,
}

impl ServerPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ServerPhase::Done | ServerPhase::Aborted)
    }
}

/// How a Client-side run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done { angles: Vec<Angle> },
    Aborted { reason: AbortReason },
}

fn violation(phase: impl std::fmt::Debug, tag: Tag) -> Error {
    Error::ProtocolViolation(format!("{tag} not expected in phase {phase:?}"))
}

/// Anything that can play the Client role in a run.
pub trait ClientEndpoint {
    fn next(&mut self, inbound: Option<&ProtocolMessage>) -> Result<Outbound>;
    fn phase(&self) -> ClientPhase;
    fn outcome(&self) -> Option<Outcome>;
    /// The pulses of an announced batch. Built on demand so a long run
    /// never holds more than a few batches in memory.
    fn optical(&self, batch: u64) -> Option<OpticalBatch>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub phase: ClientPhase,
    plan: RunPlan,
    secrets: ClientSecrets,
    seed: u64,
    seq_out: u64,
    seq_in: u64,
    detected: Vec<Option<String>>,
    groups: Vec<Vec<u64>>,
    angles: Option<Vec<Angle>>,
    abort: Option<AbortReason>,
}

impl ClientState {
    pub fn new(plan: RunPlan, secrets: ClientSecrets, seed: u64) -> Result<Self> {
        plan.validate()?;
        let n = plan.n_pulses as usize;
        if secrets.intensities.len() != n || secrets.angles.len() != n {
            return Err(Error::InvalidParameter("secrets do not match the pulse count".into()));
        }
        let batches = plan.n_batches() as usize;
        Ok(ClientState {
            phase: ClientPhase::Init,
            plan,
            secrets,
            seed,
            seq_out: 0,
            seq_in: 0,
            detected: vec![None; batches],
            groups: Vec::new(),
            angles: None,
            abort: None,
        })
    }

    pub fn secrets(&self) -> &ClientSecrets {
        &self.secrets
    }

    pub fn groups(&self) -> &[Vec<u64>] {
        &self.groups
    }

    fn emit(&mut self, out: &mut Outbound, payload: Payload) {
        out.messages.push(ProtocolMessage::new(self.seq_out, payload));
        self.seq_out += 1;
    }

    fn observation(&self) -> DecoyObservation {
        let mut c = [IntensityCounts::default(); 3];
        let flags = self.detected.iter().flat_map(|d| d.as_deref().unwrap_or("").bytes());
        for (i, f) in self.secrets.intensities.iter().zip(flags) {
            c[i.index()].sent += 1;
            c[i.index()].detected += u64::from(f == b'1');
        }
        DecoyObservation::new(c).expect("detections never exceed pulses")
    }

    fn detected_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.detected
            .iter()
            .flat_map(|d| d.as_deref().unwrap_or("").bytes())
            .enumerate()
            .filter(|(_, f)| *f == b'1')
            .map(|(i, _)| i as u64)
    }

    fn decide(&mut self, out: &mut Outbound) {
        self.phase = ClientPhase::Deciding;
        let obs = self.observation();
        let signal: Vec<u64> =
            self.detected_indices().filter(|&i| self.secrets.intensities[i as usize] == Intensity::Signal).collect();
        let mut decision = threshold_check(&self.plan.src, &obs);
        if decision == Decision::Continue && (signal.len() as u64) < self.plan.src.size {
            decision = Decision::Abort(AbortReason::InsufficientStatistics);
        }
        match decision {
            Decision::Abort(reason) => {
                self.abort = Some(reason);
                self.emit(out, Payload::Abort(AbortMsg { reason }));
                self.phase = ClientPhase::Aborted;
            }
            Decision::Continue => {
                let discard: Vec<u64> = self
                    .detected_indices()
                    .filter(|&i| self.secrets.intensities[i as usize] != Intensity::Signal)
                    .collect();
                let mut order = signal;
                order.shuffle(&mut rng::substream(self.seed, "client.grouping", 0));
                let mut rest = order.as_slice();
                self.groups = group_sizes(rest.len(), self.plan.src.size as usize)
                    .into_iter()
                    .map(|k| {
                        let (g, tail) = rest.split_at(k);
                        rest = tail;
                        g.to_vec()
                    })
                    .collect();
                self.emit(out, Payload::Decision(DecisionMsg { verdict: "continue".into() }));
                self.emit(out, Payload::DiscardDecoys(DiscardDecoys { indices: discard }));
                self.emit(out, Payload::Grouping(Grouping { groups: self.groups.clone() }));
                self.phase = ClientPhase::AwaitingI1dc;
            }
        }
    }

    fn finish(&mut self, r: &I1dcResults, out: &mut Outbound) -> Result<()> {
        if r.outcomes.len() != self.groups.len() {
            return Err(Error::ProtocolViolation(format!(
                "{} result vectors for {} groups",
                r.outcomes.len(),
                self.groups.len()
            )));
        }
        let mut angles = Vec::with_capacity(self.groups.len());
        for (g, y) in self.groups.iter().zip(&r.outcomes) {
            let secret: Vec<Angle> = g.iter().map(|&i| self.secrets.angles[i as usize]).collect();
            let a = client_final_angle(&secret, y)
                .ok_or_else(|| Error::ProtocolViolation(format!("{} outcomes for a group of {}", y.len(), g.len())))?;
            angles.push(a);
        }
        self.angles = Some(angles);
        self.emit(out, Payload::Done);
        self.phase = ClientPhase::Done;
        Ok(())
    }

    fn step(&mut self, inbound: Option<&ProtocolMessage>) -> Result<Outbound> {
        let mut out = Outbound::default();
        let Some(msg) = inbound else {
            if self.phase != ClientPhase::Init {
                return Ok(out);
            }
            self.phase = ClientPhase::Sending;
            let setup =
                Setup { n_pulses: self.plan.n_pulses, batch_size: self.plan.batch_size, size: self.plan.src.size };
            self.emit(&mut out, Payload::Setup(setup));
            for b in 0..self.plan.n_batches() {
                let (start, count) = self.plan.batch_range(b);
                self.emit(&mut out, Payload::PulseBatch(PulseBatch { batch: b, start, count }));
            }
            self.phase = ClientPhase::AwaitingReport;
            return Ok(out);
        };
        if msg.seq != self.seq_in {
            return Err(Error::ProtocolViolation(format!("expected seq {}, got {}", self.seq_in, msg.seq)));
        }
        self.seq_in += 1;
        match (&msg.payload, self.phase) {
            (Payload::QndReport(r), ClientPhase::AwaitingReport) => {
                let b = r.batch as usize;
                let expected = self.plan.batch_range(r.batch.min(self.plan.n_batches() - 1)).1 as usize;
                if b >= self.detected.len() || self.detected[b].is_some() || r.detected.len() != expected {
                    return Err(Error::ProtocolViolation(format!("bad QND report for batch {b}")));
                }
                self.detected[b] = Some(r.detected.clone());
                if self.detected.iter().all(Option::is_some) {
                    self.decide(&mut out);
                }
            }
            (Payload::I1dcResults(r), ClientPhase::AwaitingI1dc) => self.finish(r, &mut out)?,
            (p, phase) => return Err(violation(phase, p.tag())),
        }
        Ok(out)
    }
}

impl ClientEndpoint for ClientState {
    fn next(&mut self, inbound: Option<&ProtocolMessage>) -> Result<Outbound> {
        let r = self.step(inbound);
        if r.is_err() {
            self.phase = ClientPhase::Aborted;
            self.abort.get_or_insert(AbortReason::ProtocolViolation);
        }
        r
    }

    fn phase(&self) -> ClientPhase {
        self.phase
    }

    fn optical(&self, batch: u64) -> Option<OpticalBatch> {
        if batch >= self.plan.n_batches() {
            return None;
        }
        let (start, count) = self.plan.batch_range(batch);
        let pulses = (start..start + count)
            .map(|i| WcpPulse {
                mean_photon_number: self.plan.src.intensity(self.secrets.intensities[i as usize]),
                polarization: plus_theta_state(self.secrets.angles[i as usize]),
            })
            .collect();
        Some(OpticalBatch { batch, pulses })
    }

    fn outcome(&self) -> Option<Outcome> {
        match (self.phase, &self.angles, self.abort) {
            (ClientPhase::Done, Some(a), _) => Some(Outcome::Done { angles: a.clone() }),
            (ClientPhase::Aborted, _, Some(reason)) => Some(Outcome::Aborted { reason }),
            _ => None,
        }
    }
}

/// Pure-function form of a Client transition.
pub fn client_next(state: &ClientState, inbound: Option<&ProtocolMessage>) -> Result<(ClientState, Outbound)> {
    let mut s = state.clone();
    let out = s.next(inbound)?;
    Ok((s, out))
}

/// A qubit held in the Server's memory after a heralded QND event.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredQubit {
    pub state: DensityMatrix,
    /// Simulation ground truth: exactly one photon was emitted and it arrived.
    pub single_photon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub phase: ServerPhase,
    channel: ChannelParams,
    seed: u64,
    seq_out: u64,
    seq_in: u64,
    setup: Option<Setup>,
    batches_seen: u64,
    stored: BTreeMap<u64, StoredQubit>,
    groups: Vec<Vec<u64>>,
    finals: Vec<DensityMatrix>,
}

impl ServerState {
    pub fn new(channel: ChannelParams, seed: u64) -> Result<Self> {
        channel.validate()?;
        Ok(ServerState {
            phase: ServerPhase::Init,
            channel,
            seed,
            seq_out: 0,
            seq_in: 0,
            setup: None,
            batches_seen: 0,
            stored: BTreeMap::new(),
            groups: Vec::new(),
            finals: Vec::new(),
        })
    }

    /// Qubits produced by the I1DC step, one per group.
    pub fn final_states(&self) -> &[DensityMatrix] {
        &self.finals
    }

    /// Number of groups with no single-photon-originated member.
    pub fn groups_without_single_photon(&self) -> usize {
        self.groups.iter().filter(|g| !g.iter().any(|i| self.stored.get(i).is_some_and(|q| q.single_photon))).count()
    }

    pub fn stored(&self) -> &BTreeMap<u64, StoredQubit> {
        &self.stored
    }

    pub fn groups(&self) -> &[Vec<u64>] {
        &self.groups
    }

    fn emit(&mut self, out: &mut Outbound, payload: Payload) {
        out.messages.push(ProtocolMessage::new(self.seq_out, payload));
        self.seq_out += 1;
    }

    fn qnd(&mut self, announce: &PulseBatch, optical: &OpticalBatch, out: &mut Outbound) -> Result<()> {
        if optical.batch != announce.batch || optical.pulses.len() as u64 != announce.count {
            return Err(Error::ProtocolViolation(format!(
                "optical batch does not match announcement {}",
                announce.batch
            )));
        }
        let eta = effective_transmittance(&self.channel);
        let y0 = self.channel.vacuum_yield();
        let mut r = rng::substream(self.seed, "server.qnd", announce.batch);
        let mut flags = String::with_capacity(optical.pulses.len());
        for (k, p) in optical.pulses.iter().enumerate() {
            let d = detect_pulse(&mut r, p.mean_photon_number, eta, y0);
            flags.push(if d.detected { '1' } else { '0' });
            if d.detected {
                // A click with no surviving photon stores nothing useful.
                let state = if d.survivors > 0 {
                    apply_noise(&p.polarization, NoiseModel::Depolarizing, self.channel.qnd_noise)?
                } else {
                    DensityMatrix::maximally_mixed()
                };
                let single_photon = d.single_photon_originated();
                self.stored.insert(announce.start + k as u64, StoredQubit { state, single_photon });
            }
        }
        self.emit(out, Payload::QndReport(QndReport { batch: announce.batch, detected: flags }));
        Ok(())
    }

    fn compute(&mut self, g: &Grouping, out: &mut Outbound) -> Result<()> {
        let size = self.setup.as_ref().map_or(0, |s| s.size) as usize;
        if g.groups.len() != size {
            return Err(Error::ProtocolViolation(format!("{} groups for size {size}", g.groups.len())));
        }
        let mut used = BTreeSet::new();
        let mut outcomes = Vec::with_capacity(g.groups.len());
        for (gi, members) in g.groups.iter().enumerate() {
            let states = members
                .iter()
                .map(|i| {
                    if !used.insert(*i) {
                        return Err(Error::ProtocolViolation(format!("pulse {i} grouped twice")));
                    }
                    self.stored
                        .get(i)
                        .map(|q| q.state)
                        .ok_or_else(|| Error::ProtocolViolation(format!("pulse {i} is not stored")))
                })
                .collect::<Result<Vec<_>>>()?;
            let group = I1dcGroup::new(states, None)?;
            let res = run_group_with_rng(&group, &mut rng::substream(self.seed, "server.group", gi as u64))?;
            self.finals.push(res.final_state);
            outcomes.push(res.y);
        }
        self.groups = g.groups.clone();
        self.emit(out, Payload::I1dcResults(I1dcResults { outcomes }));
        Ok(())
    }

    /// Advances on one message. `PULSE_BATCH` must come with its optical batch.
    pub fn step(&mut self, inbound: &ProtocolMessage, optical: Option<&OpticalBatch>) -> Result<Outbound> {
        let r = self.step_inner(inbound, optical);
        if r.is_err() {
            self.phase = ServerPhase::Aborted;
        }
        r
    }

    fn step_inner(&mut self, msg: &ProtocolMessage, optical: Option<&OpticalBatch>) -> Result<Outbound> {
        let mut out = Outbound::default();
        if msg.seq != self.seq_in {
            return Err(Error::ProtocolViolation(format!("expected seq {}, got {}", self.seq_in, msg.seq)));
        }
        self.seq_in += 1;
        match (&msg.payload, self.phase) {
            (Payload::Setup(s), ServerPhase::Init) => {
                if s.n_pulses == 0 || s.batch_size == 0 || s.size == 0 {
                    return Err(Error::ProtocolViolation("empty setup".into()));
                }
                self.setup = Some(s.clone());
                self.phase = ServerPhase::Receiving;
            }
            (Payload::PulseBatch(b), ServerPhase::Receiving) => {
                let s = self.setup.clone().expect("set in Init");
                if b.batch != self.batches_seen || b.start != b.batch * s.batch_size {
                    return Err(Error::ProtocolViolation(format!("unexpected batch {}", b.batch)));
                }
                let optical =
                    optical.ok_or_else(|| Error::ProtocolViolation(format!("batch {} has no pulses", b.batch)))?;
                self.qnd(b, optical, &mut out)?;
                self.batches_seen += 1;
                if self.batches_seen == s.n_pulses.div_ceil(s.batch_size) {
                    self.phase = ServerPhase::AwaitingDecision;
                }
            }
            (Payload::Decision(d), ServerPhase::AwaitingDecision) if d.verdict == "continue" => {
                self.phase = ServerPhase::AwaitingGrouping;
            }
            (Payload::Abort(_), ServerPhase::AwaitingDecision) => self.phase = ServerPhase::Aborted,
            (Payload::DiscardDecoys(d), ServerPhase::AwaitingGrouping) => {
                for i in &d.indices {
                    self.stored.remove(i);
                }
            }
            (Payload::Grouping(g), ServerPhase::AwaitingGrouping) => {
                self.compute(g, &mut out)?;
                self.phase = ServerPhase::AwaitingDone;
            }
            (Payload::Done, ServerPhase::AwaitingDone) => self.phase = ServerPhase::Done,
            (p, phase) => return Err(violation(phase, p.tag())),
        }
        Ok(out)
    }
}

/// Pure-function form of a Server transition.
pub fn server_next(
    state: &ServerState,
    inbound: &ProtocolMessage,
    optical: Option<&OpticalBatch>,
) -> Result<(ServerState, Outbound)> {
    let mut s = state.clone();
    let out = s.step(inbound, optical)?;
    Ok((s, out))
}
