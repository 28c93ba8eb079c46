//! Drivers that connect a Client and a Server through an in-process queue or
//! a loopback TCP stream, and the transcript they record.
//!
//! Both drivers push every classical message through the canonical encoding.
//! Pulses travel beside the classical channel, keyed by batch number.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::qubit::DensityMatrix;

use super::machine::*;
use super::message::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Socket,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "socket" => Ok(TransportKind::Socket),
            _ => Err(Error::InvalidParameter(format!("unknown transport {s:?}"))),
        }
    }
}

/// Direction relative to the Client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

impl Direction {
    fn as_str(self) -> &'static str {
        match self {
            Direction::Out => "out",
            Direction::In => "in",
        }
    }
}

/// Client-side log of every classical message in delivery order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<(Direction, ProtocolMessage)>,
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, msg: ProtocolMessage) {
        self.entries.push((dir, msg));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn messages(&self, dir: Direction) -> impl Iterator<Item = &ProtocolMessage> {
        self.entries.iter().filter(move |(d, _)| *d == dir).map(|(_, m)| m)
    }

    /// Newline-delimited canonical records carrying `dir` and `ord` next to
    /// the message fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (ord, (dir, msg)) in self.entries.iter().enumerate() {
            let mut v = msg.to_value();
            let obj = v.as_object_mut().expect("messages encode as objects");
            obj.insert("dir".into(), Value::from(dir.as_str()));
            obj.insert("ord".into(), Value::from(ord as u64));
            out.extend_from_slice(v.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Wire(e.to_string()))?;
        let mut t = Transcript::default();
        for (i, line) in text.lines().enumerate() {
            let mut v: Value = serde_json::from_str(line).map_err(|e| Error::Wire(format!("record {i}: {e}")))?;
            let obj = v.as_object_mut().ok_or_else(|| Error::Wire(format!("record {i} is not an object")))?;
            let dir = match obj.remove("dir").as_ref().and_then(Value::as_str) {
                Some("out") => Direction::Out,
                Some("in") => Direction::In,
                _ => return Err(Error::Wire(format!("record {i}: bad direction"))),
            };
            if obj.remove("ord").and_then(|o| o.as_u64()) != Some(i as u64) {
                return Err(Error::Wire(format!("record {i}: ordinal out of sequence")));
            }
            t.push(dir, ProtocolMessage::from_value(v)?);
        }
        if t.to_bytes() != bytes {
            return Err(Error::Wire("transcript is not in canonical form".into()));
        }
        Ok(t)
    }
}

trait Link {
    fn send(&mut self, msg: &ProtocolMessage, optical: Option<OpticalBatch>) -> Result<()>;
    fn recv(&mut self) -> Result<ProtocolMessage>;
    fn finish(self) -> Result<ServerState>;
}

fn drive<C: ClientEndpoint, L: Link>(client: &mut C, link: &mut L) -> Result<Transcript> {
    let mut t = Transcript::default();
    let mut out = client.next(None)?;
    loop {
        for m in out.messages {
            let o = match &m.payload {
                Payload::PulseBatch(b) => client.optical(b.batch),
                _ => None,
            };
            link.send(&m, o)?;
            t.push(Direction::Out, m);
        }
        if client.phase().is_terminal() {
            return Ok(t);
        }
        let m = link.recv()?;
        t.push(Direction::In, m.clone());
        out = client.next(Some(&m))?;
    }
}

struct InprocLink {
    server: ServerState,
    queue: VecDeque<Vec<u8>>,
}

impl Link for InprocLink {
    fn send(&mut self, msg: &ProtocolMessage, optical: Option<OpticalBatch>) -> Result<()> {
        let inbound = ProtocolMessage::decode(msg.encode().as_bytes())?;
        let out = self.server.step(&inbound, optical.as_ref())?;
        self.queue.extend(out.messages.iter().map(|m| m.encode().into_bytes()));
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage> {
        let bytes = self.queue.pop_front().ok_or_else(|| Error::Transport("no message pending from server".into()))?;
        ProtocolMessage::decode(&bytes)
    }

    fn finish(self) -> Result<ServerState> {
        Ok(self.server)
    }
}

fn write_frame<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| std::io::Error::other("frame too long"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(bytes)
}

/// `None` on a clean end of stream.
fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Transport(e.to_string())
}

fn serve(stream: TcpStream, mut server: ServerState, optical: mpsc::Receiver<OpticalBatch>) -> Result<ServerState> {
    let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
    let mut writer = BufWriter::new(stream);
    while !server.phase.is_terminal() {
        let Some(frame) = read_frame(&mut reader).map_err(io_err)? else {
            return Err(Error::Transport("client closed the connection".into()));
        };
        let msg = ProtocolMessage::decode(&frame)?;
        let batch = match msg.payload {
            Payload::PulseBatch(_) => Some(optical.recv().map_err(|_| Error::Transport("optical link closed".into()))?),
            _ => None,
        };
        let out = server.step(&msg, batch.as_ref())?;
        for m in &out.messages {
            write_frame(&mut writer, m.encode().as_bytes()).map_err(io_err)?;
        }
        writer.flush().map_err(io_err)?;
    }
    Ok(server)
}

struct SocketLink {
    writer: BufWriter<TcpStream>,
    inbound: mpsc::Receiver<Result<Vec<u8>>>,
    optical: mpsc::SyncSender<OpticalBatch>,
    server: JoinHandle<Result<ServerState>>,
    reader: JoinHandle<()>,
}

impl SocketLink {
    fn open(server: ServerState) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(io_err)?;
        let addr = listener.local_addr().map_err(io_err)?;
        // Bounded so the optical side cannot run far ahead of the Server.
        let (otx, orx) = mpsc::sync_channel(4);
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().map_err(io_err)?;
            serve(stream, server, orx)
        });
        let stream = TcpStream::connect(addr).map_err(io_err)?;
        stream.set_nodelay(true).map_err(io_err)?;
        // A dedicated reader keeps the server's writes flowing while the
        // Client is still sending, so neither side blocks on a full buffer.
        let mut rd = BufReader::new(stream.try_clone().map_err(io_err)?);
        let (itx, irx) = mpsc::channel();
        let reader = std::thread::spawn(move || loop {
            match read_frame(&mut rd) {
                Ok(Some(f)) => {
                    if itx.send(Ok(f)).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    let _ = itx.send(Err(io_err(e)));
                    return;
                }
            }
        });
        Ok(SocketLink { writer: BufWriter::new(stream), inbound: irx, optical: otx, server, reader })
    }
}

impl Link for SocketLink {
    fn send(&mut self, msg: &ProtocolMessage, optical: Option<OpticalBatch>) -> Result<()> {
        write_frame(&mut self.writer, msg.encode().as_bytes()).map_err(io_err)?;
        if let Some(b) = optical {
            // The Server must see the announcement before it waits for pulses.
            self.writer.flush().map_err(io_err)?;
            self.optical.send(b).map_err(|_| Error::Transport("optical link closed".into()))?;
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage> {
        self.writer.flush().map_err(io_err)?;
        let frame = self.inbound.recv().map_err(|_| Error::Transport("server closed the connection".into()))??;
        ProtocolMessage::decode(&frame)
    }

    fn finish(mut self) -> Result<ServerState> {
        // Bytes already written still reach the Server after the shutdown.
        let _ = self.writer.flush();
        if let Ok(s) = self.writer.get_ref().try_clone() {
            let _ = s.shutdown(Shutdown::Both);
        }
        drop(self.optical);
        let server = self.server.join().map_err(|_| Error::Transport("server thread panicked".into()))?;
        let _ = self.reader.join();
        server
    }
}

/// Runs `client` against an honest Server over the chosen transport.
/// Returns the Client's transcript, the Client and the Server's final state.
pub fn run_with_client<C: ClientEndpoint>(
    mut client: C,
    ch: &ChannelParams,
    transport: TransportKind,
    seed: u64,
) -> Result<(Transcript, C, ServerState)> {
    let server = ServerState::new(ch.clone(), seed)?;
    let (t, server) = match transport {
        TransportKind::Inproc => {
            let mut link = InprocLink { server, queue: VecDeque::new() };
            let t = drive(&mut client, &mut link);
            (t, link.finish())
        }
        TransportKind::Socket => {
            let mut link = SocketLink::open(server)?;
            let t = drive(&mut client, &mut link);
            (t, link.finish())
        }
    };
    match (t, server) {
        (Ok(t), Ok(s)) => Ok((t, client, s)),
        // A server-side violation explains a broken link better than the
        // link error itself.
        (Err(_), Err(e @ Error::ProtocolViolation(_))) => Err(e),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Ground-truth check of the grouping failure event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Soundness {
    pub groups: usize,
    pub signal_detections: usize,
    pub groups_without_single_photon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub transcript: Transcript,
    pub outcome: Outcome,
    /// Pulse indices of each group, as the Client sent them.
    pub groups: Vec<Vec<u64>>,
    pub server_final_states: Vec<DensityMatrix>,
    pub soundness: Soundness,
}

pub fn run_protocol(plan: &RunPlan, ch: &ChannelParams, transport: TransportKind, seed: u64) -> Result<RunOutput> {
    let secrets = ClientSecrets::generate(&plan.src, plan.n_pulses, seed);
    run_protocol_with_secrets(plan, secrets, ch, transport, seed)
}

pub fn run_protocol_with_secrets(
    plan: &RunPlan,
    secrets: ClientSecrets,
    ch: &ChannelParams,
    transport: TransportKind,
    seed: u64,
) -> Result<RunOutput> {
    let client = ClientState::new(plan.clone(), secrets, seed)?;
    let (transcript, client, server) = run_with_client(client, ch, transport, seed)?;
    let outcome = client.outcome().ok_or_else(|| Error::ProtocolViolation("run ended without an outcome".into()))?;
    let groups = client.groups().to_vec();
    Ok(RunOutput {
        soundness: Soundness {
            groups: groups.len(),
            signal_detections: groups.iter().map(Vec::len).sum(),
            groups_without_single_photon: server.groups_without_single_photon(),
        },
        transcript,
        outcome,
        groups,
        server_final_states: server.final_states().to_vec(),
    })
}
