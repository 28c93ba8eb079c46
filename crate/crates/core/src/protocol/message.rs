//! Classical messages and their canonical wire encoding: one JSON object
//! per record with sorted keys and no insignificant whitespace.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decoy::AbortReason;
use crate::error::{Error, Result};

pub const WIRE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Setup,
    PulseBatch,
    QndReport,
    Decision,
    DiscardDecoys,
    Grouping,
    I1dcResults,
    Abort,
    Done,
}

impl Tag {
    pub const ALL: [Tag; 9] = [
        Tag::Setup,
        Tag::PulseBatch,
        Tag::QndReport,
        Tag::Decision,
        Tag::DiscardDecoys,
        Tag::Grouping,
        Tag::I1dcResults,
        Tag::Abort,
        Tag::Done,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Setup => "SETUP",
            Tag::PulseBatch => "PULSE_BATCH",
            Tag::QndReport => "QND_REPORT",
            Tag::Decision => "DECISION",
            Tag::DiscardDecoys => "DISCARD_DECOYS",
            Tag::Grouping => "GROUPING",
            Tag::I1dcResults => "I1DC_RESULTS",
            Tag::Abort => "ABORT",
            Tag::Done => "DONE",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub n_pulses: u64,
    pub batch_size: u64,
    /// Number of qubits to prepare.
    pub size: u64,
}

/// Announces a batch of pulses travelling on the optical link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseBatch {
    pub batch: u64,
    pub start: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QndReport {
    pub batch: u64,
    /// One character per pulse, `'1'` when the QND step heralded it.
    pub detected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionMsg {
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscardDecoys {
    pub indices: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grouping {
    pub groups: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct I1dcResults {
    pub outcomes: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbortMsg {
    pub reason: AbortReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Setup(Setup),
    PulseBatch(PulseBatch),
    QndReport(QndReport),
    Decision(DecisionMsg),
    DiscardDecoys(DiscardDecoys),
    Grouping(Grouping),
    I1dcResults(I1dcResults),
    Abort(AbortMsg),
    Done,
}

impl Payload {
    pub fn tag(&self) -> Tag {
        match self {
            Payload::Setup(_) => Tag::Setup,
            Payload::PulseBatch(_) => Tag::PulseBatch,
            Payload::QndReport(_) => Tag::QndReport,
            Payload::Decision(_) => Tag::Decision,
            Payload::DiscardDecoys(_) => Tag::DiscardDecoys,
            Payload::Grouping(_) => Tag::Grouping,
            Payload::I1dcResults(_) => Tag::I1dcResults,
            Payload::Abort(_) => Tag::Abort,
            Payload::Done => Tag::Done,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::Setup(p) => serde_json::to_value(p),
            Payload::PulseBatch(p) => serde_json::to_value(p),
            Payload::QndReport(p) => serde_json::to_value(p),
            Payload::Decision(p) => serde_json::to_value(p),
            Payload::DiscardDecoys(p) => serde_json::to_value(p),
            Payload::Grouping(p) => serde_json::to_value(p),
            Payload::I1dcResults(p) => serde_json::to_value(p),
            Payload::Abort(p) => serde_json::to_value(p),
            Payload::Done => Ok(json!({})),
        };
        v.expect("payload types serialize infallibly")
    }

    fn from_value(tag: Tag, v: Value) -> Result<Self> {
        fn de<T: serde::de::DeserializeOwned>(tag: Tag, v: Value) -> Result<T> {
            serde_json::from_value(v).map_err(|e| Error::Wire(format!("{tag} payload: {e}")))
        }
        Ok(match tag {
            Tag::Setup => Payload::Setup(de(tag, v)?),
            Tag::PulseBatch => Payload::PulseBatch(de(tag, v)?),
            Tag::QndReport => {
                let r: QndReport = de(tag, v)?;
                if !r.detected.bytes().all(|b| b == b'0' || b == b'1') {
                    return Err(Error::Wire("QND_REPORT flags must be 0 or 1".into()));
                }
                Payload::QndReport(r)
            }
            Tag::Decision => Payload::Decision(de(tag, v)?),
            Tag::DiscardDecoys => Payload::DiscardDecoys(de(tag, v)?),
            Tag::Grouping => Payload::Grouping(de(tag, v)?),
            Tag::I1dcResults => {
                let r: I1dcResults = de(tag, v)?;
                if r.outcomes.iter().flatten().any(|&y| y > 1) {
                    return Err(Error::Wire("I1DC outcomes must be bits".into()));
                }
                Payload::I1dcResults(r)
            }
            Tag::Abort => Payload::Abort(de(tag, v)?),
            Tag::Done => {
                match v.as_object() {
                    Some(m) if m.is_empty() => {}
                    _ => return Err(Error::Wire("DONE payload must be empty".into())),
                }
                Payload::Done
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub seq: u64,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn new(seq: u64, payload: Payload) -> Self {
        ProtocolMessage { seq, payload }
    }

    pub fn tag(&self) -> Tag {
        self.payload.tag()
    }

    /// Record as a JSON value; objects keep their keys sorted.
    pub fn to_value(&self) -> Value {
        json!({
            "v": WIRE_VERSION,
            "tag": self.tag().as_str(),
            "seq": self.seq,
            "payload": self.payload.to_value(),
        })
    }

    /// Canonical single-line encoding.
    pub fn encode(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let Value::Object(mut m) = v else {
            return Err(Error::Wire("record is not an object".into()));
        };
        let version = m.remove("v").and_then(|v| v.as_u64());
        if version != Some(WIRE_VERSION) {
            return Err(Error::Wire(format!("unsupported wire version {version:?}")));
        }
        let tag = m
            .remove("tag")
            .and_then(|t| t.as_str().and_then(Tag::parse))
            .ok_or_else(|| Error::Wire("missing or unknown tag".into()))?;
        let seq = m.remove("seq").and_then(|s| s.as_u64()).ok_or_else(|| Error::Wire("missing seq".into()))?;
        let payload = m.remove("payload").ok_or_else(|| Error::Wire("missing payload".into()))?;
        if let Some(k) = m.keys().next() {
            return Err(Error::Wire(format!("unexpected field {k}")));
        }
        Ok(ProtocolMessage { seq, payload: Payload::from_value(tag, payload)? })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::Wire(e.to_string()))?;
        Self::from_value(v)
    }
}
