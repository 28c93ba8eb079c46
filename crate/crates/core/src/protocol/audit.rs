//! Checks that nothing the Server sees depends on the Client's angles.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::qubit::Angle;

use super::transport::Transcript;

/// Object keys that must never occur in a serialized message.
const FORBIDDEN_KEYS: [&str; 4] = ["angle", "theta", "secret", "polariz"];

/// Shortest run of secret angles treated as a recognizable leak when it
/// shows up verbatim inside an integer array.
const LEAK_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub runs: usize,
    /// `(run, ord, key)` for every forbidden key found.
    pub forbidden_keys: Vec<(usize, usize, String)>,
    /// `(run, ord)` of messages containing a verbatim run of secret angles.
    pub verbatim_angles: Vec<(usize, usize)>,
    /// Runs whose bytes differ from run 0.
    pub mismatched_runs: Vec<usize>,
    pub notes: Vec<String>,
    pub passed: bool,
}

fn scan_keys(v: &Value, hits: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let lower = k.to_ascii_lowercase();
                if FORBIDDEN_KEYS.iter().any(|f| lower.contains(f)) {
                    hits.push(k.clone());
                }
                scan_keys(child, hits);
            }
        }
        Value::Array(a) => a.iter().for_each(|c| scan_keys(c, hits)),
        _ => {}
    }
}

fn int_arrays<'a>(v: &'a Value, out: &mut Vec<&'a Vec<Value>>) {
    match v {
        Value::Object(m) => m.values().for_each(|c| int_arrays(c, out)),
        Value::Array(a) => {
            out.push(a);
            a.iter().for_each(|c| int_arrays(c, out));
        }
        _ => {}
    }
}

fn contains_window(arr: &[Value], window: &[u64]) -> bool {
    arr.len() >= window.len()
        && arr.windows(window.len()).any(|w| w.iter().zip(window).all(|(a, b)| a.as_u64() == Some(*b)))
}

/// Compares transcripts of runs that share every random choice except the
/// Client's angles, `secret_sets[i]` being the angles used for run `i`.
pub fn blindness_audit(transcripts: &[Transcript], secret_sets: &[Vec<Angle>]) -> AuditReport {
    let mut r = AuditReport {
        runs: transcripts.len(),
        forbidden_keys: Vec::new(),
        verbatim_angles: Vec::new(),
        mismatched_runs: Vec::new(),
        notes: Vec::new(),
        passed: false,
    };
    if transcripts.len() != secret_sets.len() {
        r.notes.push(format!("{} transcripts for {} secret sets", transcripts.len(), secret_sets.len()));
        return r;
    }
    if transcripts.len() < 2 {
        r.notes.push("need at least two runs".into());
        return r;
    }
    if secret_sets.windows(2).all(|w| w[0] == w[1]) {
        r.notes.push("secret sets are identical; nothing to compare".into());
        return r;
    }

    let windows: Vec<Vec<u64>> = secret_sets
        .iter()
        .filter(|s| s.len() >= LEAK_WINDOW)
        .map(|s| s[..LEAK_WINDOW].iter().map(|a| u64::from(a.index())).collect())
        .collect();
    for (run, t) in transcripts.iter().enumerate() {
        for (ord, (_, msg)) in t.entries.iter().enumerate() {
            let v = msg.to_value();
            let mut keys = Vec::new();
            scan_keys(&v, &mut keys);
            r.forbidden_keys.extend(keys.into_iter().map(|k| (run, ord, k)));
            let mut arrays = Vec::new();
            int_arrays(&v, &mut arrays);
            if arrays.iter().any(|a| windows.iter().any(|w| contains_window(a, w))) {
                r.verbatim_angles.push((run, ord));
            }
        }
    }

    let base = transcripts[0].to_bytes();
    r.mismatched_runs = (1..transcripts.len()).filter(|&i| transcripts[i].to_bytes() != base).collect();
    r.passed = r.forbidden_keys.is_empty() && r.verbatim_angles.is_empty() && r.mismatched_runs.is_empty();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::message::{DiscardDecoys, Payload, ProtocolMessage};
    use crate::protocol::transport::Direction;

    fn angles(k: u8) -> Vec<Angle> {
        (0..20).map(|i| Angle::wrapping(i64::from(i * 3 + k))).collect()
    }

    fn transcript(indices: Vec<u64>) -> Transcript {
        let mut t = Transcript::default();
        t.push(Direction::Out, ProtocolMessage::new(0, Payload::DiscardDecoys(DiscardDecoys { indices })));
        t
    }

    #[test]
    fn identical_runs_pass() {
        let t = transcript(vec![1, 2, 3]);
        let r = blindness_audit(&[t.clone(), t], &[angles(0), angles(1)]);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn verbatim_angles_are_flagged() {
        let leak: Vec<u64> = angles(1).iter().map(|a| u64::from(a.index())).collect();
        let t = transcript(leak);
        let r = blindness_audit(&[t.clone(), t], &[angles(0), angles(1)]);
        assert_eq!(r.verbatim_angles, vec![(0, 0), (1, 0)]);
        assert!(!r.passed);
    }

    #[test]
    fn differing_bytes_are_flagged() {
        let r = blindness_audit(&[transcript(vec![1]), transcript(vec![2])], &[angles(0), angles(1)]);
        assert_eq!(r.mismatched_runs, vec![1]);
        assert!(!r.passed);
    }

    #[test]
    fn degenerate_inputs_do_not_pass() {
        let t = transcript(vec![]);
        assert!(!blindness_audit(std::slice::from_ref(&t), &[angles(0)]).passed);
        assert!(!blindness_audit(&[t.clone(), t], &[angles(0), angles(0)]).passed);
    }

    #[test]
    fn key_scan_is_recursive() {
        let mut hits = Vec::new();
        scan_keys(&serde_json::json!({"a": [{"Theta_1": 3}], "secretive": 1}), &mut hits);
        assert_eq!(hits.len(), 2);
    }
}
