//! The Client/Server protocol: message schema, state machines, transports
//! and the blindness audit.

pub mod audit;
pub mod machine;
pub mod message;
pub mod transport;

pub use audit::{blindness_audit, AuditReport};
pub use machine::{
    client_next, server_next, ClientEndpoint, ClientPhase, ClientSecrets, ClientState, OpticalBatch, Outbound, Outcome,
    RunPlan, ServerPhase, ServerState, StoredQubit, WcpPulse,
};
pub use message::{Payload, ProtocolMessage, Tag, WIRE_VERSION};
pub use transport::{run_protocol, run_with_client, Direction, RunOutput, Soundness, Transcript, TransportKind};

use serde::{Deserialize, Serialize};

use crate::channel::{effective_transmittance, ChannelParams};
use crate::decoy::{analyze, n_bound_from_p1, GainStatistics};
use crate::error::Result;
use crate::optimizer::{optimize, Budgets, EstimationMode, OptimizationResult, SearchSpec};

/// A run plan together with how its pulse count was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub plan: RunPlan,
    pub optimization: OptimizationResult,
    /// Smallest `N` meeting the grouping constraint at nominal statistics.
    pub n_threshold: f64,
    /// Fixed point of the finite pulse bound evaluated at its own nominal
    /// statistics.
    pub n_bound: f64,
}

/// Iterates the finite pulse bound on nominal statistics until it stops
/// moving.
pub fn self_consistent_bound(src: &crate::channel::SourceParams, ch: &ChannelParams, start: f64) -> Result<f64> {
    let eta = effective_transmittance(ch);
    let y0 = ch.vacuum_yield();
    let mut n = start;
    for _ in 0..200 {
        let r = analyze(src, &GainStatistics::expected(src, eta, y0, n))?;
        let next = n_bound_from_p1(src, r.q_bounds[0].upper, r.p1_lower)?;
        if next == n {
            break;
        }
        n = next;
    }
    Ok(n)
}

/// Optimizes the source for `ch` and sizes the run so that both the finite
/// bound and the Client's own threshold test are met in expectation.
pub fn plan_run(
    ch: &ChannelParams,
    budgets: &Budgets,
    search: &SearchSpec,
    batch_size: u64,
    seed: u64,
) -> Result<PlannedRun> {
    let opt = optimize(ch, budgets, search, EstimationMode::Finite, seed)?;
    let src = budgets.source(opt.mu, opt.nu, opt.p_mu, opt.p_nu)?;
    let n_threshold = opt.n_required;
    let n_bound = self_consistent_bound(&src, ch, n_threshold)?;
    let n = n_threshold.max(n_bound).ceil();
    if n > u64::MAX as f64 {
        return Err(crate::Error::Infeasible);
    }
    let plan = RunPlan { src, n_pulses: n as u64, batch_size };
    plan.validate()?;
    Ok(PlannedRun { plan, optimization: opt, n_threshold, n_bound })
}
