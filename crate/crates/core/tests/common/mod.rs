//! Helpers shared by the integration targets.
#![allow(dead_code)]

use rbqp::channel::{ChannelParams, SourceParams};
use rbqp::protocol::message::Payload;
use rbqp::protocol::{
    ClientEndpoint, ClientPhase, ClientSecrets, ClientState, OpticalBatch, Outbound, Outcome, ProtocolMessage, RunPlan,
};
use rbqp::qubit::Angle;
use rbqp::rng::substream;
use rbqp::Result;

/// Client that reorders each group by its members' secret angles, a covert
/// channel the Server could decode.
pub struct LeakyClient(pub ClientState);

impl ClientEndpoint for LeakyClient {
    fn next(&mut self, inbound: Option<&ProtocolMessage>) -> Result<Outbound> {
        let mut out = self.0.next(inbound)?;
        let angles = self.0.secrets().angles.clone();
        for m in &mut out.messages {
            if let Payload::Grouping(g) = &mut m.payload {
                for group in &mut g.groups {
                    group.sort_by_key(|&i| (angles[i as usize], i));
                }
            }
        }
        Ok(out)
    }

    fn phase(&self) -> ClientPhase {
        self.0.phase()
    }

    fn outcome(&self) -> Option<Outcome> {
        self.0.outcome()
    }

    fn optical(&self, batch: u64) -> Option<OpticalBatch> {
        self.0.optical(batch)
    }
}

/// Secrets with the intensity choices of `seed` and angles drawn from `angle_seed`.
pub fn secrets_with_angles(plan: &RunPlan, seed: u64, angle_seed: u64) -> ClientSecrets {
    let mut s = ClientSecrets::generate(&plan.src, plan.n_pulses, seed);
    let mut r = substream(angle_seed, "test.angles", 0);
    s.angles = (0..plan.n_pulses).map(|_| Angle::random(&mut r)).collect();
    s
}

/// Small lossless run that completes for seed 4.
pub fn toy_plan() -> RunPlan {
    RunPlan { src: SourceParams::new(1.0, 0.3, 0.7, 0.2, 2, 0.9, 1.0).unwrap(), n_pulses: 32, batch_size: 8 }
}

/// A larger lossless run with several groups.
pub fn mid_plan() -> RunPlan {
    RunPlan { src: SourceParams::new(0.9, 0.2, 0.7, 0.2, 4, 0.1, 0.5).unwrap(), n_pulses: 600, batch_size: 128 }
}

/// Desk-scale link: transmittance 0.1 with the experimental dark counts.
pub fn desk_channel() -> ChannelParams {
    ChannelParams { qnd_success_prob: 0.1, dark_count_prob: 4e-7, n_detectors: 8, ..ChannelParams::ideal(1.0) }
}
