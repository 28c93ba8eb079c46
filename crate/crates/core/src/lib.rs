//! Simulator and resource estimator for decoy-state remote blind qubit
//! preparation.
//!
//! A Client sends phase-randomized weak coherent pulses of three intensities
//! to a Server, which keeps the pulses its QND measurement heralds. From the
//! reported gains the Client bounds the number of single-photon pulses, decides
//! whether enough arrived, and has the Server fuse random groups of qubits into
//! one blind qubit each through an interlaced 1-D cluster computation.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod decoy;
pub mod error;
pub mod hom;
pub mod i1dc;
pub mod optimizer;
pub mod params;
pub mod protocol;
pub mod qubit;
pub mod reference;
pub mod rng;

pub use error::{Error, Result};
