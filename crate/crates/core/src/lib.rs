//! Desk-scale mobile network security testbed.
//!
//! The crate is split along the data flow of the testbed:
//!
//! - [`netsim`]: discrete-event simulation of UE populations, the 3-state RRC
//!   machine, the signaling core as an open queueing network, and CDR emission.
//! - [`attacks`]: injection of signaling storms, botnet signaling DDoS and
//!   premium-rate fraud into a [`netsim::Scenario`].
//! - [`features`]: windowing and per-window statistics of event streams.
//! - [`detect`]: exponential CUSUM, random neural network, rule-based attack
//!   classification and verdict fusion into [`detect::Alert`]s.
//! - [`dci`]: append-only attack trace store with table-driven enrichment,
//!   source aggregation, k-means clustering and exact queries.
//! - [`honeynode`]: logical model of a mediated mobile honeypot.
//!
//! All randomness flows through [`rng::stream`], so a fixed seed reproduces
//! every artifact bit for bit.

pub mod attacks;
pub mod dci;
pub mod detect;
pub mod error;
pub mod features;
pub mod honeynode;
pub mod netsim;
pub mod rng;

pub use error::{Error, Result};
pub use features::{FeatureVector, Scope};
pub use netsim::{ChargingDataRecord, Scenario, SignalingEvent, SignalingKind, TraceSet, UeId};
