//! Uplink CSI feedback versus downlink rate in cooperating cellular networks.
//!
//! The crate builds a hexagonal network, draws block-fading channels, quantizes
//! them for feedback, allocates feedback bits across antennas, and evaluates
//! the resulting downlink rates both analytically and with an operational
//! modulo-lattice transceiver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod fading;
pub mod invariants;
pub mod lattice;
pub mod linalg;
pub mod precoder;
pub mod quantizer;
pub mod rng;
pub mod topology;

pub use allocator::{allocate_finite, allocate_infinite, error_sum, FeedbackAllocation};
pub use error::{Error, Result};
pub use fading::{coherence_block, ChannelRealization, CoherenceSpec};
pub use lattice::{run_downlink, LatticeConfig, Scheme, SimResult};
pub use linalg::CMatrix;
pub use precoder::{lq_decompose, PrecoderState, RateEstimate};
pub use quantizer::{QuantizedChannel, QuantizerKind, QuantizerSpec};
pub use topology::{GainMatrix, NetworkTopology, Point};
