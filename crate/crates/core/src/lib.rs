//! SlimFL: a deterministic, seedable simulator of federated learning with
//! width-slimmable neural networks over superposition-coded wireless links.
//!
//! The crate is organized around the simulation pipeline:
//!
//! * [`channel`] — superposition-coding / successive-decoding link model:
//!   throughput, decode-success probabilities (closed form and Monte Carlo),
//!   Rayleigh fading, and the named channel presets.
//! * [`nn`] — a minimal dense/convolutional network engine with hand-written
//!   backward passes and Adam, sized for UL-MobileNet.
//! * [`slim`] — the slimmable UL-MobileNet: width-sliced execution, left/right
//!   segment split and stack, superposition training and the USTrain baseline.
//! * [`data`] — IDX dataset ingestion and Dirichlet non-IID partitioning.
//! * [`federation`] — the round loop (local training, SC uplink, aggregation,
//!   SC downlink) plus all vanilla and transmission-mode baselines.
//! * [`metrics`] — accuracy evaluation, convergence detection, and the
//!   bit/energy accounting.
//! * [`config`] — experiment configuration, manifest hashing, and defaults.
//! * [`report`] — CSV table renderers for run logs and channel presets.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod slim;

pub use channel::{ChannelParams, ChannelPreset, DecodeLevel, Link, PowerAllocation};
pub use data::{Dataset, Shard};
pub use error::Error;
pub use federation::{run_experiment, RoundRecord, TransmissionMode};
pub use metrics::{ConvergenceCriterion, EnergyLedger};
pub use nn::Scalar;
pub use slim::{SlimModel, Width};
