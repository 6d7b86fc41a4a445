//! `cfkit` implements the ContextFormer semantic-segmentation network on a
//! small deterministic NCHW tensor engine.
//!
//! The crate is organised the way the network is:
//!
//! * [`tensor`]: the operators, each with a naive reference path, an
//!   optimized path and a hand-written backward pass.
//! * [`gme`]: the five-channel input (RGB, Sobel magnitude, edge map).
//! * [`model`]: declarative configuration, the static layer graph, parameter
//!   storage, the `CFW1` weight container and forward/backward execution.
//! * [`analysis`]: parameter, MAC and activation-memory accounting plus a
//!   latency microbenchmark.
//! * [`verify`]: finite-difference gradient checks, operator oracle sweeps
//!   and invariant suites.
//! * [`cli`]: the command implementations behind the `cfkit` binary.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod gme;
pub mod model;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Graph, Model, ModelConfig, ParamStore};
pub use tensor::{Real, Tensor};
