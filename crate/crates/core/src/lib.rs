//! Deterministic cross-silo federated learning simulator.
//!
//! The crate compares two ways of dealing with client heterogeneity on
//! synthetic federations whose shift is split into a style (appearance)
//! axis and a content (structure) axis:
//!
//! * data-side harmonization: a per-client input transform feeding one
//!   shared model ([`harmonize`]),
//! * model-side personalization: client-specific parameters
//!   ([`strategies`]).
//!
//! [`engine`] wires federations, models, strategies and harmonizers into
//! reproducible experiments and evaluates them with the suites in
//! [`metrics`].

pub mod engine;
pub mod error;
pub mod harmonize;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod strategies;
pub mod synthdata;

pub use error::{FedError, Result};
pub use numerics::{RngStream, StreamKey, Tensor};

/// Version string recorded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
