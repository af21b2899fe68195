//! Phasor-level grid transient simulation with virtual synchronous
//! generator control of inverter-based resources.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod der;
pub mod engine;
pub mod error;
pub mod inner_loop;
pub mod metrics;
pub mod network;
pub mod ode;
pub mod output;
pub mod scenario;
pub mod syncgen;
pub mod units;
pub mod vsg;

pub use error::{Error, Result};
pub use units::{PerUnitSystem, Phasor, QuantityKind, TraceSet};
pub use engine::{integrate, RunResult, Simulation};
pub use metrics::{compute_metrics, Metrics};
pub use scenario::{load_document, load_scenario, Document, LoadOptions, Scenario};
