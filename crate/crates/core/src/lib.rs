//! Bit-exact simulation and analysis of XNOR-based binary neural network
//! inference on memristor crossbars.
//!
//! The crate is organised bottom-up:
//!
//! - [`bincore`]: packed binary tensors and the XNOR/popcount arithmetic.
//! - [`crossbar`]: column mapping, sense-amplifier (SA) readout against one or
//!   more references, and per-layer forward evaluation.
//! - [`cascade`]: cascading functions that merge split-column readouts, plus
//!   exact and Monte-Carlo accuracy-loss analyses.
//! - [`dataflow`]: column-sliced convolution buffer, kernel layout and the
//!   inter-layer pipeline schedule.
//! - [`costmodel`]: energy/latency estimates for the SA-thresholded design and
//!   the sequential differential-sensing baseline.
//! - [`netio`]: network topologies, weight containers, IDX datasets and the
//!   inference runner.
//! - [`verify`]: exhaustive self-checks used by the `verify` command.
//!
//! Floating-point code (binarisation, cost model) is generic over
//! [`Real`]; the aliases below pin the common instantiations.

pub mod bincore;
pub mod cascade;
pub mod costmodel;
pub mod crossbar;
pub mod dataflow;
pub mod error;
pub mod netio;
pub mod scalar;
pub mod verify;

pub use bincore::{BinaryTensor, SignedVector, TieRule};
pub use cascade::{CascadeKind, CascadePolicy, DistSpec, LossRegionReport, McEstimate};
pub use crossbar::{CrossbarConfig, MappedColumnGroup, ReferenceSet, ReferenceSpec, SaReadout};
pub use dataflow::{ConvShape, ConvWindowBuffer, TransactionLog};
pub use error::{Error, Result};
pub use netio::{NetworkSpec, WeightContainer};
pub use scalar::Real;

/// Cost parameters in single precision.
pub type CostParamsF32 = costmodel::CostParams<f32>;
/// Cost parameters in double precision.
pub type CostParamsF64 = costmodel::CostParams<f64>;
/// Cost report in single precision.
pub type CostReportF32 = costmodel::CostReport<f32>;
/// Cost report in double precision.
pub type CostReportF64 = costmodel::CostReport<f64>;
/// Improvement factors in double precision.
pub type ComparisonF64 = costmodel::Comparison<f64>;
