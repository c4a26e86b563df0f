//! Topology-aware proactive SLA management for an NFV service.
//!
//! The pipeline: telemetry ingestion or synthesis, quantile transformation and
//! sliding-window batching, a graph-convolutional GRU forecaster over the
//! 6-component service topology, SLO/SLA rule evaluation, and a deep
//! Q-learning agent that turns forecasts into scale-up decisions.

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type the core math is generic over. Blanket-implemented for
/// `f32` and `f64`; the shipped pipeline uses `f64` throughout.
pub trait Real: Float + FromPrimitive + NumAssign + LinalgScalar + Sum + Debug + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + NumAssign + LinalgScalar + Sum + Debug + 'static {}

pub mod agent;
pub mod cli;
pub mod forecaster;
pub mod numerics;
pub mod sla;
pub mod telemetry;
pub mod topology;

/// Concrete spectral basis used by the shipped pipeline.
pub type SpectralBasis = topology::SpectralBasis<f64>;
/// Concrete autodiff tape used by the shipped pipeline.
pub type Tape = numerics::Tape<f64>;
/// Concrete parameter set used by the shipped pipeline.
pub type ParamSet = numerics::ParamSet<f64>;
