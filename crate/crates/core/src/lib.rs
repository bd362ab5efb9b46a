//! Phase-coherent distributed-MIMO integrated sensing and communication.
//!
//! Kernels are generic over [`scalar::Scalar`]; the aliases at the crate root
//! fix the scalar to `f64`, which is what the harness and CLI use.

pub mod channel;
pub mod estimator;
pub mod fisher;
pub mod optim;
pub mod comm;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod scalar;
pub mod scenario;
pub mod selection;
pub mod validate;
pub mod waveform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Position2D = geometry::Position2D<f64>;
pub type ArrayGeometry = geometry::ArrayGeometry<f64>;
pub type ApNode = geometry::ApNode<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type Target = scenario::Target<f64>;
pub type CommChannels = channel::CommChannels<f64>;
pub type TransmitFrame = waveform::TransmitFrame<f64>;
pub type SeReport = comm::SeReport<f64>;
