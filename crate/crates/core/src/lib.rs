//! Kalman filter extensions that exploit model structure: partially linear
//! functions, conditionally linear inputs, static unobserved state blocks,
//! and structured innovation covariances.

pub mod bench;
pub mod cli;
pub mod conditional;
pub mod cost;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod innovation;
pub mod linalg;
pub mod partial_linear;
pub mod random;
pub mod scenarios;
pub mod static_state;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
pub use gaussian::{GaussianDensity, IndexPartition, NoiseModel};
pub use transforms::{MomentTriple, SharedFunction, Transform, VectorFunction};
