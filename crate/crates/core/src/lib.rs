//! Successive affine learning (SAL): deep networks trained one grade at a
//! time, each grade fitted by a convex least-squares problem on the residual
//! left by the grades before it.

pub mod activation;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod pooling;
pub mod qp;
pub mod report;
pub mod smoothing;
pub mod ssg;
pub mod trainer;

pub use error::{Error, Result};
