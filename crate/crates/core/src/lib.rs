//! Lightweight CNN engine for binary PV-cell defect classification.
//!
//! Dense tensor kernels with hand-written backward passes, the PV-faultNet
//! architecture and its parameter audit, seeded augmentation, dataset
//! handling, metrics and a deterministic SGD-with-momentum trainer.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
