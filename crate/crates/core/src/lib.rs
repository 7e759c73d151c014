//! Convolutional spiking neural networks trained through a ReLU proxy.
//!
//! Two networks share one set of weights: a time-stepped integrate-and-fire
//! network ([`snn`]) and a conventional ReLU network ([`ann`]). The proxy
//! trainer ([`trainer`]) runs both forward passes independently, swaps the
//! spiking network's spike-count softmax into the cross-entropy gradient,
//! and backpropagates through the ReLU network to update the shared weights.
//! [`baselines`] provides the two reference trainers (plain backpropagation
//! with post-hoc conversion, and surrogate-gradient BPTT) against which the
//! proxy method is compared.

pub mod ann;
pub mod arch;
pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod snn;
pub mod tensor;
pub mod trainer;

pub use arch::{Architecture, LayerSpec};
pub use autodiff::{GradBuffer, ModelParams, Parameter, Tape};
pub use error::{Error, Result};
pub use snn::{IfConfig, ResetMode};
pub use tensor::{Precision, Scalar, Tensor};
pub use trainer::TrainConfig;
