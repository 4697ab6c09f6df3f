//! Spiking neural network decoding toolkit.
//!
//! This crate implements a complete pipeline for classifying multi-channel
//! spike-count recordings:
//!
//! * a small reverse-mode autodiff tensor engine ([`tensor`]) with Adam and
//!   cosine annealing ([`optim`]),
//! * leaky integrate-and-fire dynamics with surrogate gradients
//!   ([`spiking`]),
//! * a multi-path encoder combining a learnable time-axis map, spiking
//!   channel attention, and causal dilated temporal convolution
//!   ([`encoder`]),
//! * full decoder assemblies plus a non-spiking twin and an MLP baseline
//!   ([`model`]), with a binary checkpoint format ([`checkpoint`]),
//! * a synthetic spike-train generator with cross-day drift and a
//!   directory dataset format ([`datakit`]),
//! * training, evaluation, cross-day fine-tuning protocols, and the
//!   ablation harness ([`training`]),
//! * a synaptic-operation energy estimator comparing spiking and
//!   non-spiking execution ([`energy`]).
//!
//! The math layers are generic over the scalar type via [`scalar::Scalar`];
//! the pipeline runs everything at `f64` through the aliases below because
//! the file formats and determinism guarantees are defined for 64-bit
//! floats.

pub mod checkpoint;
pub mod datakit;
pub mod encoder;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod spiking;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Pipeline-level tensor: 64-bit elements.
pub type Tensor = tensor::Tensor<f64>;
/// Pipeline-level LIF constants.
pub type LifParams = spiking::LifParams<f64>;
/// Pipeline-level LIF state.
pub type LifState = spiking::LifState<f64>;
/// Pipeline-level Adam state.
pub type AdamState = optim::AdamState<f64>;
/// Pipeline-level learning-rate schedule.
pub type LrSchedule = optim::LrSchedule<f64>;
/// Pipeline-level sub-encoder weights.
pub type SubEncoderWeights = encoder::SubEncoderWeights<f64>;
