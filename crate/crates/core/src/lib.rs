//! Offline (batch) reinforcement learning on small MDPs.
//!
//! * [`mdp`]: environments with known dynamics and a dynamic-programming
//!   oracle.
//! * [`nn`]: dense networks with exact backpropagation, Adam and the loss
//!   primitives.
//! * [`data`]: behavioral data collection and fixed batches.
//! * [`agents`]: DQN, QR-DQN, REM, KL-Control, SPIBB-DQN and discrete BCQ.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what the harness uses.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod data;
mod error;
pub mod mdp;
pub mod nn;
mod scalar;

pub use error::{Error, Result};
pub use scalar::{argmax, max, Scalar};

pub type Agent = agents::AgentState<f64>;
pub type Net = nn::DenseNet<f64>;
pub type Adam = nn::AdamState<f64>;
pub type QTable = mdp::QTable<f64>;
pub type Policy = mdp::PolicyTable<f64>;

pub type Agent32 = agents::AgentState<f32>;
pub type Net32 = nn::DenseNet<f32>;
