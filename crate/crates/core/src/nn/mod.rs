//! Dense neural networks with hand-written backpropagation, Adam, dropout
//! and the loss primitives used by the agents.

mod adam;
mod dropout;
mod loss;
mod net;
pub mod snapshot;

pub use adam::AdamState;
pub use dropout::DropoutMasks;
pub use loss::{
    clip_grad_norm, cross_entropy_loss, huber_loss, log_softmax, logsumexp, quantile_huber_loss,
    quantile_weight, softmax,
};
pub use net::{DenseNet, Forward, OutputActivation};
