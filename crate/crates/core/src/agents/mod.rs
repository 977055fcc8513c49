//! The six discrete-action batch/off-policy learners behind one state type.

mod config;
mod policy;
mod state;

pub use config::{AgentConfig, Algorithm, KlControlConfig, KlPolicyMode, SpibbConfig, SpibbTarget};
pub use policy::{
    bcq_admissible, bcq_constrained_argmax, klcontrol_policy, sample_categorical, sample_simplex,
    spibb_policy, KlAction,
};
pub use state::{AgentState, BcGrad, KlMasks, QGrad, UpdateStats};
