//! Small discrete MDPs with known dynamics and an exact dynamic-programming
//! oracle.

mod catalog;
mod env;
mod oracle;
mod spec;

pub use catalog::{
    chain, cliff_grid, coordinate_features, make_env, stochastic_grid, DISCOUNT, ENV_NAMES,
    GRID_ACTIONS,
};
pub use env::{one_hot_index, Encoding, Env, Episode, Outcome, Step, DEFAULT_MAX_STEPS};
pub use oracle::{
    bellman_optimality_backup, bellman_policy_backup, expected_episode_return, policy_evaluation,
    value_iteration, PolicyTable, QTable,
};
pub use spec::{MdpBuilder, MdpSpec};
