//! Fixed batches of experience: behavioral data collection, persistence,
//! minibatch sampling and exact state-action counts.

mod behavioral;
mod dataset;
mod io;

pub use behavioral::{
    generate_batch, generate_batch_with_log, train_behavioral, BehavioralConfig, BehavioralPolicy,
    BehavioralQ, EpsilonMixture, GenerationLog,
};
pub use dataset::{coverage_holes, sample_minibatch, BatchDataset, CountTable, Transition};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
