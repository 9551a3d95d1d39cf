//! Training, evaluation and the command-line interface.

pub mod cli;
pub mod metrics;
pub mod train;

pub use metrics::{evaluate, expected_ordinal_error, Confusion, EvalReport};
pub use train::{train, train_with, EpochLog, TrainObserver, TrainOutcome, TrainState};
