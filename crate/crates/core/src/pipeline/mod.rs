//! Staged pipeline: synthetic data, LM, reference pool, training, evaluation.

pub mod config;
pub mod dataset;
pub mod grammar;
pub mod stages;

pub use config::RunConfig;
pub use dataset::{Inventory, Manifest};
pub use grammar::{Grammar, GrammarConfig};
pub use stages::{
    cmd_ablate, cmd_evaluate, cmd_gen_data, cmd_sample_refs, cmd_train, cmd_train_lm, Layout,
};
