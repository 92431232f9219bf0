//! Alternating GAN optimisation, reference consumption and checkpoint selection.

mod checkpoint;
mod config;
mod metrics;
mod silence;
mod trainer;

pub use checkpoint::{
    checkpoint_path, evaluate_generator, read_sidecar, save_checkpoint, select_checkpoint,
    Checkpoint, CheckpointEval, Selection,
};
pub use config::{Ablation, TrainConfig};
pub use metrics::{parse_metrics_csv, MetricHistory, MetricRow, METRICS_HEADER};
pub use silence::silence_insert;
pub use trainer::{train, StepReport, TrainData, TrainOutcome, Trainer};

use std::collections::BTreeMap;

use crate::error::Result;
use crate::features::SegmentSequence;
use crate::phoneme_lm::{build_ref_pool, MaskedLm};
use crate::rng::stream;

/// What an ablation run needs besides the configuration: the pool is
/// rebuilt because two of the switches act on reference sampling.
#[derive(Clone, Copy)]
pub struct AblationInputs<'a> {
    pub train: &'a [SegmentSequence],
    pub heldout: &'a [SegmentSequence],
    pub lm: &'a MaskedLm,
    pub corpus: &'a [Vec<Vec<usize>>],
    pub sweeps: usize,
    pub threads: usize,
}

/// Trains with the given components switched off, provisioning a fresh pool.
pub fn run_ablation(
    cfg: &TrainConfig,
    which: &[Ablation],
    inputs: &AblationInputs<'_>,
) -> Result<TrainOutcome> {
    let cfg = cfg.clone().with_ablations(which);
    cfg.validate()?;
    let ids: Vec<String> = inputs.train.iter().map(|s| s.source_id.clone()).collect();
    let targets: BTreeMap<String, usize> = inputs
        .train
        .iter()
        .map(|s| (s.source_id.clone(), s.len()))
        .collect();
    let refs = build_ref_pool(
        inputs.lm,
        inputs.corpus,
        &ids,
        &targets,
        &cfg.pool_config(inputs.sweeps, inputs.threads),
        &mut stream(cfg.seed, "refpool"),
    )?;
    train(
        &cfg,
        &TrainData {
            train: inputs.train,
            refs: &refs,
            heldout: inputs.heldout,
            lm: inputs.lm,
        },
    )
}

#[cfg(test)]
mod tests;
