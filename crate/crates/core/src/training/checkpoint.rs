use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adversarial::{generate, Generator};
use crate::error::{input_err, Error, Result};
use crate::evaluation::decode;
use crate::features::SegmentSequence;
use crate::numerics::ParamStore;
use crate::phoneme_lm::{nll_score, MaskedLm};

/// Unsupervised metrics of one generator snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEval {
    pub step: usize,
    /// Mean LM NLL of the non-empty decoded strings; `None` when every
    /// decode came out empty.
    pub lm_nll: Option<f64>,
    /// Fraction of the non-silence inventory present in the decodes.
    pub vocab_usage: f64,
}

/// A snapshot kept in memory during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub eval: CheckpointEval,
    pub gen: ParamStore,
}

/// Decodes `heldout` with `gen` and scores the strings under `lm`.
pub fn evaluate_generator(
    gen: &Generator,
    lm: &MaskedLm,
    heldout: &[SegmentSequence],
    step: usize,
) -> Result<CheckpointEval> {
    if heldout.is_empty() {
        return input_err("checkpoint evaluation needs a held-out batch");
    }
    let inventory = lm.n_out() - usize::from(lm.sil().is_some());
    let mut seen = BTreeSet::new();
    let (mut total, mut scored) = (0.0, 0usize);
    for s in heldout {
        let d = decode(&s.source_id, &generate(gen, s)?, lm.sil());
        if d.phonemes.is_empty() {
            continue;
        }
        seen.extend(d.phonemes.iter().copied());
        total += nll_score(lm, &d.phonemes)?;
        scored += 1;
    }
    Ok(CheckpointEval {
        step,
        lm_nll: (scored > 0).then(|| total / scored as f64),
        vocab_usage: seen.len() as f64 / inventory.max(1) as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Index into the evaluated checkpoints.
    pub index: usize,
    pub step: usize,
    /// Set when no checkpoint reached the usage floor.
    pub warning: Option<String>,
}

/// Lowest LM NLL among checkpoints with usage at or above `usage_floor`,
/// earliest on ties. Falls back to the highest-usage checkpoint when none
/// passes the floor.
pub fn select_checkpoint(evals: &[CheckpointEval], usage_floor: f64) -> Result<Selection> {
    if evals.is_empty() {
        return input_err("no evaluated checkpoints to select from");
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in evals.iter().enumerate() {
        let Some(nll) = e.lm_nll else { continue };
        if e.vocab_usage >= usage_floor && best.is_none_or(|(_, b)| nll < b) {
            best = Some((i, nll));
        }
    }
    if let Some((index, _)) = best {
        return Ok(Selection {
            index,
            step: evals[index].step,
            warning: None,
        });
    }
    let mut index = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.vocab_usage > evals[index].vocab_usage {
            index = i;
        }
    }
    let warning = format!(
        "no checkpoint reached vocabulary usage {usage_floor}; fell back to step {} (usage {})",
        evals[index].step, evals[index].vocab_usage
    );
    log::warn!("{warning}");
    Ok(Selection {
        index,
        step: evals[index].step,
        warning: Some(warning),
    })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("gen_step{step:06}.dguw"))
}

/// Writes generator weights plus a `key=value` sidecar with the config hash and step.
pub fn save_checkpoint(dir: &Path, step: usize, gen: &ParamStore, config_hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = checkpoint_path(dir, step);
    gen.save(&path)?;
    fs::write(
        path.with_extension("txt"),
        format!("config_hash={config_hash}\nstep={step}\n"),
    )?;
    Ok(path)
}

/// Reads a checkpoint sidecar, returning `(config_hash, step)`.
pub fn read_sidecar(weights: &Path) -> Result<(String, usize)> {
    let side = weights.with_extension("txt");
    if !side.exists() {
        return Err(Error::MissingArtifact(side));
    }
    let text = fs::read_to_string(&side)?;
    let (mut hash, mut step) = (None, None);
    for line in text.lines() {
        match line.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("step", v)) => step = v.parse().ok(),
            _ => {}
        }
    }
    match (hash, step) {
        (Some(h), Some(s)) => Ok((h, s)),
        _ => Err(Error::Format(format!("malformed sidecar {}", side.display()))),
    }
}
