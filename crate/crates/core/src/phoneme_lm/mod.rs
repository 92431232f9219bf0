//! Masked phoneme language model: training, length-guided Gibbs sampling,
//! reference pools and pseudo-likelihood scoring.

mod model;
mod pool;

pub use model::{LmShape, MaskedLm};
pub use pool::{build_ref_pool, sample_with_length, PoolConfig, RefEntry, RefPool};

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{input_err, Error, Result};
use crate::numerics::{AdamConfig, Array2, Tape};

/// Optimisation settings for [`train_mlm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlmConfig {
    pub shape: LmShape,
    pub mask_frac: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub heldout_frac: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            shape: LmShape::default(),
            mask_frac: 0.15,
            steps: 1000,
            batch: 32,
            lr: 2e-3,
            heldout_frac: 0.1,
        }
    }
}

/// Held-out pseudo-likelihood before and after training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlmReport {
    pub heldout_nll_initial: f64,
    pub heldout_nll_final: f64,
}

const HELDOUT_CAP: usize = 64;

/// Trains a masked LM on phoneme sequences over ids `0..n_out`.
pub fn train_mlm<R: Rng>(
    corpus: &[Vec<usize>],
    n_out: usize,
    sil: Option<usize>,
    cfg: &MlmConfig,
    rng: &mut R,
) -> Result<(MaskedLm, MlmReport)> {
    if corpus.is_empty() || corpus.iter().any(Vec::is_empty) {
        return input_err("language model corpus is empty or has empty sequences");
    }
    if !(cfg.mask_frac > 0.0 && cfg.mask_frac < 1.0) {
        return Err(Error::Config(format!(
            "mask fraction {} outside (0, 1)",
            cfg.mask_frac
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("language model batch size 0".into()));
    }
    let mut lm = MaskedLm::init(n_out, sil, cfg.shape, rng)?;

    let n_held = if corpus.len() < 2 {
        0
    } else {
        ((corpus.len() as f64 * cfg.heldout_frac).ceil() as usize).clamp(1, corpus.len() - 1)
    };
    let (train, held) = corpus.split_at(corpus.len() - n_held);
    let held = if held.is_empty() { train } else { held };
    let held = &held[..held.len().min(HELDOUT_CAP)];
    let initial = mean_nll(&lm, held)?;

    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-8,
    };
    let mask = lm.mask_id();
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch);
        let mut targets = Vec::new();
        let mut rows = Vec::new();
        let mut off = 0;
        for _ in 0..cfg.batch {
            let seq = &train[rng.random_range(0..train.len())];
            let mut masked = seq.clone();
            let mut any = false;
            for (i, slot) in masked.iter_mut().enumerate() {
                if rng.random::<f64>() < cfg.mask_frac {
                    rows.push(off + i);
                    targets.push(*slot);
                    *slot = corrupt(*slot, mask, n_out, rng);
                    any = true;
                }
            }
            if !any {
                let i = rng.random_range(0..seq.len());
                rows.push(off + i);
                targets.push(seq[i]);
                masked[i] = corrupt(seq[i], mask, n_out, rng);
            }
            off += seq.len();
            inputs.push(masked);
        }
        let mut tape = Tape::new();
        let bind = tape.bind(&lm.params, true);
        let probs = lm.forward_tape(&mut tape, &bind, &inputs)?;
        let picked = tape.gather_rows(probs, &rows)?;
        let mut onehot = Array2::zeros(rows.len(), n_out);
        for (r, &t) in targets.iter().enumerate() {
            onehot.set(r, t, 1.0);
        }
        let hit = tape.mul_const(picked, onehot)?;
        let p = tape.sum_cols(hit);
        let p = tape.clamp(p, 1e-12, 1.0);
        let lp = tape.log(p);
        let s = tape.sum_all(lp);
        let loss = tape.scale(s, -1.0 / rows.len() as f64);
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite(format!(
                "language model loss at step {step}"
            )));
        }
        tape.backward(loss, &bind, &mut lm.params)?;
        lm.params.adam_step(&adam);
        if step % 200 == 0 {
            debug!("mlm step {step}: masked ce {:.4}", tape.scalar(loss));
        }
    }
    let report = MlmReport {
        heldout_nll_initial: initial,
        heldout_nll_final: mean_nll(&lm, held)?,
    };
    Ok((lm, report))
}

/// BERT-style replacement of a selected position: 80% MASK, 10% a random
/// id, 10% unchanged. Training on random replacements teaches the model to
/// overrule a single inconsistent neighbour, which lets single-site Gibbs
/// chains repair defects instead of freezing around them.
fn corrupt<R: Rng>(id: usize, mask: usize, n_out: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < 0.8 {
        mask
    } else if u < 0.9 {
        rng.random_range(0..n_out)
    } else {
        id
    }
}

fn mean_nll(lm: &MaskedLm, seqs: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    for s in seqs {
        total += nll_score(lm, s)?;
    }
    Ok(total / seqs.len().max(1) as f64)
}

/// Mean over positions of `-ln p(id_i | rest)`, masking one position at a time.
pub fn nll_score(lm: &MaskedLm, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return input_err("cannot score an empty sequence");
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= lm.n_out()) {
        return input_err(format!("unknown phoneme id {bad}"));
    }
    let batch: Vec<Vec<usize>> = (0..ids.len())
        .map(|i| {
            let mut s = ids.to_vec();
            s[i] = lm.mask_id();
            s
        })
        .collect();
    let probs = lm.predict(&batch)?;
    let total: f64 = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| -probs[i].get(i, id).max(1e-300).ln())
        .sum();
    Ok(total / ids.len() as f64)
}

/// Fraction of positions whose single-masked argmax recovers the true id.
pub fn masked_accuracy(lm: &MaskedLm, seqs: &[Vec<usize>]) -> Result<f64> {
    let mut hits = 0;
    let mut total = 0;
    for ids in seqs {
        let batch: Vec<Vec<usize>> = (0..ids.len())
            .map(|i| {
                let mut s = ids.clone();
                s[i] = lm.mask_id();
                s
            })
            .collect();
        let probs = lm.predict(&batch)?;
        for (i, &id) in ids.iter().enumerate() {
            let row = probs[i].row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(best == id);
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

pub(crate) fn shuffled_positions<R: Rng>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny(steps: usize) -> MlmConfig {
        MlmConfig {
            shape: LmShape {
                width: 16,
                heads: 2,
                blocks: 2,
                ff_mult: 2,
            },
            steps,
            batch: 16,
            lr: 3e-3,
            ..MlmConfig::default()
        }
    }

    #[test]
    fn single_symbol_corpus_is_learned_quickly() {
        let corpus: Vec<Vec<usize>> = (0..40).map(|i| vec![2; 3 + i % 5]).collect();
        let (lm, report) = train_mlm(&corpus, 5, None, &tiny(50), &mut stream(1, "t")).unwrap();
        assert!(report.heldout_nll_final < report.heldout_nll_initial);
        assert_eq!(masked_accuracy(&lm, &corpus[36..]).unwrap(), 1.0);
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let lm = MaskedLm::init(8, None, tiny(0).shape, &mut stream(2, "t")).unwrap();
        let ln_v = 8f64.ln();
        let nll = nll_score(&lm, &[0, 3, 5, 7, 1, 2]).unwrap();
        assert!((nll - ln_v).abs() < 0.05 * ln_v, "{nll} vs {ln_v}");
        let single = nll_score(&lm, &[4]).unwrap();
        assert!((single - ln_v).abs() < 0.05 * ln_v);
    }

    #[test]
    fn deterministic_bigram_corpus_reaches_low_nll() {
        // each symbol fully determines the next: i -> (i + 1) mod V
        let v = 6;
        let mut rng = stream(3, "corpus");
        let corpus: Vec<Vec<usize>> = (0..300)
            .map(|_| {
                let start = rng.random_range(0..v);
                let len = rng.random_range(4..9);
                (0..len).map(|k| (start + k) % v).collect()
            })
            .collect();
        let (lm, report) = train_mlm(&corpus, v, None, &tiny(400), &mut stream(3, "t")).unwrap();
        let bound = 0.2 * (v as f64).ln();
        assert!(report.heldout_nll_final < bound, "{report:?} vs {bound}");

        // paired: in-distribution strings beat shuffled ones
        let mut rng = stream(4, "pairs");
        for _ in 0..20 {
            let start = rng.random_range(0..v);
            let good: Vec<usize> = (0..6).map(|k| (start + k) % v).collect();
            let mut bad = good.clone();
            while bad == good {
                bad.shuffle(&mut rng);
            }
            assert!(nll_score(&lm, &good).unwrap() < nll_score(&lm, &bad).unwrap());
        }
    }

    #[test]
    fn scoring_contract() {
        let lm = MaskedLm::init(4, None, tiny(0).shape, &mut stream(5, "t")).unwrap();
        assert!(nll_score(&lm, &[]).is_err());
        assert!(nll_score(&lm, &[4]).is_err());
        let a = nll_score(&lm, &[0, 1, 2, 3]).unwrap();
        assert_eq!(a, nll_score(&lm, &[0, 1, 2, 3]).unwrap());
        assert_ne!(a, nll_score(&lm, &[3, 2, 1, 0]).unwrap());
        assert!(train_mlm(&[], 4, None, &tiny(1), &mut stream(0, "t")).is_err());
        let bad = MlmConfig {
            mask_frac: 1.0,
            ..tiny(1)
        };
        assert!(train_mlm(&[vec![0, 1]], 4, None, &bad, &mut stream(0, "t")).is_err());
    }
}
