use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use super::{shuffled_positions, MaskedLm};
use crate::error::{input_err, Error, Result};
use crate::numerics::array::{read_str, read_u32, write_str, write_u32};
use crate::numerics::Array2;
use crate::rng::stream;
use crate::training::silence_insert;

const POOL_MAGIC: &[u8; 4] = b"DGUR";

/// One pseudo reference: sampled ids and the dense per-position distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct RefEntry {
    pub ids: Vec<usize>,
    pub dense: Array2,
}

impl RefEntry {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn one_hot(ids: Vec<usize>, n_out: usize) -> Self {
        let mut dense = Array2::zeros(ids.len(), n_out);
        for (r, &i) in ids.iter().enumerate() {
            dense.set(r, i, 1.0);
        }
        Self { ids, dense }
    }
}

/// Pseudo references per utterance id, provisioned offline.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefPool {
    pub entries: BTreeMap<String, Vec<RefEntry>>,
}

impl RefPool {
    pub fn get(&self, id: &str) -> Option<&[RefEntry]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(POOL_MAGIC)?;
        write_u32(w, self.entries.len())?;
        for (id, list) in &self.entries {
            write_str(w, id)?;
            write_u32(w, list.len())?;
            for e in list {
                write_u32(w, e.ids.len())?;
                for &i in &e.ids {
                    write_u32(w, i)?;
                }
                e.dense.write_binary(w)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != POOL_MAGIC {
            return Err(Error::Format("bad reference pool magic".into()));
        }
        let n = read_u32(r)?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let id = read_str(r)?;
            let count = read_u32(r)?;
            let mut list = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let len = read_u32(r)?;
                let ids = (0..len)
                    .map(|_| read_u32(r).map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?;
                let dense = Array2::read_binary(r)?;
                if dense.rows() != ids.len() {
                    return Err(Error::Format(format!(
                        "entry of '{id}' has mismatched dense rows"
                    )));
                }
                list.push(RefEntry { ids, dense });
            }
            entries.insert(id, list);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

/// Runs independent Gibbs chains in lockstep, sharing one forward pass per
/// step. Returns each chain's final ids and the conditionals seen on its
/// last sweep.
fn gibbs<R: Rng>(
    lm: &MaskedLm,
    mut chains: Vec<Vec<usize>>,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vec<RefEntry>> {
    let n_out = lm.n_out();
    let mut dense: Vec<Array2> = chains
        .iter()
        .map(|c| Array2::zeros(c.len(), n_out))
        .collect();
    let longest = chains.iter().map(Vec::len).max().unwrap_or(0);
    for sweep in 0..sweeps {
        let orders: Vec<Vec<usize>> = chains
            .iter()
            .map(|c| shuffled_positions(c.len(), rng))
            .collect();
        for step in 0..longest {
            let live: Vec<usize> = (0..chains.len())
                .filter(|&c| step < chains[c].len())
                .collect();
            let batch: Vec<Vec<usize>> = live
                .iter()
                .map(|&c| {
                    let mut s = chains[c].clone();
                    s[orders[c][step]] = lm.mask_id();
                    s
                })
                .collect();
            let probs = lm.predict(&batch)?;
            for (b, &c) in live.iter().enumerate() {
                let pos = orders[c][step];
                let row = probs[b].row(pos);
                chains[c][pos] = categorical(row, rng);
                if sweep + 1 == sweeps {
                    dense[c].row_mut(pos).copy_from_slice(row);
                }
            }
        }
    }
    Ok(chains
        .into_iter()
        .zip(dense)
        .map(|(ids, dense)| RefEntry { ids, dense })
        .collect())
}

fn categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Gibbs sampling of exactly `target_len` ids from a uniform random start.
pub fn sample_with_length<R: Rng>(
    lm: &MaskedLm,
    target_len: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Array2)> {
    if target_len == 0 {
        return input_err("target length must be at least 1");
    }
    if sweeps == 0 {
        return input_err("at least one sweep is required");
    }
    let init: Vec<usize> = (0..target_len)
        .map(|_| rng.random_range(0..lm.n_out()))
        .collect();
    let entry = gibbs(lm, vec![init], sweeps, rng)?
        .pop()
        .expect("one chain");
    Ok((entry.ids, entry.dense))
}

/// Pool construction settings; `bert_sampling` and `length_guiding` are the
/// ablation switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolConfig {
    pub a: usize,
    pub epochs: usize,
    pub p_sil: f64,
    pub sweeps: usize,
    pub bert_sampling: bool,
    pub length_guiding: bool,
    pub threads: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            a: 5,
            epochs: 20,
            p_sil: 0.25,
            sweeps: 4,
            bert_sampling: true,
            length_guiding: true,
            threads: 1,
        }
    }
}

/// Sentences (as word lists) joined through silence insertion until
/// `target` ids are available, then cut to `target`.
fn corpus_start<R: Rng>(
    corpus: &[Vec<Vec<usize>>],
    sil: Option<usize>,
    p_sil: f64,
    target: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    let draw = |rng: &mut R| {
        let words = &corpus[rng.random_range(0..corpus.len())];
        match sil {
            Some(s) => silence_insert(words, s, p_sil, rng),
            None => words.concat(),
        }
    };
    let mut seq = draw(rng);
    let Some(target) = target else { return seq };
    while seq.len() < target {
        // a sentence boundary is also a word boundary
        if let Some(s) = sil {
            if rng.random::<f64>() < p_sil {
                seq.push(s);
            }
        }
        seq.extend(draw(rng));
    }
    seq.truncate(target);
    seq
}

/// Provisions `a * epochs` references for each utterance in `utterances`.
///
/// Each chain starts from silence-inserted corpus text cut to the
/// utterance's length target and is then refined by Gibbs sweeps.
pub fn build_ref_pool<R: Rng>(
    lm: &MaskedLm,
    corpus: &[Vec<Vec<usize>>],
    utterances: &[String],
    targets: &BTreeMap<String, usize>,
    cfg: &PoolConfig,
    rng: &mut R,
) -> Result<RefPool> {
    if cfg.a == 0 || cfg.epochs == 0 {
        return Err(Error::Config(
            "reference pool needs a >= 1 and E >= 1".into(),
        ));
    }
    if corpus.is_empty() || corpus.iter().any(|s| s.concat().is_empty()) {
        return input_err("text corpus is empty or has empty sentences");
    }
    if corpus.iter().flatten().flatten().any(|&i| i >= lm.n_out()) {
        return input_err("text corpus uses ids outside the language model vocabulary");
    }
    let mut jobs = Vec::with_capacity(utterances.len());
    for id in utterances {
        match targets.get(id) {
            Some(&0) => return input_err(format!("zero length target for '{id}'")),
            Some(&t) => jobs.push((id.clone(), t)),
            None => return input_err(format!("missing length target for '{id}'")),
        }
    }
    let base: u64 = rng.random();
    let work = |id: &str, target: usize| -> Result<Vec<RefEntry>> {
        let mut rng = stream(base, &format!("refpool/{id}"));
        let n = cfg.a * cfg.epochs;
        let guided = cfg.length_guiding.then_some(target);
        let starts: Vec<Vec<usize>> = (0..n)
            .map(|_| corpus_start(corpus, lm.sil(), cfg.p_sil, guided, &mut rng))
            .collect();
        if cfg.bert_sampling {
            gibbs(lm, starts, cfg.sweeps.max(1), &mut rng)
        } else {
            Ok(starts
                .into_iter()
                .map(|s| RefEntry::one_hot(s, lm.n_out()))
                .collect())
        }
    };

    let threads = cfg.threads.max(1).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<Vec<RefEntry>>>> = (0..jobs.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, (id, t)) in results.iter_mut().zip(&jobs) {
            *slot = Some(work(id, *t));
        }
    } else {
        let chunk = jobs.len().div_ceil(threads);
        std::thread::scope(|s| {
            for (slots, js) in results.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
                let work = &work;
                s.spawn(move || {
                    for (slot, (id, t)) in slots.iter_mut().zip(js) {
                        *slot = Some(work(id, *t));
                    }
                });
            }
        });
    }
    let mut entries = BTreeMap::new();
    for ((id, _), r) in jobs.into_iter().zip(results) {
        entries.insert(id, r.expect("every job ran")?);
    }
    Ok(RefPool { entries })
}
