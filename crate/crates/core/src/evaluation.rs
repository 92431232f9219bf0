//! Greedy decoding and phoneme error rate against hidden transcripts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{input_err, Result};
use crate::numerics::Array2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedUtterance {
    pub id: String,
    pub phonemes: Vec<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Collapses adjacent repeats, then drops `sil`.
pub fn collapse_ids(ids: &[usize], sil: Option<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(ids.len());
    let mut prev = None;
    for &id in ids {
        if prev != Some(id) {
            prev = Some(id);
            if Some(id) != sil {
                out.push(id);
            }
        }
    }
    out
}

/// Per-row argmax (ties to the lowest id), collapse repeats, delete SIL.
pub fn decode(id: &str, output: &Array2, sil: Option<usize>) -> DecodedUtterance {
    let ids: Vec<usize> = output.iter_rows().map(argmax).collect();
    DecodedUtterance {
        id: id.to_string(),
        phonemes: collapse_ids(&ids, sil),
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Per-utterance scoring row.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub distance: usize,
    pub ref_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerReport {
    pub rows: Vec<UtteranceScore>,
    pub per: f64,
}

impl PerReport {
    /// CSV with per-utterance rows and a final `TOTAL` summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,distance,ref_len,per\n");
        for r in &self.rows {
            let per = if r.ref_len > 0 {
                r.distance as f64 / r.ref_len as f64
            } else {
                0.0
            };
            let _ = writeln!(s, "{},{},{},{:.6}", r.id, r.distance, r.ref_len, per);
        }
        let d: usize = self.rows.iter().map(|r| r.distance).sum();
        let n: usize = self.rows.iter().map(|r| r.ref_len).sum();
        let _ = writeln!(s, "TOTAL,{d},{n},{:.6}", self.per);
        s
    }
}

/// `sum(edit_distance) / sum(ref_len)` over hypotheses aligned to references by id.
/// A reference without a hypothesis scores against the empty sequence.
pub fn per(hyps: &[DecodedUtterance], refs: &BTreeMap<String, Vec<usize>>) -> Result<PerReport> {
    let by_id: BTreeMap<&str, &DecodedUtterance> =
        hyps.iter().map(|h| (h.id.as_str(), h)).collect();
    if let Some(h) = hyps.iter().find(|h| !refs.contains_key(&h.id)) {
        return input_err(format!("hypothesis '{}' has no reference", h.id));
    }
    let empty = Vec::new();
    let mut rows = Vec::with_capacity(refs.len());
    for (id, r) in refs {
        let h = by_id.get(id.as_str()).map_or(&empty, |h| &h.phonemes);
        rows.push(UtteranceScore {
            id: id.clone(),
            distance: edit_distance(h, r),
            ref_len: r.len(),
        });
    }
    let total_ref: usize = rows.iter().map(|r| r.ref_len).sum();
    if total_ref == 0 {
        return input_err("references have zero total length");
    }
    let total_dist: usize = rows.iter().map(|r| r.distance).sum();
    Ok(PerReport {
        rows,
        per: total_dist as f64 / total_ref as f64,
    })
}

/// Monte-Carlo PER of decoding rows whose argmax is uniform over `n_out`
/// symbols; `cases` pairs each output length with its reference.
pub fn random_decode_baseline<R: Rng>(
    cases: &[(usize, Vec<usize>)],
    n_out: usize,
    sil: Option<usize>,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let total_ref: usize = cases.iter().map(|(_, r)| r.len()).sum();
    if total_ref == 0 || trials == 0 || n_out == 0 {
        return input_err("random baseline needs references, trials and symbols");
    }
    let mut dist = 0usize;
    for _ in 0..trials {
        for (len, reference) in cases {
            let ids: Vec<usize> = (0..*len).map(|_| rng.random_range(0..n_out)).collect();
            dist += edit_distance(&collapse_ids(&ids, sil), reference);
        }
    }
    Ok(dist as f64 / (total_ref * trials) as f64)
}
