use rand::Rng;

/// Joins words, inserting `sil` at each word boundary with probability `p_sil`.
pub fn silence_insert<R: Rng>(
    words: &[Vec<usize>],
    sil: usize,
    p_sil: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(words.iter().map(Vec::len).sum::<usize>() + words.len());
    for (i, w) in words.iter().enumerate() {
        if i > 0 && rng.random::<f64>() < p_sil {
            out.push(sil);
        }
        out.extend_from_slice(w);
    }
    out
}
