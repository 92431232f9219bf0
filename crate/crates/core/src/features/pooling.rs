use crate::error::{input_err, Result};
use crate::numerics::Array2;

/// Collapses maximal runs of equal cluster ids to the mean of their frames.
pub fn segment_merge(frames: &Array2, cluster_ids: &[usize]) -> Result<Array2> {
    if cluster_ids.len() != frames.rows() {
        return input_err(format!(
            "{} cluster ids for {} frames",
            cluster_ids.len(),
            frames.rows()
        ));
    }
    let d = frames.cols();
    let mut out = Vec::new();
    let mut start = 0;
    while start < cluster_ids.len() {
        let mut end = start + 1;
        while end < cluster_ids.len() && cluster_ids[end] == cluster_ids[start] {
            end += 1;
        }
        let mut mean = vec![0.0; d];
        for r in start..end {
            for (m, v) in mean.iter_mut().zip(frames.row(r)) {
                *m += v;
            }
        }
        let n = (end - start) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        out.push(mean);
        start = end;
    }
    if out.is_empty() {
        return Ok(Array2::zeros(0, d));
    }
    Array2::from_rows(&out)
}

/// Inserts the mean of every adjacent pair between them: `n -> 2n - 1` rows.
pub fn adjacent_pool(segments: &Array2) -> Array2 {
    let (n, d) = segments.shape();
    if n <= 1 {
        return segments.clone();
    }
    let mut out = Array2::zeros(2 * n - 1, d);
    for i in 0..n {
        out.row_mut(2 * i).copy_from_slice(segments.row(i));
        if i + 1 < n {
            let (a, b) = (segments.row(i), segments.row(i + 1));
            for ((o, x), y) in out.row_mut(2 * i + 1).iter_mut().zip(a).zip(b) {
                *o = (x + y) / 2.0;
            }
        }
    }
    out
}

/// Number of rows [`adjacent_pool`] produces from `n_seg` segments.
pub fn pooled_len(n_seg: usize) -> usize {
    if n_seg == 0 {
        0
    } else {
        2 * n_seg - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Array2 {
        Array2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn merge_examples() {
        let f = m(&[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 0.0]]);
        assert_eq!(
            segment_merge(&f, &[1, 1, 2]).unwrap(),
            m(&[&[2.0, 4.0], &[5.0, 0.0]])
        );
        assert_eq!(
            segment_merge(&f, &[4, 4, 4]).unwrap(),
            m(&[&[3.0, 8.0 / 3.0]])
        );
        assert_eq!(segment_merge(&f, &[1, 2, 1]).unwrap(), f);
        assert!(segment_merge(&f, &[1, 2]).is_err());
    }

    #[test]
    fn pool_examples() {
        let s1 = m(&[&[1.0, 2.0]]);
        assert_eq!(adjacent_pool(&s1), s1);
        let s2 = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(
            adjacent_pool(&s2),
            m(&[&[1.0, 2.0], &[2.0, 3.0], &[3.0, 4.0]])
        );
        let s5 = Array2::from_vec(5, 1, vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        let p = adjacent_pool(&s5);
        assert_eq!(p.rows(), 9);
        for i in 0..5 {
            assert_eq!(p.row(2 * i), s5.row(i));
        }
        assert_eq!(pooled_len(5), 9);
    }

    proptest! {
        #[test]
        fn merge_is_idempotent(ids in proptest::collection::vec(0usize..3, 1..30)) {
            let frames = Array2::from_vec(
                ids.len(), 2, (0..ids.len() * 2).map(|v| v as f64 * 0.5).collect()).unwrap();
            let merged = segment_merge(&frames, &ids).unwrap();
            let distinct: Vec<usize> = (0..merged.rows()).collect();
            prop_assert_eq!(segment_merge(&merged, &distinct).unwrap(), merged);
        }
    }
}
