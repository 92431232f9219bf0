//! Frame synthesis, clustering, compression and segment pooling.

pub mod kmeans;
pub mod pca;
pub mod pooling;
pub mod synth;

pub use kmeans::{kmeans_fit, KMeansModel};
pub use pca::{pca_apply, pca_fit, PcaModel};
pub use pooling::{adjacent_pool, pooled_len, segment_merge};
pub use synth::{synth_features, PhonemeEmbeddings, SynthConfig, Utterance};

use crate::error::Result;
use crate::numerics::Array2;

/// Generator input for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSequence {
    pub source_id: String,
    /// Rows after the second (adjacent) pooling.
    pub segments: Array2,
    /// Segment count after merging, before adjacent pooling.
    pub n_merged: usize,
}

impl SegmentSequence {
    pub fn len(&self) -> usize {
        self.segments.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.rows() == 0
    }
}

/// Frame clustering and compression fitted on the training frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePipeline {
    pub kmeans: KMeansModel,
    pub pca: PcaModel,
}

impl FeaturePipeline {
    /// cluster ids -> PCA -> merge runs -> adjacent pooling.
    pub fn segments(&self, utt: &Utterance) -> Result<SegmentSequence> {
        let ids = self.kmeans.assign(&utt.frames);
        let reduced = pca_apply(&self.pca, &utt.frames)?;
        let merged = segment_merge(&reduced, &ids)?;
        let n_merged = merged.rows();
        Ok(SegmentSequence {
            source_id: utt.id.clone(),
            segments: adjacent_pool(&merged),
            n_merged,
        })
    }
}

/// Stacks the frames of many utterances for fitting.
pub fn stack_frames<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Result<Array2> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for u in utts {
        cols = u.frames.cols();
        rows += u.frames.rows();
        data.extend_from_slice(u.frames.data());
    }
    Array2::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn pipeline_is_deterministic_and_tracks_phoneme_runs() {
        let build = || {
            let mut rng = stream(5, "emb");
            let table = PhonemeEmbeddings::random(5, 8, &mut rng);
            let cfg = SynthConfig {
                d_raw: 8,
                dur_min: 2,
                dur_max: 4,
                noise_sd: 0.05,
            };
            let utts: Vec<Utterance> = (0..6)
                .map(|i| {
                    let ph: Vec<usize> = (0..6).map(|j| (i + j * 2) % 5).collect();
                    synth_features(&format!("u{i}"), &ph, &table, &cfg, &mut rng).unwrap()
                })
                .collect();
            let frames = stack_frames(&utts).unwrap();
            let kmeans = kmeans_fit(&frames, 5, 50, &mut stream(5, "km")).unwrap();
            let pca = pca_fit(&frames, 4).unwrap();
            let pipe = FeaturePipeline { kmeans, pca };
            utts.iter()
                .map(|u| pipe.segments(u).unwrap())
                .collect::<Vec<_>>()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.n_merged, 6);
            assert_eq!(s.len(), 11);
        }
    }
}
