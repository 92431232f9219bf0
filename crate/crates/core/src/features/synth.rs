//! Synthetic frame features standing in for a frozen speech encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{input_err, Error, Result};
use crate::numerics::Array2;

/// Frame synthesis parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub d_raw: usize,
    pub dur_min: usize,
    pub dur_max: usize,
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d_raw: 32,
            dur_min: 2,
            dur_max: 5,
            noise_sd: 0.3,
        }
    }
}

/// Fixed per-dataset table mapping a phoneme id to its mean frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeEmbeddings {
    table: Array2,
}

impl PhonemeEmbeddings {
    pub fn random<R: Rng>(n_symbols: usize, d_raw: usize, rng: &mut R) -> Self {
        let data = (0..n_symbols * d_raw)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            table: Array2::from_vec(n_symbols, d_raw, data).expect("shape"),
        }
    }

    pub fn from_table(table: Array2) -> Self {
        Self { table }
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        self.table.row(id)
    }

    pub fn n_symbols(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }
}

/// An unlabeled utterance; `hidden_phonemes` is only read by evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub hidden_phonemes: Vec<usize>,
    pub frames: Array2,
}

/// Emits `dur ~ U[dur_min, dur_max]` noisy copies of each phoneme's embedding.
pub fn synth_features<R: Rng>(
    id: &str,
    phonemes: &[usize],
    table: &PhonemeEmbeddings,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Utterance> {
    if phonemes.is_empty() {
        return input_err(format!("utterance '{id}' has no phonemes"));
    }
    if cfg.dur_min == 0 || cfg.dur_min > cfg.dur_max {
        return Err(Error::Config(format!(
            "invalid duration range [{}, {}]",
            cfg.dur_min, cfg.dur_max
        )));
    }
    if table.dim() != cfg.d_raw {
        return Err(Error::Config(format!(
            "embedding width {} != d_raw {}",
            table.dim(),
            cfg.d_raw
        )));
    }
    if let Some(&bad) = phonemes.iter().find(|&&p| p >= table.n_symbols()) {
        return input_err(format!("phoneme id {bad} outside the inventory"));
    }
    let noise = if cfg.noise_sd > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for &p in phonemes {
        let dur = rng.random_range(cfg.dur_min..=cfg.dur_max);
        for _ in 0..dur {
            for &e in table.embedding(p) {
                data.push(match &noise {
                    Some(n) => e + n.sample(rng),
                    None => e,
                });
            }
            rows += 1;
        }
    }
    Ok(Utterance {
        id: id.to_string(),
        hidden_phonemes: phonemes.to_vec(),
        frames: Array2::from_vec(rows, cfg.d_raw, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn noiseless_fixed_duration_repeats_embedding() {
        let mut rng = stream(1, "t");
        let table = PhonemeEmbeddings::random(4, 6, &mut rng);
        let cfg = SynthConfig {
            d_raw: 6,
            dur_min: 3,
            dur_max: 3,
            noise_sd: 0.0,
        };
        let u = synth_features("u", &[2], &table, &cfg, &mut rng).unwrap();
        assert_eq!(u.frames.rows(), 3);
        for row in u.frames.iter_rows() {
            assert_eq!(row, table.embedding(2));
        }
    }

    #[test]
    fn frame_count_is_sum_of_durations() {
        let mut rng = stream(2, "t");
        let table = PhonemeEmbeddings::random(4, 3, &mut rng);
        let cfg = SynthConfig {
            d_raw: 3,
            dur_min: 1,
            dur_max: 6,
            noise_sd: 0.0,
        };
        let u = synth_features("u", &[0, 1], &table, &cfg, &mut rng).unwrap();
        // the run of identical rows at the start has length = first duration
        let first = u
            .frames
            .iter_rows()
            .take_while(|r| *r == table.embedding(0))
            .count();
        let second = u.frames.rows() - first;
        assert!((1..=6).contains(&first) && (1..=6).contains(&second));
        assert!(u
            .frames
            .iter_rows()
            .skip(first)
            .all(|r| r == table.embedding(1)));
    }

    #[test]
    fn noisy_frames_average_to_embedding() {
        let mut rng = stream(3, "t");
        let table = PhonemeEmbeddings::random(2, 4, &mut rng);
        let cfg = SynthConfig {
            d_raw: 4,
            dur_min: 1,
            dur_max: 1,
            noise_sd: 0.1,
        };
        let phonemes = vec![1; 10_000];
        let u = synth_features("u", &phonemes, &table, &cfg, &mut rng).unwrap();
        let mean = u.frames.mean_rows();
        let band = 3.0 * 0.1 / (10_000f64).sqrt();
        for (m, e) in mean.iter().zip(table.embedding(1)) {
            assert!((m - e).abs() < band, "{m} vs {e}");
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut rng = stream(4, "t");
        let table = PhonemeEmbeddings::random(2, 32, &mut rng);
        let err = synth_features("u", &[], &table, &SynthConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
