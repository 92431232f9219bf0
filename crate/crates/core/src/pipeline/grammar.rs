use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};

/// Shape of the synthetic language.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrammarConfig {
    /// Phonemes excluding silence.
    pub n_phonemes: usize,
    /// Allowed successors per two-phoneme context.
    pub branching: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub word_len_min: usize,
    pub word_len_max: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            n_phonemes: 8,
            branching: 3,
            words_min: 2,
            words_max: 4,
            word_len_min: 2,
            word_len_max: 4,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_phonemes < 3 {
            return bad("need at least 3 phonemes besides silence");
        }
        if self.branching == 0 || self.branching >= self.n_phonemes {
            return bad("branching must be in 1..n_phonemes");
        }
        if self.words_min == 0 || self.words_min > self.words_max {
            return bad("need 1 <= words_min <= words_max");
        }
        if self.word_len_min == 0 || self.word_len_min > self.word_len_max {
            return bad("need 1 <= word_len_min <= word_len_max");
        }
        Ok(())
    }
}

/// Order-2 Markov phonotactics. Each context `(previous-but-one, previous)`
/// allows `branching` successors, never the previous phoneme itself, so
/// sentences contain no immediate repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    cfg: GrammarConfig,
    /// Indexed by `ctx(a, b)`; `n_phonemes` stands for the sentence start.
    table: Vec<Vec<(usize, f64)>>,
}

impl Grammar {
    pub fn random<R: Rng>(cfg: &GrammarConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.n_phonemes;
        let mut table = Vec::with_capacity((v + 1) * (v + 1));
        for _a in 0..=v {
            for b in 0..=v {
                let mut pool: Vec<usize> = (0..v).filter(|&p| p != b).collect();
                let mut next = Vec::with_capacity(cfg.branching);
                for _ in 0..cfg.branching {
                    let p = pool.swap_remove(rng.random_range(0..pool.len()));
                    next.push((p, 0.2 + rng.random::<f64>()));
                }
                let z: f64 = next.iter().map(|(_, w)| w).sum();
                next.iter_mut().for_each(|(_, w)| *w /= z);
                next.sort_by_key(|&(p, _)| p);
                table.push(next);
            }
        }
        Ok(Self { cfg: *cfg, table })
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.cfg
    }

    fn successors(&self, a: usize, b: usize) -> &[(usize, f64)] {
        &self.table[a * (self.cfg.n_phonemes + 1) + b]
    }

    /// One sentence as a list of words.
    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let start = self.cfg.n_phonemes;
        let (mut a, mut b) = (start, start);
        let n_words = rng.random_range(self.cfg.words_min..=self.cfg.words_max);
        (0..n_words)
            .map(|_| {
                let len = rng.random_range(self.cfg.word_len_min..=self.cfg.word_len_max);
                (0..len)
                    .map(|_| {
                        let mut u = rng.random::<f64>();
                        let succ = self.successors(a, b);
                        let mut pick = succ[succ.len() - 1].0;
                        for &(p, w) in succ {
                            if u < w {
                                pick = p;
                                break;
                            }
                            u -= w;
                        }
                        (a, b) = (b, pick);
                        pick
                    })
                    .collect()
            })
            .collect()
    }

    /// `n_audio` sentences for the audio side and `n_text` for the text side,
    /// with no phoneme string shared between the two sides.
    pub fn disjoint_sides<R: Rng>(
        &self,
        n_audio: usize,
        n_text: usize,
        rng: &mut R,
    ) -> Result<(Vec<Vec<Vec<usize>>>, Vec<Vec<Vec<usize>>>)> {
        let audio: Vec<Vec<Vec<usize>>> = (0..n_audio).map(|_| self.sentence(rng)).collect();
        let taken: BTreeSet<Vec<usize>> = audio.iter().map(|s| s.concat()).collect();
        let mut text = Vec::with_capacity(n_text);
        let mut attempts = 0usize;
        while text.len() < n_text {
            attempts += 1;
            if attempts > 100 * (n_text + 10) {
                return Err(Error::Config(format!(
                    "grammar too small to draw {n_text} text sentences disjoint from the audio side"
                )));
            }
            let s = self.sentence(rng);
            if !taken.contains(&s.concat()) {
                text.push(s);
            }
        }
        Ok((audio, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sentences_follow_the_table_and_never_repeat_a_phoneme() {
        let cfg = GrammarConfig::default();
        let g = Grammar::random(&cfg, &mut stream(1, "g")).unwrap();
        let mut rng = stream(2, "s");
        for _ in 0..500 {
            let s = g.sentence(&mut rng);
            assert!((cfg.words_min..=cfg.words_max).contains(&s.len()));
            let flat = s.concat();
            let start = cfg.n_phonemes;
            let mut ctx = (start, start);
            for &p in &flat {
                assert!(g.successors(ctx.0, ctx.1).iter().any(|&(q, _)| q == p));
                assert_ne!(p, ctx.1);
                ctx = (ctx.1, p);
            }
        }
    }

    #[test]
    fn audio_and_text_sides_are_disjoint() {
        let g = Grammar::random(&GrammarConfig::default(), &mut stream(1, "g")).unwrap();
        let (audio, text) = g.disjoint_sides(300, 1000, &mut stream(4, "d")).unwrap();
        assert_eq!((audio.len(), text.len()), (300, 1000));
        let a: BTreeSet<Vec<usize>> = audio.iter().map(|s| s.concat()).collect();
        assert!(text.iter().all(|s| !a.contains(&s.concat())));
    }

    #[test]
    fn tiny_grammars_are_rejected() {
        let cfg = GrammarConfig {
            n_phonemes: 2,
            ..GrammarConfig::default()
        };
        assert!(matches!(Grammar::random(&cfg, &mut stream(0, "g")), Err(Error::Config(_))));
        let one_word = GrammarConfig {
            n_phonemes: 3,
            branching: 1,
            words_min: 1,
            words_max: 1,
            word_len_min: 1,
            word_len_max: 1,
        };
        let g = Grammar::random(&one_word, &mut stream(0, "g")).unwrap();
        assert!(g.disjoint_sides(5, 5, &mut stream(0, "d")).is_err());
    }
}
