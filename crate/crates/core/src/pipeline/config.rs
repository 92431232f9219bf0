use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::grammar::GrammarConfig;
use crate::error::{Error, Result};
use crate::features::SynthConfig;
use crate::phoneme_lm::MlmConfig;
use crate::training::TrainConfig;

/// Full configuration of a pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub grammar: GrammarConfig,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    pub n_text: usize,
    /// Silence probability at word boundaries of the audio side.
    pub audio_p_sil: f64,
    pub synth: SynthConfig,
    pub k: usize,
    pub kmeans_iters: usize,
    pub d_pca: usize,
    pub lm: MlmConfig,
    pub sweeps: usize,
    pub baseline_trials: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            grammar: GrammarConfig::default(),
            n_train: 200,
            n_dev: 50,
            n_eval: 50,
            n_text: 1000,
            audio_p_sil: 0.25,
            synth: SynthConfig::default(),
            k: 16,
            kmeans_iters: 50,
            d_pca: 16,
            lm: MlmConfig::default(),
            sweeps: 4,
            baseline_trials: 200,
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

fn parse_list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated counts, got '{v}'")))?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated counts, got '{v}'")))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join<const N: usize>(v: [usize; N]) -> String {
    v.map(|x| x.to_string()).join(",")
}

impl RunConfig {
    /// Sets one `key = value` pair; unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                t.seed = self.seed;
            }
            "n_phonemes" => self.grammar.n_phonemes = parse_num(key, v)?,
            "branching" => self.grammar.branching = parse_num(key, v)?,
            "words_min" => self.grammar.words_min = parse_num(key, v)?,
            "words_max" => self.grammar.words_max = parse_num(key, v)?,
            "word_len_min" => self.grammar.word_len_min = parse_num(key, v)?,
            "word_len_max" => self.grammar.word_len_max = parse_num(key, v)?,
            "n_train" => self.n_train = parse_num(key, v)?,
            "n_dev" => self.n_dev = parse_num(key, v)?,
            "n_eval" => self.n_eval = parse_num(key, v)?,
            "n_text" => self.n_text = parse_num(key, v)?,
            "audio_p_sil" => self.audio_p_sil = parse_num(key, v)?,
            "d_raw" => self.synth.d_raw = parse_num(key, v)?,
            "dur_min" => self.synth.dur_min = parse_num(key, v)?,
            "dur_max" => self.synth.dur_max = parse_num(key, v)?,
            "noise_sd" => self.synth.noise_sd = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse_num(key, v)?,
            "d_pca" => self.d_pca = parse_num(key, v)?,
            "lm_width" => self.lm.shape.width = parse_num(key, v)?,
            "lm_heads" => self.lm.shape.heads = parse_num(key, v)?,
            "lm_blocks" => self.lm.shape.blocks = parse_num(key, v)?,
            "lm_ff_mult" => self.lm.shape.ff_mult = parse_num(key, v)?,
            "lm_mask_frac" => self.lm.mask_frac = parse_num(key, v)?,
            "lm_steps" => self.lm.steps = parse_num(key, v)?,
            "lm_batch" => self.lm.batch = parse_num(key, v)?,
            "lm_lr" => self.lm.lr = parse_num(key, v)?,
            "sweeps" => self.sweeps = parse_num(key, v)?,
            "baseline_trials" => self.baseline_trials = parse_num(key, v)?,
            "eta" => t.weights.eta = parse_num(key, v)?,
            "gamma" => t.weights.gamma = parse_num(key, v)?,
            "lambda" => t.weights.lambda = parse_num(key, v)?,
            "batch" => t.batch = parse_num(key, v)?,
            "a_i" => t.a_i = parse_num(key, v)?,
            "a_k" => t.a_k = parse_num(key, v)?,
            "d_target" => t.d_target = parse_num(key, v)?,
            "beta_0" => t.beta_0 = parse_num(key, v)?,
            "beta_t" => t.beta_t = parse_num(key, v)?,
            "t_min" => t.t_min = parse_num(key, v)?,
            "t_max" => t.t_max = parse_num(key, v)?,
            "p_sil" => t.p_sil = parse_num(key, v)?,
            "a" => t.a = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "bert_sampling" => t.bert_sampling = parse_bool(key, v)?,
            "length_guiding" => t.length_guiding = parse_bool(key, v)?,
            "t_discriminators" => t.t_discriminators = parse_bool(key, v)?,
            "use_unet" => t.use_unet = parse_bool(key, v)?,
            "independent_disc" => t.independent_disc = parse_bool(key, v)?,
            "unet_widths" => t.unet_widths = parse_list(key, v)?,
            "disc_hidden" => t.disc_hidden = parse_list(key, v)?,
            "lr_gen" => t.lr_gen = parse_num(key, v)?,
            "lr_disc" => t.lr_disc = parse_num(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse_num(key, v)?,
            "d_steps" => t.d_steps = parse_num(key, v)?,
            "eval_every" => t.eval_every = parse_num(key, v)?,
            "usage_floor" => t.usage_floor = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values. `#` starts a
    /// comment; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_train == 0 || self.n_dev == 0 || self.n_eval == 0 || self.n_text == 0 {
            return bad("every split and the text corpus need at least one sentence".into());
        }
        if !(0.0..=1.0).contains(&self.audio_p_sil) {
            return bad(format!("audio_p_sil = {} outside [0, 1]", self.audio_p_sil));
        }
        let s = &self.synth;
        if s.d_raw == 0 || s.dur_min == 0 || s.dur_min > s.dur_max || !(s.noise_sd >= 0.0) {
            return bad("need d_raw >= 1, 1 <= dur_min <= dur_max, noise_sd >= 0".into());
        }
        if self.k == 0 || self.d_pca == 0 || self.d_pca > s.d_raw {
            return bad(format!("need k >= 1 and 1 <= d_pca ({}) <= d_raw ({})", self.d_pca, s.d_raw));
        }
        let lm = &self.lm;
        if lm.shape.width == 0 || lm.shape.heads == 0 || !lm.shape.width.is_multiple_of(lm.shape.heads) {
            return bad("lm_width must be a positive multiple of lm_heads".into());
        }
        if !(lm.mask_frac > 0.0 && lm.mask_frac < 1.0) || lm.steps == 0 || lm.batch == 0 {
            return bad("need 0 < lm_mask_frac < 1, lm_steps >= 1, lm_batch >= 1".into());
        }
        if self.sweeps == 0 || self.baseline_trials == 0 {
            return bad("sweeps and baseline_trials must be >= 1".into());
        }
        self.train.validate()
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &self.grammar;
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("n_phonemes", g.n_phonemes.to_string()),
            ("branching", g.branching.to_string()),
            ("words_min", g.words_min.to_string()),
            ("words_max", g.words_max.to_string()),
            ("word_len_min", g.word_len_min.to_string()),
            ("word_len_max", g.word_len_max.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_dev", self.n_dev.to_string()),
            ("n_eval", self.n_eval.to_string()),
            ("n_text", self.n_text.to_string()),
            ("audio_p_sil", self.audio_p_sil.to_string()),
            ("d_raw", self.synth.d_raw.to_string()),
            ("dur_min", self.synth.dur_min.to_string()),
            ("dur_max", self.synth.dur_max.to_string()),
            ("noise_sd", self.synth.noise_sd.to_string()),
            ("k", self.k.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("d_pca", self.d_pca.to_string()),
            ("lm_width", self.lm.shape.width.to_string()),
            ("lm_heads", self.lm.shape.heads.to_string()),
            ("lm_blocks", self.lm.shape.blocks.to_string()),
            ("lm_ff_mult", self.lm.shape.ff_mult.to_string()),
            ("lm_mask_frac", self.lm.mask_frac.to_string()),
            ("lm_steps", self.lm.steps.to_string()),
            ("lm_batch", self.lm.batch.to_string()),
            ("lm_lr", self.lm.lr.to_string()),
            ("sweeps", self.sweeps.to_string()),
            ("baseline_trials", self.baseline_trials.to_string()),
            ("eta", t.weights.eta.to_string()),
            ("gamma", t.weights.gamma.to_string()),
            ("lambda", t.weights.lambda.to_string()),
            ("batch", t.batch.to_string()),
            ("a_i", t.a_i.to_string()),
            ("a_k", t.a_k.to_string()),
            ("d_target", t.d_target.to_string()),
            ("beta_0", t.beta_0.to_string()),
            ("beta_t", t.beta_t.to_string()),
            ("t_min", t.t_min.to_string()),
            ("t_max", t.t_max.to_string()),
            ("p_sil", t.p_sil.to_string()),
            ("a", t.a.to_string()),
            ("epochs", t.epochs.to_string()),
            ("bert_sampling", t.bert_sampling.to_string()),
            ("length_guiding", t.length_guiding.to_string()),
            ("t_discriminators", t.t_discriminators.to_string()),
            ("use_unet", t.use_unet.to_string()),
            ("independent_disc", t.independent_disc.to_string()),
            ("unet_widths", join(t.unet_widths)),
            ("disc_hidden", join(t.disc_hidden)),
            ("lr_gen", t.lr_gen.to_string()),
            ("lr_disc", t.lr_disc.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("d_steps", t.d_steps.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("usage_floor", t.usage_floor.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the seed of every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips_and_hash_tracks_changes() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("epochs = 3 # short\nunet_widths = 8,8,4,4\nuse_unet=false\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.unet_widths, [8, 8, 4, 4]);
        assert!(!cfg.train.use_unet);
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn unknown_duplicate_and_malformed_lines_are_rejected() {
        for text in [
            "epoch = 3",
            "epochs = 3\nepochs = 4",
            "epochs 3",
            "epochs = three",
            "unet_widths = 1,2",
            "use_unet = maybe",
            "batch = 0",
            "d_pca = 64",
        ] {
            let err = RunConfig::from_text(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }
}
