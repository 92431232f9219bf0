use std::fmt;
use std::str::FromStr;

use crate::adversarial::{LossWeights, NetConfig};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::phoneme_lm::PoolConfig;

/// The four switchable components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    NoBert,
    NoLength,
    NoTdisc,
    NoUnet,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoBert,
        Ablation::NoLength,
        Ablation::NoTdisc,
        Ablation::NoUnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoBert => "no_bert",
            Ablation::NoLength => "no_length",
            Ablation::NoTdisc => "no_tdisc",
            Ablation::NoUnet => "no_unet",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation '{s}' (expected no_bert, no_length, no_tdisc or no_unet)"
                ))
            })
    }
}

/// Everything that shapes one adversarial training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch: usize,
    /// Controller interval in steps.
    pub a_i: usize,
    /// Controller divisor.
    pub a_k: usize,
    pub d_target: f64,
    pub beta_0: f64,
    pub beta_t: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub p_sil: f64,
    /// References per utterance per epoch.
    pub a: usize,
    pub epochs: usize,
    pub bert_sampling: bool,
    pub length_guiding: bool,
    pub t_discriminators: bool,
    pub use_unet: bool,
    /// One discriminator per timestep instead of a shared, embedded one.
    pub independent_disc: bool,
    pub unet_widths: [usize; 4],
    pub disc_hidden: [usize; 2],
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Steps between checkpoint evaluations; the final step is always evaluated.
    pub eval_every: usize,
    pub usage_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            batch: 16,
            a_i: 4,
            a_k: 100,
            d_target: 0.6,
            beta_0: 1e-4,
            beta_t: 1e-2,
            t_min: 5,
            t_max: 100,
            p_sil: 0.25,
            a: 5,
            epochs: 20,
            bert_sampling: true,
            length_guiding: true,
            t_discriminators: true,
            use_unet: true,
            independent_disc: false,
            unet_widths: [16, 16, 16, 16],
            disc_hidden: [16, 16],
            lr_gen: 5e-4,
            lr_disc: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.98,
            d_steps: 1,
            eval_every: 50,
            usage_floor: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch == 0 || self.a_i == 0 || self.a_k == 0 {
            return bad("batch, a_i and a_k must be >= 1".into());
        }
        if self.a == 0 || self.epochs == 0 || self.d_steps == 0 || self.eval_every == 0 {
            return bad("a, epochs, d_steps and eval_every must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_sil) {
            return bad(format!("p_sil = {} outside [0, 1]", self.p_sil));
        }
        if !(0.0..=1.0).contains(&self.usage_floor) {
            return bad(format!("usage_floor = {} outside [0, 1]", self.usage_floor));
        }
        if !(-1.0..=1.0).contains(&self.d_target) {
            return bad(format!("d_target = {} outside [-1, 1]", self.d_target));
        }
        for (name, v) in [("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1)"));
            }
        }
        if self.unet_widths.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("network widths must be >= 1".into());
        }
        // schedule bounds are checked by make_schedule
        crate::diffusion::make_schedule(&self.diffusion_config())?;
        Ok(())
    }

    /// Switches one component off.
    pub fn apply(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoBert => self.bert_sampling = false,
            Ablation::NoLength => self.length_guiding = false,
            Ablation::NoTdisc => self.t_discriminators = false,
            Ablation::NoUnet => self.use_unet = false,
        }
    }

    pub fn with_ablations(mut self, ablations: &[Ablation]) -> Self {
        for &a in ablations {
            self.apply(a);
        }
        self
    }

    /// Controller step `C = B * a_i / a_k`.
    pub fn c_step(&self) -> f64 {
        DiffusionConfig::c_step_from(self.batch, self.a_i, self.a_k)
    }

    pub fn diffusion_config(&self) -> DiffusionConfig {
        DiffusionConfig {
            beta_0: self.beta_0,
            beta_t: self.beta_t,
            t_min: self.t_min,
            t_max: self.t_max,
            d_target: self.d_target,
            c_step: self.c_step(),
        }
    }

    /// Shapes of the networks for `d_in`-wide segments and `v_out` phonemes.
    /// Without timestep discriminators only the undiffused table entry exists.
    pub fn net_config(&self, d_in: usize, v_out: usize) -> NetConfig {
        NetConfig {
            d_in,
            v_out,
            use_unet: self.use_unet,
            unet_widths: self.unet_widths,
            disc_hidden: self.disc_hidden,
            t_max: if self.t_discriminators { self.t_max } else { 0 },
            independent_disc: self.independent_disc,
        }
    }

    pub fn pool_config(&self, sweeps: usize, threads: usize) -> PoolConfig {
        PoolConfig {
            a: self.a,
            epochs: self.epochs,
            p_sil: self.p_sil,
            sweeps,
            bert_sampling: self.bert_sampling,
            length_guiding: self.length_guiding,
            threads,
        }
    }

    pub fn adam_gen(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_gen,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::new(self.lr_gen)
        }
    }

    pub fn adam_disc(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_disc,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::new(self.lr_disc)
        }
    }
}
