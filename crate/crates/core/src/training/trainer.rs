use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::checkpoint::{evaluate_generator, select_checkpoint, Checkpoint, CheckpointEval, Selection};
use super::config::TrainConfig;
use super::metrics::{MetricHistory, MetricRow};
use crate::adversarial::{
    loss_discriminator, loss_generator, DiscSample, GanLossTerms, GanNets, GenSample,
};
use crate::diffusion::{estimate_rd, make_schedule, DiffusionSchedule};
use crate::error::{input_err, Error, Result};
use crate::features::SegmentSequence;
use crate::numerics::{Array2, Tape};
use crate::phoneme_lm::{MaskedLm, RefEntry, RefPool};
use crate::rng::{stream, Rng};

/// Inputs of one adversarial run.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [SegmentSequence],
    pub refs: &'a RefPool,
    /// Unlabeled utterances decoded at checkpoints.
    pub heldout: &'a [SegmentSequence],
    pub lm: &'a MaskedLm,
}

/// Loss terms of one step and the controller decision, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub disc: GanLossTerms,
    pub gen: GanLossTerms,
    /// `(r_d, T_live after the update)` when the controller fired.
    pub controller: Option<(f64, f64)>,
}

/// Everything a finished run hands back.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub nets: GanNets,
    pub history: MetricHistory,
    pub checkpoints: Vec<Checkpoint>,
    pub selection: Selection,
    pub consumed: BTreeMap<String, usize>,
    pub length_mismatches: usize,
}

/// Owns all mutable state of a run.
pub struct Trainer {
    cfg: TrainConfig,
    pub nets: GanNets,
    pub schedule: DiffusionSchedule,
    step: usize,
    epoch: usize,
    history: MetricHistory,
    checkpoints: Vec<Checkpoint>,
    consumed: BTreeMap<String, usize>,
    /// Discriminator outputs on diffused references since the last controller event.
    pending_real: Vec<f64>,
    gen_queue: Vec<usize>,
    length_mismatches: usize,
    rng_order: Rng,
    rng_gen_order: Rng,
    rng_t: Rng,
    rng_noise: Rng,
}

impl Trainer {
    /// Fresh networks for `d_in`-wide segments and `v_out` output symbols.
    pub fn new(cfg: &TrainConfig, d_in: usize, v_out: usize) -> Result<Self> {
        cfg.validate()?;
        let nets = GanNets::init(&cfg.net_config(d_in, v_out), &mut stream(cfg.seed, "train/init"))?;
        Self::with_nets(cfg, nets)
    }

    pub fn with_nets(cfg: &TrainConfig, nets: GanNets) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        Ok(Self {
            cfg: cfg.clone(),
            nets,
            schedule: make_schedule(&cfg.diffusion_config())?,
            step: 0,
            epoch: 0,
            history: MetricHistory::default(),
            checkpoints: Vec::new(),
            consumed: BTreeMap::new(),
            pending_real: Vec::new(),
            gen_queue: Vec::new(),
            length_mismatches: 0,
            rng_order: stream(seed, "train/batching"),
            rng_gen_order: stream(seed, "train/gen-batching"),
            rng_t: stream(seed, "train/timesteps"),
            rng_noise: stream(seed, "train/diffusion"),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &MetricHistory {
        &self.history
    }

    pub fn consumed(&self) -> &BTreeMap<String, usize> {
        &self.consumed
    }

    pub fn length_mismatches(&self) -> usize {
        self.length_mismatches
    }

    fn timesteps(&mut self, n: usize) -> Vec<usize> {
        if self.cfg.t_discriminators {
            self.schedule.sample_t(n, &mut self.rng_t)
        } else {
            vec![0; n]
        }
    }

    /// One critic update on `(segments, reference)` pairs; the generator is frozen.
    pub fn disc_update(&mut self, items: &[(&Array2, &Array2)]) -> Result<GanLossTerms> {
        let ts = self.timesteps(items.len());
        let batch: Vec<DiscSample> = items
            .iter()
            .zip(&ts)
            .map(|(&(segments, reference), &t)| DiscSample {
                segments,
                reference,
                t,
            })
            .collect();
        self.length_mismatches += items
            .iter()
            .filter(|(s, r)| s.rows() != r.rows())
            .count();
        let mut tape = Tape::new();
        let b = self.nets.bind(&mut tape, false, true);
        let g = loss_discriminator(
            &mut tape,
            &self.nets,
            &b,
            &batch,
            &self.schedule,
            &self.cfg.weights,
            &mut self.rng_noise,
        )?;
        if !g.terms.all_finite() {
            return Err(Error::NonFinite(format!(
                "discriminator loss at step {}: {:?}",
                self.step + 1,
                g.terms
            )));
        }
        let adam = self.cfg.adam_disc();
        match (&mut self.nets.unet, &b.unet) {
            (Some(u), Some(ub)) => {
                tape.backward_multi(
                    g.loss,
                    &mut [(&b.disc, &mut self.nets.disc.params), (ub, &mut u.params)],
                )?;
                u.params.adam_step(&adam);
            }
            _ => tape.backward(g.loss, &b.disc, &mut self.nets.disc.params)?,
        }
        self.nets.disc.params.adam_step(&adam);
        self.pending_real.extend(g.real_outputs);
        Ok(g.terms)
    }

    /// One generator update; the critic side is frozen.
    pub fn gen_update(&mut self, items: &[&Array2]) -> Result<GanLossTerms> {
        let ts = self.timesteps(items.len());
        let batch: Vec<GenSample> = items
            .iter()
            .zip(&ts)
            .map(|(&segments, &t)| GenSample { segments, t })
            .collect();
        let mut tape = Tape::new();
        let b = self.nets.bind(&mut tape, true, false);
        let g = loss_generator(
            &mut tape,
            &self.nets,
            &b,
            &batch,
            &self.schedule,
            &self.cfg.weights,
            &mut self.rng_noise,
        )?;
        if !g.terms.all_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {}: {:?}",
                self.step + 1,
                g.terms
            )));
        }
        tape.backward(g.loss, &b.gen, &mut self.nets.gen.params)?;
        self.nets.gen.params.adam_step(&self.cfg.adam_gen());
        Ok(g.terms)
    }

    /// Discriminator update(s) followed by one generator update on a
    /// different batch, then the controller when the interval is reached.
    pub fn train_step(
        &mut self,
        disc_batches: &[Vec<(&Array2, &Array2)>],
        gen_batch: &[&Array2],
    ) -> Result<StepReport> {
        if disc_batches.is_empty() || disc_batches.iter().any(Vec::is_empty) || gen_batch.is_empty() {
            return input_err("a training step needs non-empty batches");
        }
        let mut disc = GanLossTerms::default();
        for batch in disc_batches {
            disc = self.disc_update(batch)?;
        }
        let gen = self.gen_update(gen_batch)?;
        if !(self.nets.gen.params.all_finite()
            && self.nets.disc.params.all_finite()
            && self.nets.unet.as_ref().is_none_or(|u| u.params.all_finite()))
        {
            return Err(Error::NonFinite(format!(
                "parameters after step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        self.history.push(MetricRow {
            step: self.step,
            epoch: self.epoch,
            loss_g: Some(gen.generator_total()),
            loss_d: Some(disc.discriminator_total()),
            l_pd: Some(gen.l_pd),
            l_sp: Some(gen.l_sp),
            l_gp: Some(disc.l_gp),
            t_live: self.schedule.t_live(),
            ..MetricRow::default()
        })?;
        let mut controller = None;
        if self.cfg.t_discriminators && self.step.is_multiple_of(self.cfg.a_i) {
            let outputs = std::mem::take(&mut self.pending_real);
            let r_d = self.controller_event(&outputs)?;
            controller = Some((r_d, self.schedule.t_live()));
        }
        Ok(StepReport {
            step: self.step,
            disc,
            gen,
            controller,
        })
    }

    /// Adjusts the horizon from discriminator outputs `C(y, t)` on diffused
    /// references. References carry label 0, so realness is `1 - C`.
    pub fn controller_event(&mut self, real_outputs: &[f64]) -> Result<f64> {
        let realness: Vec<f64> = real_outputs.iter().map(|c| 1.0 - c).collect();
        let r_d = estimate_rd(&realness)?;
        self.schedule.update_t(r_d);
        self.history.push(MetricRow {
            step: self.step,
            epoch: self.epoch,
            r_d: Some(r_d),
            t_live: self.schedule.t_live(),
            ..MetricRow::default()
        })?;
        Ok(r_d)
    }

    fn next_gen_index(&mut self, n: usize) -> usize {
        if self.gen_queue.is_empty() {
            self.gen_queue = (0..n).collect();
            self.gen_queue.shuffle(&mut self.rng_gen_order);
        }
        self.gen_queue.pop().expect("refilled")
    }

    /// Evaluates the current generator on the held-out batch and records it.
    pub fn checkpoint(&mut self, data: &TrainData<'_>) -> Result<CheckpointEval> {
        let eval = evaluate_generator(&self.nets.gen, data.lm, data.heldout, self.step)?;
        self.history.annotate_last_step(eval.lm_nll, eval.vocab_usage)?;
        self.checkpoints.push(Checkpoint {
            eval: eval.clone(),
            gen: self.nets.gen.params.clone(),
        });
        Ok(eval)
    }

    /// `E` epochs. Each epoch walks `a` shuffled passes over the training
    /// utterances on the discriminator side, taking the next unused pool
    /// entry of every visited utterance.
    pub fn run(&mut self, data: &TrainData<'_>) -> Result<()> {
        let n = data.train.len();
        if n == 0 {
            return input_err("no training utterances");
        }
        let per_step = self.cfg.batch * self.cfg.d_steps;
        for epoch in 0..self.cfg.epochs {
            self.epoch = epoch;
            let mut order = Vec::with_capacity(n * self.cfg.a);
            for _ in 0..self.cfg.a {
                let mut pass: Vec<usize> = (0..n).collect();
                pass.shuffle(&mut self.rng_order);
                order.extend(pass);
            }
            for chunk in order.chunks(per_step) {
                let mut disc_batches = Vec::new();
                for part in chunk.chunks(self.cfg.batch) {
                    let mut items = Vec::with_capacity(part.len());
                    for &i in part {
                        let s = &data.train[i];
                        let entry = take_ref(&mut self.consumed, data.refs, &s.source_id)?;
                        items.push((&s.segments, &entry.dense));
                    }
                    disc_batches.push(items);
                }
                let gen_batch: Vec<&Array2> = (0..self.cfg.batch)
                    .map(|_| &data.train[self.next_gen_index(n)].segments)
                    .collect();
                self.train_step(&disc_batches, &gen_batch)?;
                if self.step.is_multiple_of(self.cfg.eval_every) {
                    self.checkpoint(data)?;
                }
            }
        }
        if self.checkpoints.last().is_none_or(|c| c.eval.step != self.step) {
            self.checkpoint(data)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let evals: Vec<CheckpointEval> = self.checkpoints.iter().map(|c| c.eval.clone()).collect();
        let selection = select_checkpoint(&evals, self.cfg.usage_floor)?;
        Ok(TrainOutcome {
            nets: self.nets,
            history: self.history,
            checkpoints: self.checkpoints,
            selection,
            consumed: self.consumed,
            length_mismatches: self.length_mismatches,
        })
    }
}

fn take_ref<'a>(
    consumed: &mut BTreeMap<String, usize>,
    refs: &'a RefPool,
    id: &str,
) -> Result<&'a RefEntry> {
    let entries = refs
        .get(id)
        .ok_or_else(|| Error::Provisioning(format!("no reference entries for '{id}'")))?;
    let used = consumed.entry(id.to_string()).or_insert(0);
    let entry = entries.get(*used).ok_or_else(|| {
        Error::Provisioning(format!(
            "reference pool for '{id}' exhausted after {} entries; provision a * E per utterance",
            entries.len()
        ))
    })?;
    *used += 1;
    Ok(entry)
}

/// Builds a trainer, runs it over `data` and selects a checkpoint.
pub fn train(cfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::Input("no training utterances".into()))?;
    let mut trainer = Trainer::new(cfg, first.segments.cols(), data.lm.n_out())?;
    trainer.run(data)?;
    trainer.finish()
}
