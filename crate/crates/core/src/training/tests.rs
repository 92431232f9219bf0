use rand::Rng;

use super::*;
use crate::error::Error;
use crate::numerics::Array2;
use crate::phoneme_lm::{LmShape, RefEntry, RefPool};

const V: usize = 4;
const SIL: usize = 4;

struct Fixture {
    train: Vec<SegmentSequence>,
    heldout: Vec<SegmentSequence>,
    refs: RefPool,
    lm: MaskedLm,
    corpus: Vec<Vec<Vec<usize>>>,
}

impl Fixture {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            refs: &self.refs,
            heldout: &self.heldout,
            lm: &self.lm,
        }
    }
}

fn segments(prefix: &str, n: usize, rng: &mut crate::rng::Rng) -> Vec<SegmentSequence> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(3..=7);
            let data = (0..len * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            SegmentSequence {
                source_id: format!("{prefix}{i:03}"),
                segments: Array2::from_vec(len, 3, data).unwrap(),
                n_merged: len.div_ceil(2),
            }
        })
        .collect()
}

fn fixture(n: usize, entries: usize) -> Fixture {
    let mut rng = stream(3, "fixture");
    let train = segments("u", n, &mut rng);
    let heldout = segments("h", 3, &mut rng);
    let mut refs = RefPool::default();
    for s in &train {
        let list = (0..entries)
            .map(|_| {
                let ids = (0..s.len()).map(|_| rng.random_range(0..=V)).collect();
                RefEntry::one_hot(ids, V + 1)
            })
            .collect();
        refs.entries.insert(s.source_id.clone(), list);
    }
    let shape = LmShape {
        width: 8,
        heads: 2,
        blocks: 1,
        ff_mult: 2,
    };
    let lm = MaskedLm::init(V + 1, Some(SIL), shape, &mut rng).unwrap();
    let corpus = (0..20)
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..V)).collect())
                .collect()
        })
        .collect();
    Fixture {
        train,
        heldout,
        refs,
        lm,
        corpus,
    }
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        batch: 4,
        a: 2,
        epochs: 3,
        t_max: 10,
        unet_widths: [4, 4, 4, 4],
        disc_hidden: [4, 4],
        eval_every: 3,
        lr_gen: 1e-2,
        lr_disc: 1e-2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn fingerprints(t: &Trainer) -> (u64, u64) {
    (t.nets.gen.params.fingerprint(), t.nets.critic_fingerprint())
}

#[test]
fn zero_learning_rates_leave_parameters_unchanged() {
    let fx = fixture(8, 6);
    let cfg = TrainConfig {
        lr_gen: 0.0,
        lr_disc: 0.0,
        ..tiny_cfg()
    };
    let mut tr = Trainer::new(&cfg, 3, V + 1).unwrap();
    let before = fingerprints(&tr);
    tr.run(&fx.data()).unwrap();
    assert_eq!(fingerprints(&tr), before);
    let steps: Vec<&MetricRow> = tr.history().rows().iter().filter(|r| r.loss_g.is_some()).collect();
    assert_eq!(steps.len(), 12);
    assert!(steps.iter().all(|r| r.loss_d.unwrap() > 0.0 && r.l_gp.is_some()));
}

#[test]
fn controller_fires_every_a_i_steps_and_rows_add_up() {
    let fx = fixture(8, 6);
    let mut tr = Trainer::new(&tiny_cfg(), 3, V + 1).unwrap();
    tr.run(&fx.data()).unwrap();
    let h = tr.history();
    let events: Vec<usize> = h.rows().iter().filter(|r| r.is_controller_event()).map(|r| r.step).collect();
    assert_eq!(events, vec![4, 8, 12]);
    assert_eq!(tr.step(), 12);
    assert_eq!(h.len(), tr.step() + h.controller_events());
    assert!(h.rows().iter().all(MetricRow::all_finite));
    let csv = h.to_csv();
    assert_eq!(parse_metrics_csv(&csv).unwrap(), h.rows());
}

#[test]
fn identical_seeds_give_bit_identical_runs() {
    let fx = fixture(8, 6);
    let run = || {
        let mut tr = Trainer::new(&tiny_cfg(), 3, V + 1).unwrap();
        let s = &fx.train;
        let (r0, r1) = (&fx.refs.entries[&s[0].source_id][0].dense, &fx.refs.entries[&s[1].source_id][0].dense);
        let report = tr
            .train_step(&[vec![(&s[0].segments, r0), (&s[1].segments, r1)]], &[&s[2].segments, &s[3].segments])
            .unwrap();
        (report, fingerprints(&tr), tr.schedule.clone(), tr.history().clone())
    };
    assert_eq!(run(), run());
    let full = || {
        let mut tr = Trainer::new(&tiny_cfg(), 3, V + 1).unwrap();
        tr.run(&fx.data()).unwrap();
        (fingerprints(&tr), tr.history().to_csv())
    };
    assert_eq!(full(), full());
}

#[test]
fn each_sub_step_leaves_the_other_side_untouched() {
    let fx = fixture(8, 6);
    for use_unet in [true, false] {
        let cfg = TrainConfig { use_unet, ..tiny_cfg() };
        let mut tr = Trainer::new(&cfg, 3, V + 1).unwrap();
        let s = &fx.train;
        let r = &fx.refs.entries[&s[0].source_id][0].dense;
        let (g0, c0) = fingerprints(&tr);
        tr.disc_update(&[(&s[0].segments, r)]).unwrap();
        let (g1, c1) = fingerprints(&tr);
        assert_eq!(g1, g0);
        assert_ne!(c1, c0);
        tr.gen_update(&[&s[1].segments]).unwrap();
        let (g2, c2) = fingerprints(&tr);
        assert_eq!(c2, c1);
        assert_ne!(g2, g1);
    }
}

#[test]
fn pool_accounting_consumes_a_times_e_per_utterance() {
    let cfg = tiny_cfg();
    let fx = fixture(8, cfg.a * cfg.epochs);
    let out = train(&cfg, &fx.data()).unwrap();
    assert_eq!(out.consumed.len(), 8);
    assert!(out.consumed.values().all(|&c| c == cfg.a * cfg.epochs));

    let short = fixture(8, cfg.a * cfg.epochs - 1);
    let err = train(&cfg, &short.data()).unwrap_err();
    assert!(matches!(err, Error::Provisioning(_)), "{err}");
}

#[test]
fn frozen_controller_without_timestep_discriminators() {
    let fx = fixture(8, 6);
    let cfg = tiny_cfg().with_ablations(&[Ablation::NoTdisc]);
    let out = train(&cfg, &fx.data()).unwrap();
    assert_eq!(out.history.controller_events(), 0);
    assert!(out.history.rows().iter().all(|r| r.t_live == cfg.t_min as f64));
    assert!(!out.nets.disc.params.contains("disc.emb"));
}

#[test]
fn without_unet_the_discriminator_reads_phoneme_space() {
    let cfg = tiny_cfg().with_ablations(&[Ablation::NoUnet]);
    let tr = Trainer::new(&cfg, 3, V + 1).unwrap();
    assert_eq!(tr.nets.disc.w_in, V + 1);
    assert!(tr.nets.unet.is_none());
    let with = Trainer::new(&tiny_cfg(), 3, V + 1).unwrap();
    assert_eq!(with.nets.disc.w_in, 4);
}

#[test]
fn length_guiding_off_produces_mismatched_references() {
    let fx = fixture(12, 0);
    let cfg = TrainConfig { epochs: 1, a: 1, ..tiny_cfg() };
    let inputs = AblationInputs {
        train: &fx.train,
        heldout: &fx.heldout,
        lm: &fx.lm,
        corpus: &fx.corpus,
        sweeps: 1,
        threads: 1,
    };
    let guided = run_ablation(&cfg, &[], &inputs).unwrap();
    assert_eq!(guided.length_mismatches, 0);
    let free = run_ablation(&cfg, &[Ablation::NoLength], &inputs).unwrap();
    assert!(free.length_mismatches > 0);
}

#[test]
fn non_finite_parameters_abort_the_run() {
    let fx = fixture(8, 6);
    let mut tr = Trainer::new(&tiny_cfg(), 3, V + 1).unwrap();
    tr.nets.gen.params.value_mut("gen.b").unwrap().set(0, 1, f64::NAN);
    let err = tr.run(&fx.data()).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(tr.history().rows().iter().all(MetricRow::all_finite));
}

#[test]
fn run_records_checkpoints_and_selects_one() {
    let fx = fixture(8, 6);
    let out = train(&tiny_cfg(), &fx.data()).unwrap();
    let steps: Vec<usize> = out.checkpoints.iter().map(|c| c.eval.step).collect();
    assert_eq!(steps, vec![3, 6, 9, 12]);
    assert!(steps.contains(&out.selection.step));
    let annotated = out.history.rows().iter().filter(|r| r.vocab_usage.is_some()).count();
    assert_eq!(annotated, 4);
}
