use dgu_core::adversarial::{
    loss_discriminator, loss_generator, DiscSample, GanNets, GenSample, LossWeights, NetConfig,
};
use dgu_core::diffusion::{estimate_rd, make_schedule, DiffusionConfig};
use dgu_core::numerics::{softmax_rows, Array2, Tape};
use dgu_core::phoneme_lm::{nll_score, sample_with_length, LmShape, MaskedLm};
use dgu_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2 {
    let mut rng = stream(seed, "prop/matrix");
    let data = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Array2::from_vec(rows, cols, data).unwrap()
}

fn schedule_cfg(beta_0: f64, beta_t: f64, t_max: usize) -> DiffusionConfig {
    DiffusionConfig {
        beta_0,
        beta_t,
        t_min: 1,
        t_max,
        ..DiffusionConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_table_matches_its_definition(
        beta_0 in 1e-5f64..1e-3,
        span in 1e-3f64..0.2,
        t_max in 2usize..200,
    ) {
        let s = make_schedule(&schedule_cfg(beta_0, beta_0 + span, t_max)).unwrap();
        let mut ab = 1.0;
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=t_max {
            let beta = beta_0 + span * (t - 1) as f64 / (t_max - 1) as f64;
            ab *= 1.0 - beta;
            prop_assert!((s.alpha_bar(t) - ab).abs() <= 1e-12);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            if t > 1 {
                prop_assert!(s.beta(t) > s.beta(t - 1));
            }
        }
    }

    #[test]
    fn controller_is_monotone_under_a_persistent_signal(
        above in prop::collection::vec(0.61f64..=1.0, 1..20),
        c_step in 0.1f64..5.0,
    ) {
        let mut s = make_schedule(&DiffusionConfig { c_step, ..DiffusionConfig::default() }).unwrap();
        let mut last = s.horizon();
        let mut updates = 0;
        while s.horizon() < s.t_max() {
            s.update_t(above[updates % above.len()]);
            prop_assert!(s.horizon() >= last && s.horizon() >= s.t_min());
            last = s.horizon();
            updates += 1;
            prop_assert!(updates <= 2000);
        }
        for _ in 0..2000 {
            s.update_t(above[0] - 0.7);
            prop_assert!(s.horizon() <= last);
            last = s.horizon();
        }
        prop_assert_eq!(s.horizon(), s.t_min());
    }

    #[test]
    fn rd_is_bounded_by_one(outputs in prop::collection::vec(0.0f64..1.0, 1..50)) {
        let r = estimate_rd(&outputs).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn diffusion_is_deterministic_and_shape_preserving(
        rows in 1usize..6, cols in 1usize..6, t in 0usize..=100, seed in any::<u64>(),
    ) {
        let mut s = make_schedule(&DiffusionConfig::default()).unwrap();
        s.set_t_live(100.0);
        let x = matrix(rows, cols, seed, 1.0);
        let a = s.diffuse(&x, t, &mut stream(seed, "d")).unwrap();
        let b = s.diffuse(&x, t, &mut stream(seed, "d")).unwrap();
        prop_assert_eq!(a.shape(), x.shape());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loss_terms_stay_finite_for_any_weights(
        scale in 0.0f64..50.0,
        eta in 0.0f64..100.0,
        gamma in 0.0f64..100.0,
        lambda in 0.0f64..100.0,
        seed in 0u64..1000,
    ) {
        let mut nets = GanNets::init(
            &NetConfig {
                d_in: 3,
                v_out: 4,
                use_unet: seed % 2 == 0,
                unet_widths: [4, 4, 3, 2],
                disc_hidden: [3, 3],
                t_max: 10,
                independent_disc: false,
            },
            &mut stream(seed, "prop/nets"),
        )
        .unwrap();
        for (i, name) in nets.disc.params.names().map(str::to_string).collect::<Vec<_>>().iter().enumerate() {
            let v = nets.disc.params.value(name).unwrap();
            let big = matrix(v.rows(), v.cols(), seed + i as u64, scale);
            nets.disc.params.set_value(name, big).unwrap();
        }
        let mut sched = make_schedule(&DiffusionConfig { t_max: 10, t_min: 1, ..DiffusionConfig::default() }).unwrap();
        sched.set_t_live(10.0);
        let w = LossWeights { eta, gamma, lambda };
        let seg = matrix(5, 3, seed, 10.0);
        let reference = softmax_rows(&matrix(4, 4, seed + 7, 5.0));
        let mut tape = Tape::new();
        let b = nets.bind(&mut tape, true, false);
        let g = loss_generator(&mut tape, &nets, &b, &[GenSample { segments: &seg, t: 3 }], &sched, &w, &mut stream(seed, "n")).unwrap();
        prop_assert!(g.terms.all_finite() && tape.scalar(g.loss).is_finite());
        let mut tape = Tape::new();
        let b = nets.bind(&mut tape, false, true);
        let d = loss_discriminator(
            &mut tape, &nets, &b,
            &[DiscSample { segments: &seg, reference: &reference, t: 0 }],
            &sched, &w, &mut stream(seed, "n"),
        ).unwrap();
        prop_assert!(d.terms.all_finite() && tape.scalar(d.loss).is_finite());
    }
}

fn small_lm(seed: u64) -> MaskedLm {
    let shape = LmShape {
        width: 8,
        heads: 2,
        blocks: 1,
        ff_mult: 2,
    };
    MaskedLm::init(5, Some(4), shape, &mut stream(seed, "prop/lm")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_references_have_the_requested_length(
        target in 1usize..30, sweeps in 1usize..3, seed in 0u64..50,
    ) {
        let lm = small_lm(seed);
        let (ids, dense) = sample_with_length(&lm, target, sweeps, &mut stream(seed, "prop/s")).unwrap();
        prop_assert_eq!(ids.len(), target);
        prop_assert_eq!(dense.rows(), target);
        for row in dense.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nll_is_deterministic(ids in prop::collection::vec(0usize..5, 1..15), seed in 0u64..50) {
        let lm = small_lm(seed);
        prop_assert_eq!(nll_score(&lm, &ids).unwrap().to_bits(), nll_score(&lm, &ids).unwrap().to_bits());
    }

    #[test]
    fn variance_is_preserved_in_expectation(t in 1usize..=100, seed in 0u64..1000) {
        let mut s = make_schedule(&DiffusionConfig::default()).unwrap();
        s.set_t_live(100.0);
        let x = matrix(3, 4, seed, 2.0);
        let ab = s.alpha_bar(t);
        let x_sq: f64 = x.data().iter().map(|v| v * v).sum();
        let expected = ab * x_sq + (1.0 - ab) * x.len() as f64;
        let n = 2000;
        let mut rng = stream(seed, "prop/var");
        let mean: f64 = (0..n)
            .map(|_| s.diffuse(&x, t, &mut rng).unwrap().data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>() / n as f64;
        // ||y||^2 - E has variance 4 ab (1 - ab) ||x||^2 + 2 (1 - ab)^2 numel
        let sd = ((4.0 * ab * (1.0 - ab) * x_sq + 2.0 * (1.0 - ab).powi(2) * x.len() as f64) / n as f64).sqrt();
        prop_assert!((mean - expected).abs() <= 5.0 * sd + 1e-12, "mean {} expected {} sd {}", mean, expected, sd);
    }
}
