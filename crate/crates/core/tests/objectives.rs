use gctx_numerics::{Graph, Rng, Tensor};
use gctx_unet::objectives::*;
use gctx_unet::Error;
use proptest::prelude::*;

mod common;
use common::*;

fn seed29_case() -> (Tensor<f64>, LabelMask) {
    let mut rng = Rng::new(29);
    let logits = Tensor::<f64>::randn(&[1, 2, 2, 2], 1.0, &mut rng);
    let target = LabelMask::new(&[1, 2, 2], (0..4).map(|_| rng.below(2) as u8).collect()).unwrap();
    (logits, target)
}

fn eval_loss(logits: &Tensor<f64>, target: &LabelMask, which: &str, w: LossWeights) -> f64 {
    let g = Graph::<f64>::inference();
    let x = g.constant(logits.clone());
    let v = match which {
        "dice" => dice_loss(&x, target, DEFAULT_SMOOTH),
        "ce" => ce_loss(&x, target),
        _ => combined_loss(&x, target, &w),
    };
    v.unwrap().value().item()
}

// Frozen from the scalar oracles above on the seed-29 case.
const SEED29_DICE: f64 = 0.40298288909036639;
const SEED29_CE: f64 = 0.74341535402105741;

#[test]
fn seed29_losses_match_scalar_oracle() {
    let (logits, target) = seed29_case();
    let d_oracle = oracle_dice(logits.data(), target.data(), 1, 2, 4, DEFAULT_SMOOTH);
    let c_oracle = oracle_ce(logits.data(), target.data(), 1, 2, 4);
    println!("oracle dice {d_oracle:.17} ce {c_oracle:.17}");
    assert!((d_oracle - SEED29_DICE).abs() < 1e-12);
    assert!((c_oracle - SEED29_CE).abs() < 1e-12);
    let d = eval_loss(&logits, &target, "dice", LossWeights::default());
    let c = eval_loss(&logits, &target, "ce", LossWeights::default());
    assert!((d - d_oracle).abs() < 1e-6, "{d} vs {d_oracle}");
    assert!((c - c_oracle).abs() < 1e-6, "{c} vs {c_oracle}");
    let mix = eval_loss(&logits, &target, "mix", LossWeights::new(0.7, 0.3).unwrap());
    assert!((mix - (0.7 * d_oracle + 0.3 * c_oracle)).abs() < 1e-9);
}

#[test]
fn random_batches_match_scalar_oracle() {
    let mut rng = Rng::new(5);
    for (b, k, h, w) in [(2, 3, 4, 5), (1, 9, 3, 3), (3, 2, 2, 6)] {
        let logits = Tensor::<f64>::randn(&[b, k, h, w], 2.0, &mut rng);
        let target = LabelMask::new(&[b, h, w], (0..b * h * w).map(|_| rng.below(k) as u8).collect()).unwrap();
        let d = eval_loss(&logits, &target, "dice", LossWeights::default());
        let c = eval_loss(&logits, &target, "ce", LossWeights::default());
        assert!((d - oracle_dice(logits.data(), target.data(), b, k, h * w, DEFAULT_SMOOTH)).abs() < 1e-6);
        assert!((c - oracle_ce(logits.data(), target.data(), b, k, h * w)).abs() < 1e-6);
    }
}

#[test]
fn analytic_loss_values() {
    let target = LabelMask::new(&[1, 2, 2], vec![0, 1, 1, 0]).unwrap();
    let uniform = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
    assert!((eval_loss(&uniform, &target, "dice", LossWeights::default()) - 0.5).abs() < 1e-5);

    let t4 = LabelMask::new(&[1, 2, 2], vec![0, 1, 2, 3]).unwrap();
    let u4 = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
    assert!((eval_loss(&u4, &t4, "ce", LossWeights::default()) - 4f64.ln()).abs() < 1e-12);

    // +20 margin on the correct class
    let peaked = Tensor::from_fn(&[1, 4, 2, 2], |i| if i / 4 == i % 4 { 20.0 } else { 0.0 });
    assert!(eval_loss(&peaked, &t4, "ce", LossWeights::default()) < 1e-6);
    assert!(eval_loss(&peaked, &t4, "dice", LossWeights::default()) < 0.01);
}

#[test]
fn extreme_weights_select_one_term_exactly() {
    let (logits, target) = seed29_case();
    let d = eval_loss(&logits, &target, "dice", LossWeights::default());
    let c = eval_loss(&logits, &target, "ce", LossWeights::default());
    assert_eq!(eval_loss(&logits, &target, "mix", LossWeights::new(1.0, 0.0).unwrap()), d);
    assert_eq!(eval_loss(&logits, &target, "mix", LossWeights::new(0.0, 1.0).unwrap()), c);
}

#[test]
fn combined_is_linear_in_weights() {
    let (logits, target) = seed29_case();
    let d = eval_loss(&logits, &target, "dice", LossWeights::default());
    let c = eval_loss(&logits, &target, "ce", LossWeights::default());
    for wd in [0.2, 0.5, 0.9] {
        let v = eval_loss(&logits, &target, "mix", LossWeights::new(wd, 1.0 - wd).unwrap());
        assert!((v - (wd * d + (1.0 - wd) * c)).abs() < 1e-12);
    }
}

#[test]
fn bad_weights_and_labels_are_rejected() {
    assert!(matches!(LossWeights::new(0.6, 0.6), Err(Error::Config(_))));
    let g = Graph::<f64>::inference();
    let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    let bad = LabelMask::new(&[1, 2, 2], vec![0, 1, 2, 0]).unwrap();
    assert!(matches!(ce_loss(&x, &bad), Err(Error::Data(_))));
    let wrong = LabelMask::new(&[1, 3, 2], vec![0; 6]).unwrap();
    assert!(matches!(dice_loss(&x, &wrong, 1e-5), Err(Error::Numerics(_))));
}

#[test]
fn losses_pass_gradcheck() {
    use gctx_numerics::{gradcheck, GradcheckOptions};
    let mut rng = Rng::new(3);
    let logits = Tensor::<f64>::randn(&[2, 3, 3, 3], 1.0, &mut rng);
    let target = LabelMask::new(&[2, 3, 3], (0..18).map(|_| rng.below(3) as u8).collect()).unwrap();
    let w = LossWeights::default();
    let inputs = [("logits".to_string(), logits)];
    for which in ["dice", "ce", "mix"] {
        let report = gradcheck(
            |_, xs| {
                Ok(match which {
                    "dice" => dice_loss(&xs[0], &target, DEFAULT_SMOOTH),
                    "ce" => ce_loss(&xs[0], &target),
                    _ => combined_loss(&xs[0], &target, &w),
                }
                .map_err(|e| match e {
                    Error::Numerics(n) => n,
                    other => panic!("{other}"),
                })?)
            },
            &inputs,
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{which}: {report}");
    }
}

// Metrics

#[test]
fn hd95_fast_path_equals_brute_force_on_50_pairs() {
    let mut rng = Rng::new(31);
    let mut compared = 0;
    for _ in 0..50 {
        let (h, w) = (1 + rng.below(32), 1 + rng.below(32));
        let a = random_blobs(h, w, 3, &mut rng);
        let b = random_blobs(h, w, 3, &mut rng);
        let spacing = if rng.bernoulli(0.5) { [1.0, 1.0] } else { [rng.range(0.3, 3.0), rng.range(0.3, 3.0)] };
        for k in 1..3u8 {
            let fast = hd95(&a, &b, k, spacing).unwrap();
            let slow = brute_hd95(&a, &b, k, spacing);
            assert_eq!(fast.map(f64::to_bits), slow.map(f64::to_bits), "{h}x{w} class {k}: {fast:?} vs {slow:?}");
            compared += fast.is_some() as usize;
        }
    }
    assert!(compared > 40, "too few defined cases: {compared}");
}

// Frozen from the brute-force oracle on the seed-31 16×16 pair.
const SEED31_HD95: f64 = 6.70820393249936942;

#[test]
fn seed31_16x16_pair_matches_frozen_oracle() {
    let mut rng = Rng::new(31);
    let a = random_blobs(16, 16, 2, &mut rng);
    let b = random_blobs(16, 16, 2, &mut rng);
    let oracle = brute_hd95(&a, &b, 1, [1.0, 1.0]).unwrap();
    println!("oracle hd95 {oracle:.17}");
    assert_eq!(oracle, SEED31_HD95);
    assert_eq!(hd95(&a, &b, 1, [1.0, 1.0]).unwrap(), Some(oracle));
}

#[test]
fn hd95_examples() {
    let a = LabelMask::from_fn(8, 8, |y, x| ((y, x) == (0, 0)) as u8);
    let b = LabelMask::from_fn(8, 8, |y, x| ((y, x) == (3, 4)) as u8);
    assert_eq!(hd95(&a, &b, 1, [1.0, 1.0]).unwrap(), Some(5.0));
    assert_eq!(hd95(&a, &a, 1, [1.0, 1.0]).unwrap(), Some(0.0));
    let empty = LabelMask::zeros(8, 8);
    assert_eq!(hd95(&a, &empty, 1, [1.0, 1.0]).unwrap(), None);
    assert_eq!(hd95(&empty, &empty, 1, [1.0, 1.0]).unwrap(), None);
}

#[test]
fn dsc_examples() {
    let a = LabelMask::from_fn(4, 4, |y, x| (y < 2 && x < 2) as u8);
    assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
    let b = LabelMask::from_fn(4, 4, |y, x| (y >= 2 && x >= 2) as u8);
    assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
    // |P| = 4, |T| = 6, |P∩T| = 3
    let p = LabelMask::new(&[4, 4], [1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0].to_vec()).unwrap();
    let t = LabelMask::new(&[4, 4], [1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0].to_vec()).unwrap();
    assert!((dsc(&p, &t, 1).unwrap() - 0.6).abs() < 1e-15);
    let z = LabelMask::zeros(4, 4);
    assert_eq!(dsc(&z, &z, 1).unwrap(), 1.0);
    assert_eq!(dsc(&z, &t, 1).unwrap(), 0.0);
    assert!(dsc(&z, &LabelMask::zeros(3, 4), 1).is_err());
}

#[test]
fn evaluate_case_examples() {
    let mut rng = Rng::new(37);
    let target = random_blobs(20, 20, 3, &mut rng);
    let perfect = evaluate_case(&target, &target, 3, Some([1.0, 1.0])).unwrap();
    for c in &perfect.classes {
        assert_eq!(c.dsc, 1.0);
        let present = target.data().contains(&c.class);
        assert_eq!(c.hd95, present.then_some(0.0));
    }

    let bg = LabelMask::zeros(20, 20);
    let r = evaluate_case(&bg, &target, 3, Some([1.0, 1.0])).unwrap();
    for c in &r.classes {
        if target.data().contains(&c.class) {
            assert_eq!(c.dsc, 0.0);
            assert_eq!(c.hd95, None);
        }
    }

    // Aggregates equal componentwise oracle values.
    let pred = random_blobs(20, 20, 3, &mut rng);
    let r = evaluate_case(&pred, &target, 3, Some([1.0, 2.0])).unwrap();
    let d: Vec<f64> = (1..3).map(|k| dsc(&pred, &target, k).unwrap()).collect();
    let h: Vec<Option<f64>> = (1..3).map(|k| brute_hd95(&pred, &target, k, [1.0, 2.0])).collect();
    assert_eq!(r.classes.iter().map(|c| c.dsc).collect::<Vec<_>>(), d);
    assert_eq!(r.classes.iter().map(|c| c.hd95).collect::<Vec<_>>(), h);
    assert_eq!(r.mean_dsc, (d[0] + d[1]) / 2.0);
    let defined: Vec<f64> = h.iter().flatten().copied().collect();
    assert_eq!(r.mean_hd95, (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64));
}

#[test]
fn report_table_has_fixed_columns() {
    let t = LabelMask::from_fn(6, 6, |y, _| (y % 3) as u8);
    let case = evaluate_case(&t, &t, 3, Some([1.0, 1.0])).unwrap();
    let rep = MetricReport::aggregate(&[case.clone(), case], true).unwrap();
    let table = rep.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "class        dsc_%      hd95  hd95_undef");
    assert!(lines[1].starts_with("1         100.0000    0.0000"));
    assert_eq!(lines.len(), 5);
}

fn mask_strategy() -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
        (proptest::collection::vec(0u8..3, h * w), proptest::collection::vec(0u8..3, h * w))
            .prop_map(move |(a, b)| (LabelMask::new(&[h, w], a).unwrap(), LabelMask::new(&[h, w], b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dsc_bounded_symmetric_reflexive((a, b) in mask_strategy(), k in 0u8..3) {
        let d = dsc(&a, &b, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dsc(&b, &a, k).unwrap());
        prop_assert_eq!(dsc(&a, &a, k).unwrap(), 1.0);
    }

    #[test]
    fn hd95_symmetric_zero_on_self_and_scales((a, b) in mask_strategy(), k in 1u8..3, s in 0.25f64..4.0) {
        let ab = hd95(&a, &b, k, [1.0, 1.0]).unwrap();
        prop_assert_eq!(ab, hd95(&b, &a, k, [1.0, 1.0]).unwrap());
        if a.data().contains(&k) {
            prop_assert_eq!(hd95(&a, &a, k, [1.0, 1.0]).unwrap(), Some(0.0));
        }
        if let Some(v) = ab {
            let doubled = hd95(&a, &b, k, [2.0, 2.0]).unwrap().unwrap();
            prop_assert_eq!(doubled, 2.0 * v);
            let scaled = hd95(&a, &b, k, [s, s]).unwrap().unwrap();
            prop_assert!((scaled - s * v).abs() <= 1e-12 * (1.0 + s * v));
            prop_assert_eq!(Some(v), brute_hd95(&a, &b, k, [1.0, 1.0]));
        }
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let logits = Tensor::<f64>::randn(&[1, 3, 3, 4], 3.0, &mut rng);
        let target = LabelMask::new(&[1, 3, 4], (0..12).map(|_| rng.below(3) as u8).collect()).unwrap();
        for which in ["dice", "ce", "mix"] {
            prop_assert!(eval_loss(&logits, &target, which, LossWeights::default()) >= 0.0);
        }
    }
}
