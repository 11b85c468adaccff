use gctx_numerics::{Rng, Tensor};
use gctx_unet::data::{generate_synthetic, Dataset};
use gctx_unet::model::{Checkpoint, GCtxUNet, ModelConfig};
use gctx_unet::nnblocks::ParamStore;
use gctx_unet::trainer::*;
use gctx_unet::Error;

mod common;
use common::scalar_adamw;

fn run_adamw(w0: f64, grad: impl Fn(f64) -> f64, steps: usize, hp: &AdamW) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("w", Tensor::new(&[1], vec![w0]).unwrap()).unwrap();
    let mut state = OptState::new(&store);
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = grad(store.get(id).data()[0]);
        adamw_step(&mut store, &[Tensor::new(&[1], vec![g]).unwrap()], &mut state, hp).unwrap();
        out.push(store.get(id).data()[0]);
    }
    assert_eq!(state.step, steps as u64);
    out
}

#[test]
fn adamw_matches_scalar_oracle_on_quadratics() {
    let cases = [
        (1.0, AdamW::default(), 5),
        (1.0, AdamW::default(), 10),
        (-3.0, AdamW { lr: 0.1, weight_decay: 0.05, ..AdamW::default() }, 10),
        (0.4, AdamW { lr: 0.02, weight_decay: 0.0, beta1: 0.5, beta2: 0.9, eps: 1e-6 }, 10),
    ];
    for (w0, hp, n) in cases {
        let grad = |w: f64| 2.0 * w;
        let got = run_adamw(w0, grad, n, &hp);
        let want = scalar_adamw(w0, grad, n, &hp);
        for (t, (a, b)) in got.iter().zip(&want).enumerate() {
            assert!((a - b).abs() < 1e-10, "step {}: {a} vs {b} ({hp:?})", t + 1);
        }
    }
}

#[test]
fn adamw_zero_gradient_without_decay_keeps_parameters() {
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    assert_eq!(run_adamw(0.7, |_| 0.0, 4, &hp), [0.7; 4]);
}

#[test]
fn adamw_first_step_is_minus_lr() {
    let hp = AdamW { weight_decay: 0.0, lr: 1e-3, ..AdamW::default() };
    let w = run_adamw(2.0, |_| 1.0, 1, &hp)[0];
    assert!((w - (2.0 - 1e-3)).abs() < 1e-10, "{w}");
}

#[test]
fn adamw_rejects_non_finite_gradients_without_touching_state() {
    let mut store = ParamStore::<f32>::new();
    store.insert("a", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let mut state = OptState::new(&store);
    let before = store.clone();
    let e = adamw_step(&mut store, &[Tensor::new(&[2], vec![0.5, f32::NAN]).unwrap()], &mut state, &AdamW::default());
    assert!(e.unwrap_err().is_numeric());
    assert!(store.bit_eq(&before));
    assert_eq!(state.step, 0);
}

#[test]
fn gradient_clipping_bounds_the_global_norm() {
    let mut g = vec![Tensor::new(&[2], vec![3.0f64, 0.0]).unwrap(), Tensor::new(&[1], vec![4.0]).unwrap()];
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
}

fn tiny_setup(seed: u64) -> (GCtxUNet<f32>, Dataset) {
    let cfg = ModelConfig { drop_path_rate: 0.1, ..ModelConfig::tiny(3) };
    (GCtxUNet::build(&cfg).unwrap(), generate_synthetic(4, 32, 3, &mut Rng::new(seed)).unwrap())
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        max_steps: Some(6),
        deterministic: true,
        ..TrainConfig::default()
    }
}

fn lines(out: &TrainOutcome) -> Vec<String> {
    out.log.iter().map(|r| r.to_string()).collect()
}

#[test]
fn same_seed_gives_identical_logs() {
    let run = || {
        let (m, d) = tiny_setup(0);
        let mut t = Trainer::new(m, quick_cfg()).unwrap();
        let out = t.fit(&d, None, |_, _| Ok(())).unwrap();
        (lines(&out), out.step_losses, t.model.params.checksum())
    };
    let a = run();
    assert_eq!(a.0.len(), 3);
    assert!(a.0[0].starts_with("epoch=0 step=2 loss="), "{}", a.0[0]);
    assert!(a.0[0].ends_with("wall_s=0.000"));
    assert_eq!(a, run());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let (m, d) = tiny_setup(1);
    let mut full = Trainer::new(m.clone(), quick_cfg()).unwrap();
    let whole = full.fit(&d, None, |_, _| Ok(())).unwrap();

    // stop mid-epoch so the partial loss sum must survive the checkpoint
    let mut first = Trainer::new(m, TrainConfig { max_steps: Some(3), ..quick_cfg() }).unwrap();
    let head = first.fit(&d, None, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.ckpt");
    first.checkpoint().save(&path).unwrap();
    let mut second = Trainer::resume(Checkpoint::load(&path).unwrap(), quick_cfg()).unwrap();
    assert_eq!(second.step, 3);
    let tail = second.fit(&d, None, |_, _| Ok(())).unwrap();

    assert_eq!([&head.step_losses[..], &tail.step_losses[..]].concat(), whole.step_losses);
    assert_eq!([lines(&head), lines(&tail)].concat(), lines(&whole));
    assert!(second.model.params.bit_eq(&full.model.params));
    assert!(second.opt.bit_eq(&full.opt));
    assert_eq!(second.best_dsc, full.best_dsc);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let (_, d) = tiny_setup(2);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: 4,
        shuffle: false,
        augment: false,
        max_steps: Some(4),
        ..quick_cfg()
    };
    let m = GCtxUNet::build(&ModelConfig::tiny(3)).unwrap();
    let before = m.params.clone();
    let mut t = Trainer::new(m, cfg).unwrap();
    let out = t.fit(&d, None, |_, _| Ok(())).unwrap();
    let l0 = out.step_losses[0];
    assert!(out.step_losses.iter().all(|&l| (l - l0).abs() <= 1e-6 * l0.abs()), "{:?}", out.step_losses);
    assert!(t.model.params.bit_eq(&before));
}

#[test]
fn divergence_aborts_and_leaves_parameters_untouched() {
    let (m, mut d) = tiny_setup(3);
    for s in &mut d.samples {
        s.image.data_mut()[0] = f32::NAN;
    }
    let before = m.params.clone();
    let mut t = Trainer::new(m, quick_cfg()).unwrap();
    let e = t.fit(&d, None, |_, _| Ok(())).unwrap_err();
    assert!(matches!(e, Error::Diverged { step: 0, .. }), "{e}");
    assert!(e.is_numeric());
    assert!(t.model.params.bit_eq(&before));
    assert_eq!(t.step, 0);
}

#[test]
fn evaluation_reads_only_and_repeats_exactly() {
    let (m, d) = tiny_setup(4);
    let before = m.params.checksum();
    let a = evaluate(&m, &d, true).unwrap();
    let b = evaluate(&m, &d, true).unwrap();
    assert_eq!(m.params.checksum(), before);
    assert_eq!(a.to_table(), b.to_table());
    assert!((0.0..=1.0).contains(&a.mean_dsc));

    let wrong = generate_synthetic(2, 32, 2, &mut Rng::new(0)).unwrap();
    assert!(matches!(evaluate(&m, &wrong, false), Err(Error::Data(_))));
}

#[test]
fn ground_truth_as_prediction_scores_full_dsc() {
    use gctx_unet::objectives::{evaluate_case, MetricReport};
    let (_, d) = tiny_setup(5);
    let cases: Vec<_> = d.samples.iter().map(|s| evaluate_case(&s.mask, &s.mask, 3, Some(s.spacing)).unwrap()).collect();
    let r = MetricReport::aggregate(&cases, true).unwrap();
    assert_eq!(r.mean_dsc, 1.0);
}

#[test]
fn patience_and_target_stop_the_run() {
    let (m, d) = tiny_setup(6);
    let cfg = TrainConfig { learning_rate: 0.0, patience: 2, max_steps: None, max_epochs: 50, ..quick_cfg() };
    let mut t = Trainer::new(m.clone(), cfg).unwrap();
    let out = t.fit(&d, None, |_, _| Ok(())).unwrap();
    assert_eq!(out.stop, StopReason::Patience);
    assert_eq!(out.log.len(), 3);

    let cfg = TrainConfig { stop_at_dsc: Some(0.0), max_steps: None, ..quick_cfg() };
    let mut t = Trainer::new(m, cfg).unwrap();
    let mut improved = 0;
    let out = t
        .fit(&d, None, |e, _| {
            if let TrainEvent::Improved { .. } = e {
                improved += 1;
            }
            Ok(())
        })
        .unwrap();
    assert_eq!(out.stop, StopReason::TargetDsc);
    assert_eq!((out.log.len(), improved), (1, 1));
    assert!(t.best_model().params.bit_eq(&t.model.params));
}

#[test]
fn run_config_lists_every_bad_key() {
    let text = "embed_dim = 16\nlearning_rate = fast\nbogus = 1\nbatch_size = 0\nwindow_sizes = 5,7,14,7\nother = 2\n";
    let Err(Error::Config(msgs)) = RunConfig::from_kv_text(text) else { panic!() };
    assert_eq!(msgs.len(), 3, "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("bogus")) && msgs.iter().any(|m| m.contains("other")));

    let cfg = RunConfig::from_kv_text("batch_size = 0\nwindow_sizes = 5,7,14,7\npatience = 0\n").unwrap();
    let Err(Error::Config(msgs)) = cfg.validate() else { panic!() };
    assert_eq!(msgs.len(), 3, "{msgs:?}");
}

#[test]
fn run_config_text_round_trip() {
    let mut cfg = RunConfig::default();
    cfg.apply([("cli".to_string(), "max_steps", "40"), ("cli".to_string(), "grad_clip", "1.5")]).unwrap();
    cfg.model = ModelConfig::test_scale(3);
    assert_eq!(RunConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
    assert_eq!(cfg.train.optimizer(), AdamW { lr: 1e-4, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
}
