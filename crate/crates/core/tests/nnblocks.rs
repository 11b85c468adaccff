use std::cell::RefCell;
use std::rc::Rc;

use gctx_numerics::{GradcheckOptions, Graph, Rng, Tensor};
use gctx_unet::nnblocks::*;
use gctx_unet::Error;
use proptest::prelude::*;

mod common;
use common::*;

fn randomize(store: &mut ParamStore<f32>, seed: u64, std: f64) {
    let mut rng = Rng::new(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::randn(&shape, std, &mut rng)).unwrap();
    }
}

fn build<B>(seed: u64, f: impl FnOnce(&mut Init) -> gctx_unet::Result<B>) -> (B, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let block = f(&mut Init::new(&mut store, &mut rng)).unwrap();
    (block, store)
}

#[test]
fn fused_mbconv_matches_reference_oracle() {
    for se in [Some(2), None] {
        let (mb, mut store) = build(1, |i| FusedMbConv::new(i, "mb", 4, se));
        randomize(&mut store, 2, 0.5);
        let p = store.cast::<f64>();
        let x = Tensor::<f64>::randn(&[2, 4, 5, 6], 1.0, &mut Rng::new(3));
        let g = Graph::inference();
        let s = Session::frozen(&g, &p);
        let got = mb.forward(&s, &g.constant(x.clone())).unwrap();
        let want = mbconv_oracle(&x, &mb, &p);
        let err = got.value().max_abs_diff(&want);
        assert!(err < 1e-6, "se={se:?}: max diff {err}");
    }
}

#[test]
fn fused_mbconv_parameter_names() {
    let (_, store) = build(0, |i| FusedMbConv::new(i, "mb", 8, Some(4)));
    assert_eq!(
        store.names(),
        ["mb.dw.weight", "mb.se.fc1.weight", "mb.se.fc1.bias", "mb.se.fc2.weight", "mb.se.fc2.bias", "mb.pw.weight"]
    );
}

#[test]
fn linear_three_to_four_has_sixteen_parameters() {
    let (_, store) = build(0, |i| Linear::new(i, "fc", 3, 4, true));
    assert_eq!(store.num_scalars(), 16);
}

fn zero_residual_branches(blk: &GcVitBlock, store: &mut ParamStore<f32>) {
    for lin in [&blk.attn.proj, &blk.mlp.fc2] {
        let w = lin.weight;
        store.set(w, Tensor::zeros(store.get(w).shape())).unwrap();
        let b = lin.bias.unwrap();
        store.set(b, Tensor::zeros(store.get(b).shape())).unwrap();
    }
}

#[test]
fn zeroed_residual_projections_make_block_identity() {
    for kind in [AttentionKind::Local, AttentionKind::Global] {
        let (blk, mut store) = build(4, |i| GcVitBlock::new(i, "blk", kind, 8, 2, 2, 3.0));
        randomize(&mut store, 5, 0.3);
        zero_residual_branches(&blk, &mut store);
        let x = Tensor::<f32>::randn(&[2, 8, 4, 4], 1.0, &mut Rng::new(6));
        let q = Tensor::<f32>::randn(&[2, 2, 4, 4], 1.0, &mut Rng::new(7));
        let g = Graph::inference();
        let s = Session::frozen(&g, &store);
        let qv = g.constant(q);
        let y = blk.forward(&s, &g.constant(x.clone()), Some(&qv)).unwrap();
        assert!(y.value().bit_eq(&x), "{kind:?} block is not the identity");
    }
}

#[test]
fn global_block_requires_queries_and_local_ignores_them() {
    let (blk, store) = build(4, |i| GcVitBlock::new(i, "blk", AttentionKind::Global, 8, 2, 2, 3.0));
    let g = Graph::<f32>::inference();
    let s = Session::frozen(&g, &store);
    let x = g.constant(Tensor::zeros(&[1, 8, 4, 4]));
    assert!(matches!(blk.forward(&s, &x, None), Err(Error::Usage(_))));
}

#[test]
fn global_attention_shares_queries_across_windows() {
    // With K = V weights identical across windows and equal window contents,
    // every window of one image must produce the same output.
    let (attn, store) = build(8, |i| WindowAttention::new(i, "attn", AttentionKind::Global, 8, 2, 2));
    let g = Graph::<f64>::inference();
    let p = store.cast::<f64>();
    let s = Session::frozen(&g, &p);
    let win = Tensor::<f64>::randn(&[1, 4, 8], 1.0, &mut Rng::new(1));
    let x = Tensor::from_fn(&[3, 4, 8], |i| win.data()[i % 32]);
    let q = g.constant(Tensor::<f64>::randn(&[1, 2, 4, 4], 1.0, &mut Rng::new(2)));
    let y = attn.global_msa(&s, &g.constant(x), &q).unwrap();
    let d = y.value().data();
    assert_eq!(y.shape(), &[3, 4, 8]);
    assert_eq!(&d[..32], &d[32..64]);
    assert_eq!(&d[..32], &d[64..]);
}

#[test]
fn attention_maps_are_inspectable_and_normalised() {
    let (stage, store) = build(3, |i| {
        GcVitStage::new(
            i,
            "s",
            &StageSpec {
                dim: 8,
                depth: 2,
                heads: 2,
                window: 2,
                resolution: 4,
                mlp_ratio: 3.0,
                se_reduction: 4,
                drop: 0.0,
                drop_path: 0.0,
            },
        )
    });
    let seen = Rc::new(RefCell::new(Vec::new()));
    let g = Graph::<f32>::inference();
    let sink = seen.clone();
    g.set_inspector(move |tag, t| sink.borrow_mut().push((tag.to_string(), t.clone())));
    let s = Session::frozen(&g, &store);
    stage.forward(&s, &g.constant(Tensor::randn(&[1, 8, 4, 4], 1.0, &mut Rng::new(0)))).unwrap();
    let seen = seen.borrow();
    let tags: Vec<&str> = seen.iter().map(|(t, _)| t.as_str()).collect();
    assert_eq!(tags, ["attn.local", "attn.global"]);
    for (_, t) in seen.iter() {
        assert_eq!(t.shape(), &[4, 2, 4, 4]);
        for row in t.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn stage_blocks_alternate_starting_local() {
    let (stage, store) = build(0, |i| {
        GcVitStage::new(
            i,
            "enc",
            &StageSpec {
                dim: 16,
                depth: 4,
                heads: 2,
                window: 2,
                resolution: 8,
                mlp_ratio: 3.0,
                se_reduction: 4,
                drop: 0.0,
                drop_path: 0.0,
            },
        )
    });
    let kinds: Vec<_> = stage.blocks.iter().map(GcVitBlock::kind).collect();
    use AttentionKind::*;
    assert_eq!(kinds, [Local, Global, Local, Global]);
    assert_eq!(stage.gtg.steps.len(), 2);
    assert!(store.id_of("enc.blocks.0.attn.qkv.weight").is_some());
    assert!(store.id_of("enc.blocks.1.attn.kv.weight").is_some());
    assert_eq!(store.by_name("enc.blocks.0.attn.rel_pos").unwrap().shape(), &[9, 2]);
}

#[test]
fn token_generator_output_shape_and_reduction_count() {
    assert_eq!(gtg_reductions(56, 7).unwrap(), 3);
    assert_eq!(gtg_reductions(14, 14).unwrap(), 0);
    assert!(gtg_reductions(12, 4).is_err());
    let (gtg, store) = build(0, |i| GlobalTokenGenerator::new(i, "gtg", 16, 4, 2, 8, 4));
    let g = Graph::<f32>::inference();
    let s = Session::frozen(&g, &store);
    let q = gtg.forward(&s, &g.constant(Tensor::ones(&[3, 16, 8, 8]))).unwrap();
    assert_eq!(q.shape(), &[3, 4, 4, 4]);
}

#[test]
fn relative_position_index_map() {
    let idx = RelPosBias::index_map(2);
    // span 3: offset (dy,dx) maps to (dy+1)*3 + (dx+1)
    assert_eq!(idx.len(), 16);
    assert_eq!(idx[0], 4); // q = k
    assert_eq!(idx[1], 3); // q (0,0), k (0,1): dx = -1
    assert_eq!(idx[3], 0); // q (0,0), k (1,1)
    assert_eq!(idx[12], 8); // q (1,1), k (0,0)
    for w in 1..6 {
        let m = RelPosBias::index_map(w);
        let l = w * w;
        for q in 0..l {
            assert_eq!(m[q * l + q], (w - 1) * (2 * w - 1) + (w - 1));
        }
        assert!(m.iter().all(|&i| i < (2 * w - 1).pow(2)));
    }
}

#[test]
fn resampling_blocks_shapes() {
    let g = Graph::<f32>::inference();
    for kind in UpsampleKind::ALL {
        let (up, store) = build(0, |i| Upsample::new(i, "up", 16, kind, 4));
        let s = Session::frozen(&g, &store);
        let y = up.forward(&s, &g.constant(Tensor::randn(&[2, 16, 4, 4], 1.0, &mut Rng::new(1)))).unwrap();
        assert_eq!(y.shape(), &[2, 8, 8, 8], "{kind}");
        assert_eq!(kind.as_str().parse::<UpsampleKind>().unwrap(), kind);
    }
    let (down, store) = build(0, |i| Downsample::new(i, "down", 8, 4));
    let s = Session::frozen(&g, &store);
    assert_eq!(down.forward(&s, &g.constant(Tensor::zeros(&[1, 8, 8, 8]))).unwrap().shape(), &[1, 16, 4, 4]);
    assert!(down.forward(&s, &g.constant(Tensor::zeros(&[1, 8, 7, 8]))).is_err());
    let (stem, store) = build(0, |i| PatchEmbed::new(i, "stem", 3, 8, 4));
    let s = Session::frozen(&g, &store);
    assert_eq!(stem.forward(&s, &g.constant(Tensor::zeros(&[1, 3, 16, 16]))).unwrap().shape(), &[1, 8, 4, 4]);
}

#[test]
fn gcvit_stage_dim8_passes_gradcheck() {
    let spec = StageSpec {
        dim: 8,
        depth: 2,
        heads: 2,
        window: 2,
        resolution: 4,
        mlp_ratio: 3.0,
        se_reduction: 4,
        drop: 0.0,
        drop_path: 0.0,
    };
    let (stage, mut store) = build(11, |i| GcVitStage::new(i, "stage", &spec));
    randomize(&mut store, 12, 0.3);
    let x = Tensor::<f64>::randn(&[1, 8, 4, 4], 1.0, &mut Rng::new(13));
    let report = gradcheck_with_params(
        &store.cast(),
        &[("x".into(), x)],
        |s, v| stage.forward(s, &v[0]),
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report}");
    assert_eq!(report.inputs.len(), 1 + store.len());
}

#[test]
fn corrupted_adjoint_fails_block_gradcheck() {
    let (blk, store) = build(11, |i| GcVitBlock::new(i, "b", AttentionKind::Local, 8, 2, 2, 3.0));
    let x = Tensor::<f64>::randn(&[1, 8, 2, 2], 1.0, &mut Rng::new(13));
    let opts = GradcheckOptions { corrupt: Some("layer_norm".into()), ..Default::default() };
    let report =
        gradcheck_with_params(&store.cast(), &[("x".into(), x)], |s, v| blk.forward(s, &v[0], None), &opts).unwrap();
    assert!(!report.passed());
}

#[test]
fn param_store_rejects_duplicates_and_bad_shapes() {
    let mut store = ParamStore::<f32>::new();
    let id = store.insert("a", Tensor::zeros(&[2])).unwrap();
    assert!(store.insert("a", Tensor::zeros(&[2])).is_err());
    assert!(store.set(id, Tensor::zeros(&[3])).is_err());
    let before = store.checksum();
    store.set(id, Tensor::ones(&[2])).unwrap();
    assert_ne!(store.checksum(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn window_partition_round_trip_is_bit_exact(
        b in 1usize..3, nh in 1usize..4, nw in 1usize..4, w in 1usize..4, c in 1usize..5, seed in 0u64..100,
    ) {
        let (h, wd) = (nh * w, nw * w);
        let x = Tensor::<f32>::randn(&[b, c, h, wd], 1.0, &mut Rng::new(seed));
        let g = Graph::inference();
        let xv = g.constant(x.clone());
        let win = window_partition(&xv, w).unwrap();
        prop_assert_eq!(win.shape(), &[b * nh * nw, w * w, c][..]);
        let back = window_merge(&win, b, h, wd, w).unwrap();
        prop_assert!(back.value().bit_eq(&x));

        let t = xv.permute(&[0, 2, 3, 1]).unwrap();
        let tw = window_partition_tokens(&t, w).unwrap();
        prop_assert!(window_merge_tokens(&tw, b, h, wd, w).unwrap().value().bit_eq(t.value()));
        // window 0 holds the top-left w×w patch, row-major
        for p in 0..w * w {
            for ch in 0..c {
                prop_assert_eq!(tw.value().get(&[0, p, ch]), x.get(&[0, ch, p / w, p % w]));
            }
        }
    }
}
