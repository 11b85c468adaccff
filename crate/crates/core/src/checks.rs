//! Finite-difference gradient checks of blocks and of the whole network,
//! run in 64-bit against registry parameters.

use gctx_numerics::{GradcheckOptions, GradcheckReport, Rng, Tensor};

use crate::error::Result;
use crate::model::{GCtxUNet, ModelConfig};
use crate::nnblocks::*;

/// Replaces every parameter with N(0, std²) draws so that zero-initialised
/// biases and unit norm scales do not hide gradient paths.
pub fn randomize_params(store: &mut ParamStore<f32>, rng: &mut Rng, std: f64) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::randn(&shape, std, rng))?;
    }
    Ok(())
}

fn block_input(shape: &[usize], rng: &mut Rng) -> Vec<(String, Tensor<f64>)> {
    vec![("x".into(), Tensor::randn(shape, 1.0, rng))]
}

/// Gradchecks every block type at width 8: Fused-MBConv, SE, local and
/// global GC-ViT blocks (through a two-block stage with its token
/// generator), the four upsamplers, downsampling and the stem.
pub fn block_gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<Vec<(String, GradcheckReport)>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mut check = |name: String,
                     store: &mut ParamStore<f32>,
                     rng: &mut Rng,
                     shape: &[usize],
                     f: &dyn for<'g> Fn(&Session<'g, f64>, &[gctx_numerics::Var<'g, f64>]) -> Result<gctx_numerics::Var<'g, f64>>|
     -> Result<()> {
        randomize_params(store, rng, 0.3)?;
        let inputs = block_input(shape, rng);
        out.push((name, gradcheck_with_params(&store.cast(), &inputs, f, opts)?));
        Ok(())
    };

    let mut store = ParamStore::new();
    let mb = FusedMbConv::new(&mut Init::new(&mut store, &mut rng), "mbconv", 8, Some(4))?;
    check("fused_mbconv".into(), &mut store, &mut rng, &[1, 8, 4, 4], &|s, v| mb.forward(s, &v[0]))?;

    let mut store = ParamStore::new();
    let se = SeBlock::new(&mut Init::new(&mut store, &mut rng), "se", 8, 4)?;
    check("se".into(), &mut store, &mut rng, &[2, 8, 3, 3], &|s, v| se.forward(s, &v[0]))?;

    let mut store = ParamStore::new();
    let blk = GcVitBlock::new(&mut Init::new(&mut store, &mut rng), "block", AttentionKind::Local, 8, 2, 2, 3.0)?;
    check("gcvit_block.local".into(), &mut store, &mut rng, &[1, 8, 4, 4], &|s, v| blk.forward(s, &v[0], None))?;

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
    let mut store = ParamStore::new();
    let stage = GcVitStage::new(&mut Init::new(&mut store, &mut rng), "stage", &spec)?;
    check("gcvit_stage.local+global".into(), &mut store, &mut rng, &[1, 8, 4, 4], &|s, v| stage.forward(s, &v[0]))?;

    for kind in UpsampleKind::ALL {
        let mut store = ParamStore::new();
        let up = Upsample::new(&mut Init::new(&mut store, &mut rng), "up", 8, kind, 4)?;
        check(format!("upsample.{kind}"), &mut store, &mut rng, &[1, 8, 2, 2], &|s, v| up.forward(s, &v[0]))?;
    }

    let mut store = ParamStore::new();
    let down = Downsample::new(&mut Init::new(&mut store, &mut rng), "down", 8, 4)?;
    check("downsample".into(), &mut store, &mut rng, &[1, 8, 4, 4], &|s, v| down.forward(s, &v[0]))?;

    let mut store = ParamStore::new();
    let stem = PatchEmbed::new(&mut Init::new(&mut store, &mut rng), "stem", 3, 8, 4)?;
    check("patch_embed".into(), &mut store, &mut rng, &[1, 3, 8, 8], &|s, v| stem.forward(s, &v[0]))?;

    Ok(out)
}

/// Gradchecks the full network built from `cfg` (cast to 64-bit) with
/// respect to the input image and every parameter tensor.
pub fn model_gradcheck(cfg: &ModelConfig, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let model = GCtxUNet::build(cfg)?.cast::<f64>();
    let mut rng = Rng::new(seed);
    let n = cfg.img_size;
    let inputs = block_input(&[1, cfg.in_channels, n, n], &mut rng);
    gradcheck_with_params(&model.params, &inputs, |s, v| model.forward(s, &v[0]), opts)
}
