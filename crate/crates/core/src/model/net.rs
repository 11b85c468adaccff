use gctx_numerics::{Element, Graph, Rng, Tensor, Var};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nnblocks::{
    Conv2d, ConvTranspose2d, Downsample, GcVitStage, Init, LayerNorm, Linear, ParamStore, PatchEmbed, Session,
    StageSpec, Upsample,
};

/// Final expansion from S/4 to S and projection to class logits.
#[derive(Clone, Debug)]
pub struct SegHead {
    pub norm: LayerNorm,
    pub up1: ConvTranspose2d,
    pub up2: ConvTranspose2d,
    pub classify: Conv2d,
}

/// One decoder level: upsample, fuse the skip, then a GC-ViT stage.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: Upsample,
    pub fuse: Linear,
    pub stage: GcVitStage,
}

/// Parameter-free structure of the network; weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub stem: PatchEmbed,
    /// Encoder stages; the last one (S/32) is the bottleneck.
    pub encoder: Vec<GcVitStage>,
    pub downs: Vec<Downsample>,
    /// Decoder levels, deepest first.
    pub decoder: Vec<DecoderStage>,
    pub head: SegHead,
}

/// The assembled network with its parameters.
#[derive(Clone, Debug)]
pub struct GCtxUNet<T: Element = f32> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore<T>,
}

impl GCtxUNet<f32> {
    /// Builds and initialises the network from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        Self::build_with_rng(config, &mut Rng::new(config.seed))
    }

    pub fn build_with_rng(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = {
            let mut init = Init::new(&mut params, rng);
            build_layout(config, &mut init)?
        };
        Ok(Self { config: config.clone(), layout, params })
    }
}

fn stage_spec(cfg: &ModelConfig, level: usize, depth: usize) -> StageSpec {
    StageSpec {
        dim: cfg.dims()[level],
        depth,
        heads: cfg.heads[level],
        window: cfg.window_sizes[level],
        resolution: cfg.resolutions()[level],
        mlp_ratio: cfg.mlp_ratio,
        se_reduction: cfg.se_reduction,
        drop: cfg.drop_rate,
        drop_path: cfg.drop_path_rate,
    }
}

fn build_layout(cfg: &ModelConfig, init: &mut Init) -> Result<Layout> {
    let dims = cfg.dims();
    let c = cfg.embed_dim;
    let stem = PatchEmbed::new(init, "stem", cfg.in_channels, c, cfg.se_reduction)?;
    let mut encoder = Vec::new();
    let mut downs = Vec::new();
    for i in 0..4 {
        let mut s = init.scope(format!("encoder.{i}"));
        encoder.push(GcVitStage::new(&mut s, "stage", &stage_spec(cfg, i, cfg.depths[i]))?);
        if i < 3 {
            downs.push(Downsample::new(&mut s, "down", dims[i], cfg.se_reduction)?);
        }
    }
    let mut decoder = Vec::new();
    for (j, level) in (0..3).rev().enumerate() {
        let mut s = init.scope(format!("decoder.{j}"));
        let d = dims[level];
        decoder.push(DecoderStage {
            up: Upsample::new(&mut s, "up", dims[level + 1], cfg.upsampler, cfg.se_reduction)?,
            fuse: Linear::new(&mut s, "fuse", 2 * d, d, true)?,
            stage: GcVitStage::new(&mut s, "stage", &stage_spec(cfg, level, cfg.decoder_depths[j]))?,
        });
    }
    let mut h = init.scope("head");
    let head = SegHead {
        norm: LayerNorm::new(&mut h, "norm", c)?,
        up1: ConvTranspose2d::new(&mut h, "up1", c, c, 2, true)?,
        up2: ConvTranspose2d::new(&mut h, "up2", c, c, 2, true)?,
        classify: Conv2d::new(&mut h, "classify", c, cfg.num_classes, 1, 1, 0, 1, true)?,
    };
    Ok(Layout { stem, encoder, downs, decoder, head })
}

impl<T: Element> GCtxUNet<T> {
    pub fn cast<U: Element>(&self) -> GCtxUNet<U> {
        GCtxUNet { config: self.config.clone(), layout: self.layout.clone(), params: self.params.cast() }
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// `img: [B, in_channels, S, S]` → logits `[B, K, S, S]`.
    ///
    /// Stage outputs are reported to the graph inspector under
    /// `encoder.{i}`, `bottleneck` and `decoder.{j}`.
    pub fn forward<'g>(&self, s: &Session<'g, T>, img: &Var<'g, T>) -> Result<Var<'g, T>> {
        let cfg = &self.config;
        let expect = [img.shape().first().copied().unwrap_or(0), cfg.in_channels, cfg.img_size, cfg.img_size];
        if img.shape() != expect || expect[0] == 0 {
            return Err(Error::Numerics(gctx_numerics::Error::Dimension {
                op: "forward",
                msg: format!(
                    "expected input [B,{},{},{}], got {:?}",
                    cfg.in_channels,
                    cfg.img_size,
                    cfg.img_size,
                    img.shape()
                ),
            }));
        }
        let l = &self.layout;
        let g = s.graph();
        let mut x = l.stem.forward(s, img)?;
        let mut skips = Vec::with_capacity(3);
        for (i, stage) in l.encoder.iter().enumerate() {
            x = stage.forward(s, &x)?;
            if i < 3 {
                g.inspect(&format!("encoder.{i}"), x.value());
                skips.push(x.clone());
                x = l.downs[i].forward(s, &x)?;
            } else {
                g.inspect("bottleneck", x.value());
            }
        }
        for (j, dec) in l.decoder.iter().enumerate() {
            let skip = &skips[2 - j];
            let up = dec.up.forward(s, &x)?;
            let cat = Var::concat(&[up, skip.clone()], 1)?;
            let fused = dec.fuse.forward(s, &cat.permute(&[0, 2, 3, 1])?)?.permute(&[0, 3, 1, 2])?;
            x = dec.stage.forward(s, &fused)?;
            g.inspect(&format!("decoder.{j}"), x.value());
        }
        let h = &l.head;
        let y = h.norm.forward_nchw(s, &x)?;
        let y = h.up1.forward(s, &y)?.gelu()?;
        let y = h.up2.forward(s, &y)?.gelu()?;
        h.classify.forward(s, &y)
    }

    /// Inference-only forward on raw images.
    pub fn predict_logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::inference();
        let s = Session::frozen(&g, &self.params);
        let out = self.forward(&s, &g.constant(images.clone()))?;
        Ok(out.value().clone())
    }

    /// Multiply-adds ×2 of one forward pass at the configured resolution,
    /// summed over convolutions, linear layers and attention matmuls.
    pub fn count_flops(&self, batch: usize) -> Result<u64> {
        let g = Graph::<T>::inference();
        let s = Session::frozen(&g, &self.params);
        let n = self.config.img_size;
        let img = g.constant(Tensor::zeros(&[1, self.config.in_channels, n, n]));
        self.forward(&s, &img)?;
        Ok(g.flops() * batch as u64)
    }
}

/// Per-pixel argmax over the class axis of `[B,K,H,W]` logits.
pub fn argmax_labels<T: Element>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(b * hw);
    for bi in 0..b {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if d[(bi * k + c) * hw + p] > d[(bi * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}
