use std::path::Path;

use gctx_numerics::ops::resize_bilinear;
use gctx_numerics::{Rng, Tensor};
use gctx_unet::data::{generate_synthetic, resize_nearest, NsegTensor};
use gctx_unet::objectives::LabelMask;
use image::ColorType;

use crate::error::{CliError, CliResult, EXIT_IO};

pub fn gen(out: &Path, n: usize, size: usize, classes: usize, seed: u64) -> CliResult {
    if n == 0 {
        return Err(CliError::validation("--n must be at least 1"));
    }
    let data = generate_synthetic(n, size, classes, &mut Rng::new(seed))?;
    let manifest = data.write(out)?;
    println!("wrote {n} samples ({size}x{size}, {classes} classes) to {}", manifest.display());
    Ok(())
}

/// PNG to NSEG: images become `[C,H,W]` f32 in [0,1] (C = 1 for grey
/// inputs, 3 otherwise); masks become `[H,W]` u8 labels from the grey level.
pub fn convert(input: &Path, out: &Path, mask: bool) -> CliResult {
    let img = image::open(input).map_err(|e| CliError { code: EXIT_IO, message: format!("cannot read {}: {e}", input.display()) })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = if mask {
        NsegTensor::U8 { shape: vec![h, w], data: img.to_luma8().into_raw() }
    } else if matches!(img.color(), ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16) {
        let g = img.to_luma8();
        NsegTensor::F32(Tensor::new(&[1, h, w], g.as_raw().iter().map(|&v| v as f32 / 255.0).collect())?)
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        NsegTensor::F32(Tensor::from_fn(&[3, h, w], |i| raw[(i % (h * w)) * 3 + i / (h * w)] as f32 / 255.0))
    };
    t.write(out)?;
    println!("wrote {} {:?} to {}", if mask { "mask" } else { "image" }, t.shape(), out.display());
    Ok(())
}

/// Square resize of an NSEG file: bilinear for float images, nearest for
/// 8-bit masks.
pub fn resize(input: &Path, size: usize, out: &Path) -> CliResult {
    if size == 0 {
        return Err(CliError::validation("--size must be positive"));
    }
    let t = NsegTensor::read(input)?;
    let resized = match &t {
        NsegTensor::U8 { shape, data } if shape.len() == 2 => {
            let m = resize_nearest(&LabelMask::new(shape, data.clone())?, size, size);
            NsegTensor::U8 { shape: m.shape().to_vec(), data: m.into_data() }
        }
        NsegTensor::U8 { shape, .. } => {
            return Err(CliError::validation(format!("8-bit input must be a [H,W] mask, got {shape:?}")));
        }
        _ => {
            let f = t.to_f32();
            let (c, h, w) = match f.shape() {
                [h, w] => (1, *h, *w),
                [c, h, w] => (*c, *h, *w),
                s => return Err(CliError::validation(format!("image must be [H,W] or [C,H,W], got {s:?}"))),
            };
            let data = resize_bilinear(f.data(), c, h, w, size, size);
            let shape = if f.rank() == 2 { vec![size, size] } else { vec![c, size, size] };
            NsegTensor::F32(Tensor::new(&shape, data)?)
        }
    };
    resized.write(out)?;
    println!("wrote {:?} to {}", resized.shape(), out.display());
    Ok(())
}
