use std::path::Path;

use gctx_numerics::Tensor;
use gctx_unet::objectives::LabelMask;
use image::{Rgb, RgbImage};

use crate::error::{CliError, CliResult, EXIT_IO};

/// Class colours; label 0 is background and is left unpainted. Labels past
/// 8 reuse colours 1..=8 cyclically.
pub const PALETTE: [[u8; 3]; 9] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

pub fn colour(label: u8) -> [u8; 3] {
    if label == 0 { PALETTE[0] } else { PALETTE[1 + (label as usize - 1) % 8] }
}

/// Grey-level image (channel mean) with each labelled pixel blended 50/50
/// with its class colour.
pub fn render(image: &Tensor<f32>, mask: &LabelMask) -> RgbImage {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = image.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let grey = (0..c).map(|ch| d[ch * h * w + p]).sum::<f32>() / c as f32;
        let g = (grey.clamp(0.0, 1.0) * 255.0).round() as u8;
        let label = mask.get(y as usize, x as usize);
        if label == 0 {
            Rgb([g, g, g])
        } else {
            let col = colour(label);
            Rgb(col.map(|v| ((v as u16 + g as u16) / 2) as u8))
        }
    })
}

pub fn save_png(img: &RgbImage, path: &Path) -> CliResult {
    img.save(path).map_err(|e| CliError { code: EXIT_IO, message: format!("cannot write {}: {e}", path.display()) })
}
