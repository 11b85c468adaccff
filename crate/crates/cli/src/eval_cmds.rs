use std::path::Path;

use gctx_numerics::Tensor;
use gctx_unet::data::{load_dataset, NsegTensor};
use gctx_unet::model::{argmax_labels, Checkpoint};
use gctx_unet::objectives::{LabelMask, MetricReport};
use gctx_unet::trainer::evaluate;
use serde_json::json;

use crate::config::{create_dir, write_file};
use crate::error::{CliError, CliResult};
use crate::overlay;
use crate::train_cmd::check_compatible;

fn report_json(r: &MetricReport, checkpoint: &Path, data: &Path) -> serde_json::Value {
    json!({
        "checkpoint": checkpoint.display().to_string(),
        "data": data.display().to_string(),
        "cases": r.cases,
        "mean_dsc": r.mean_dsc,
        "mean_hd95": r.mean_hd95,
        "with_hd95": r.with_hd95,
        "classes": r.classes.iter().map(|c| json!({
            "class": c.class,
            "dsc": c.dsc,
            "hd95": c.hd95,
            "hd95_undefined": c.hd95_undefined,
        })).collect::<Vec<_>>(),
    })
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path, with_hd95: bool) -> CliResult {
    let model = Checkpoint::load(checkpoint)?.model;
    let ds = load_dataset(data)?;
    check_compatible(&model.config, &ds, "evaluation set")?;
    let report = evaluate(&model, &ds, with_hd95)?;
    let table = report.to_table();
    print!("{table}");
    create_dir(out)?;
    write_file(&out.join("report.txt"), &table)?;
    let text = serde_json::to_string_pretty(&report_json(&report, checkpoint, data)).expect("plain json values");
    write_file(&out.join("report.json"), text + "\n")?;
    Ok(())
}

fn file_stem(p: &Path) -> String {
    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    name.strip_suffix(".nseg").map(str::to_string).unwrap_or(name)
}

pub fn predict(checkpoint: &Path, image: &Path, out: &Path, with_overlay: bool) -> CliResult {
    let model = Checkpoint::load(checkpoint)?.model;
    let cfg = &model.config;
    let mut img = NsegTensor::read(image)?.to_f32();
    if img.rank() == 2 {
        let s = img.shape().to_vec();
        img = img.into_reshaped(&[1, s[0], s[1]])?;
    }
    let s = img.shape().to_vec();
    if s.len() != 3 || s[0] != cfg.in_channels {
        return Err(CliError::validation(format!(
            "image {} has shape {s:?}; the model expects [{}, H, W]",
            image.display(),
            cfg.in_channels
        )));
    }
    if s[1] != cfg.img_size || s[2] != cfg.img_size {
        return Err(CliError::validation(format!(
            "image {} is {}x{} but the model expects {n}x{n}; resize it first with \
             `gctx resize --input {} --size {n} --out <file>`",
            image.display(),
            s[1],
            s[2],
            image.display(),
            n = cfg.img_size,
        )));
    }
    let batch: Tensor<f32> = img.clone().into_reshaped(&[1, s[0], s[1], s[2]])?;
    let labels = argmax_labels(&model.predict_logits(&batch)?);
    let mask = LabelMask::new(&[s[1], s[2]], labels)?;
    create_dir(out)?;
    let stem = file_stem(image);
    let mask_path = out.join(format!("{stem}.mask.nseg"));
    NsegTensor::U8 { shape: mask.shape().to_vec(), data: mask.data().to_vec() }.write(&mask_path)?;
    println!("wrote {}", mask_path.display());
    if with_overlay {
        let png = out.join(format!("{stem}.overlay.png"));
        overlay::save_png(&overlay::render(&img, &mask), &png)?;
        println!("wrote {}", png.display());
    }
    Ok(())
}
