use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use gctx_unet::data::{load_dataset, Dataset};
use gctx_unet::model::{Checkpoint, GCtxUNet, ModelConfig};
use gctx_unet::trainer::{TrainEvent, Trainer};

use crate::config::{create_dir, load_run_config, write_file};
use crate::error::{CliError, CliResult};

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub data: PathBuf,
    pub val: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub save_every: u64,
}

/// Checks that `data` can be fed to a model built from `cfg`.
pub fn check_compatible(cfg: &ModelConfig, data: &Dataset, what: &str) -> CliResult {
    let mut errs = Vec::new();
    if data.num_classes != cfg.num_classes {
        errs.push(format!("{what} has {} classes, model has num_classes = {}", data.num_classes, cfg.num_classes));
    }
    if let Some(c) = data.channels().filter(|&c| c != cfg.in_channels) {
        errs.push(format!("{what} images have {c} channels, model has in_channels = {}", cfg.in_channels));
    }
    if let Some(s) = data.image_size().filter(|&s| s != cfg.img_size) {
        errs.push(format!(
            "{what} images are {s}x{s}, model has img_size = {} (set size in the manifest or use `gctx resize`)",
            cfg.img_size
        ));
    }
    if errs.is_empty() { Ok(()) } else { Err(gctx_unet::Error::Config(errs).into()) }
}

fn best_checkpoint(t: &Trainer, dsc: f64) -> Checkpoint {
    Checkpoint {
        meta: format!("kind=best\nstep={}\ndsc={dsc}\n", t.step),
        step: t.step,
        ..Checkpoint::from_model(&t.model)
    }
}

pub fn train(a: TrainArgs) -> CliResult {
    let cfg = load_run_config(a.config.as_deref(), &a.set)?;
    let train = load_dataset(&a.data)?;
    check_compatible(&cfg.model, &train, "training set")?;
    let val = a.val.as_ref().map(load_dataset).transpose()?;
    if let Some(v) = &val {
        check_compatible(&cfg.model, v, "validation set")?;
    }
    create_dir(&a.out)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.model.config != cfg.model {
                return Err(CliError::validation(format!(
                    "checkpoint {} was trained with a different model configuration; pass the config it was \
                     trained with (saved as config.txt next to it)",
                    p.display()
                )));
            }
            Trainer::resume(ck, cfg.train.clone())?
        }
        None => Trainer::new(GCtxUNet::build(&cfg.model)?, cfg.train.clone())?,
    };
    write_file(&a.out.join("config.txt"), cfg.to_kv_text())?;

    let log_path = a.out.join("train.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;
    let best_path = a.out.join("best.ckpt");
    let final_path = a.out.join("final.ckpt");
    let mut wrote_best = false;
    println!(
        "training {} params on {} samples from step {}",
        trainer.model.count_params(),
        train.len(),
        trainer.step
    );

    let result = trainer.fit(&train, val.as_ref(), |event, t| {
        match event {
            TrainEvent::Epoch(rec) => {
                println!("{rec}");
                writeln!(log, "{rec}").map_err(|e| gctx_unet::Error::Io { path: log_path.clone(), source: e })?;
                if a.save_every > 0 && (rec.epoch + 1) % a.save_every == 0 {
                    t.checkpoint().save(&final_path)?;
                }
            }
            TrainEvent::Improved { dsc } => {
                best_checkpoint(t, *dsc).save(&best_path)?;
                wrote_best = true;
            }
        }
        Ok(())
    });
    match result {
        Ok(out) => {
            trainer.checkpoint().save(&final_path)?;
            if !wrote_best && !best_path.exists() {
                Checkpoint::from_model(&trainer.model).save(&best_path)?;
            }
            let best = out.best_dsc.map_or("none".to_string(), |d| format!("{d:.6}"));
            println!("stopped: {:?} at step {}; best dsc {best}", out.stop, trainer.step);
            println!("checkpoints: {} (best), {} (resume)", best_path.display(), final_path.display());
            Ok(())
        }
        Err(e) if e.is_numeric() => {
            trainer.checkpoint().save(&final_path)?;
            Err(CliError::numeric(format!("{e}; last good state saved to {}", final_path.display())))
        }
        Err(e) => Err(e.into()),
    }
}
