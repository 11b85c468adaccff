use std::fmt::Write as _;
use std::path::Path;

use gctx_numerics::{check_primitives, GradcheckOptions, GradcheckReport};
use gctx_unet::checks::{block_gradcheck, model_gradcheck};
use gctx_unet::model::{Checkpoint, GCtxUNet, ModelConfig};

use crate::config::{create_dir, load_run_config, write_file};
use crate::error::{CliError, CliResult};

pub const REF_PARAMS: f64 = 12.34e6;
pub const REF_GFLOPS: f64 = 30.41;
pub const REF_CHECKPOINT_MB: f64 = 49.75;

fn delta(v: f64, reference: f64) -> String {
    format!("{:+.1}%", 100.0 * (v / reference - 1.0))
}

/// Parameter count, FLOPs and checkpoint size of one configuration.
pub fn profile_text(cfg: &ModelConfig, batch: usize) -> CliResult<String> {
    let model = GCtxUNet::build(cfg)?;
    let params = model.count_params();
    let fwd = model.count_flops(1)?;
    let bytes = Checkpoint::from_model(&model).to_bytes().len();
    let is_default = *cfg == ModelConfig::default();
    let mut s = String::new();
    let row = |s: &mut String, k: &str, v: String, r: Option<String>| {
        let _ = writeln!(s, "{k:<22}{v:>18}{}", r.map_or(String::new(), |r| format!("   {r}")));
    };
    row(&mut s, "config", if is_default { "default".into() } else { "custom".into() }, None);
    row(
        &mut s,
        "params",
        params.to_string(),
        is_default.then(|| format!("ref 12.34M ({})", delta(params as f64, REF_PARAMS))),
    );
    row(&mut s, "flops_per_forward", format!("{:.3}G", fwd as f64 / 1e9), None);
    let per_batch = fwd as f64 * batch as f64 / 1e9;
    row(
        &mut s,
        &format!("flops_batch{batch}"),
        format!("{per_batch:.3}G"),
        (is_default && batch == 10).then(|| format!("ref 30.41G ({})", delta(per_batch, REF_GFLOPS))),
    );
    row(
        &mut s,
        &format!("macs_batch{batch}"),
        format!("{:.3}G", per_batch / 2.0),
        (is_default && batch == 10).then(|| format!("ref 30.41G ({})", delta(per_batch / 2.0, REF_GFLOPS))),
    );
    row(
        &mut s,
        "checkpoint_bytes",
        bytes.to_string(),
        is_default.then(|| format!("ref 49.75MB ({})", delta(bytes as f64 / 1e6, REF_CHECKPOINT_MB))),
    );
    if is_default {
        let _ = writeln!(
            s,
            "note: the 30.41G reference does not say whether it counts FLOPs or multiply-adds, or per batch or per epoch; both readings are listed"
        );
    }
    Ok(s)
}

pub fn profile(config: Option<&Path>, set: &[String], batch: usize, out: Option<&Path>) -> CliResult {
    if batch == 0 {
        return Err(CliError::validation("--batch must be at least 1"));
    }
    let cfg = load_run_config(config, set)?;
    let text = profile_text(&cfg.model, batch)?;
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("profile.txt"), &text)?;
    }
    Ok(())
}

fn line(name: &str, r: &GradcheckReport) -> String {
    let checked: usize = r.inputs.iter().map(|i| i.checked).sum();
    let worst = r.worst().map_or(String::new(), |w| format!(" worst {}", w.name));
    format!(
        "{} {name:<40} max_rel_err {:.3e} ({checked} coords){}",
        if r.passed() { "ok  " } else { "FAIL" },
        r.max_rel_err(),
        if r.passed() { String::new() } else { worst }
    )
}

pub fn gradcheck(
    scale: &str,
    corrupt: Option<String>,
    seed: u64,
    samples: usize,
    config: Option<&Path>,
    set: &[String],
) -> CliResult {
    let opts = GradcheckOptions { corrupt: corrupt.clone(), seed, ..GradcheckOptions::default() };
    let results: Vec<(String, GradcheckReport)> = match scale {
        "ops" => check_primitives(seed, &opts)?.into_iter().map(|(n, r)| (n.to_string(), r)).collect(),
        "block" => block_gradcheck(seed, &opts)?,
        "model" => {
            let cfg = if config.is_some() || !set.is_empty() {
                load_run_config(config, set)?.model
            } else {
                ModelConfig::test_scale(3)
            };
            let o = GradcheckOptions { samples_per_input: Some(samples.max(1)), ..opts };
            vec![(format!("model (img {}, C {})", cfg.img_size, cfg.embed_dim), model_gradcheck(&cfg, seed, &o)?)]
        }
        other => return Err(CliError::validation(format!("unknown --scale '{other}' (ops, block, model)"))),
    };
    let mut failed = Vec::new();
    for (name, r) in &results {
        println!("{}", line(name, r));
        if !r.passed() {
            failed.push(name.clone());
        }
    }
    if let Some(op) = &corrupt {
        if failed.is_empty() {
            return Err(CliError::validation(format!(
                "--corrupt {op}: no operation of that name ran in the {scale} checks"
            )));
        }
        println!("adjoint of '{op}' was deliberately corrupted");
    }
    if failed.is_empty() {
        println!("gradcheck {scale}: {} checks passed (tol {:.0e})", results.len(), opts_tol());
        Ok(())
    } else {
        Err(CliError::numeric(format!("gradcheck {scale}: {} of {} failed: {}", failed.len(), results.len(), failed.join(", "))))
    }
}

fn opts_tol() -> f64 {
    GradcheckOptions::default().tol
}
