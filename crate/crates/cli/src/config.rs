use std::path::Path;

use gctx_unet::model::parse_kv;
use gctx_unet::trainer::RunConfig;

use crate::error::{CliError, CliResult};

pub const DETERMINISTIC_ENV: &str = "GCTX_DETERMINISTIC";

/// Reads `file` (if any), applies `--set key=value` overrides and the
/// deterministic-mode environment override, then validates. Every bad key
/// or value is reported in one error.
pub fn load_run_config(file: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut entries: Vec<(String, String, String)> = Vec::new();
    let mut errors = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for e in parse_kv(&text)? {
            entries.push((format!("{} line {}", path.display(), e.line), e.key, e.value));
        }
    }
    for o in overrides {
        match o.split_once('=') {
            Some((k, v)) => entries.push((format!("--set {o}"), k.trim().to_string(), v.trim().to_string())),
            None => errors.push(format!("--set {o}: expected key=value")),
        }
    }
    if let Err(gctx_unet::Error::Config(m)) =
        cfg.apply(entries.iter().map(|(o, k, v)| (o.clone(), k.as_str(), v.as_str())))
    {
        errors.extend(m);
    }
    match std::env::var(DETERMINISTIC_ENV).ok().as_deref() {
        None | Some("") => {}
        Some("1" | "true") => cfg.train.deterministic = true,
        Some("0" | "false") => cfg.train.deterministic = false,
        Some(v) => errors.push(format!("{DETERMINISTIC_ENV}={v}: expected 0, 1, true or false")),
    }
    if let Err(gctx_unet::Error::Config(m)) = cfg.validate() {
        errors.extend(m);
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(gctx_unet::Error::Config(errors).into())
    }
}

pub fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
