//! `gctx`: data preparation, training, evaluation, inference and
//! diagnostics for GCtx-UNet.

mod config;
mod data_cmds;
mod diag;
mod error;
mod eval_cmds;
mod overlay;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliResult;

#[derive(Parser)]
#[command(name = "gctx", version, about = "GCtx-UNet medical image segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic multi-organ dataset (images, masks, manifest).
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 9)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes config.txt, train.log, best.ckpt and final.ckpt.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, `key=value`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Training manifest.
        #[arg(long)]
        data: PathBuf,
        /// Validation manifest, used for early stopping and best.ckpt.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a final.ckpt.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write final.ckpt every N epochs (0: only at the end).
        #[arg(long, default_value_t = 0)]
        save_every: u64,
    },
    /// Score a checkpoint on a dataset; writes report.txt and report.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the HD95 computation.
        #[arg(long)]
        no_hd95: bool,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// NSEG image, `[C,H,W]` or `[H,W]`.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a colour overlay PNG.
        #[arg(long)]
        overlay: bool,
    },
    /// Parameter count, FLOPs and checkpoint size.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// ops, block or model.
        #[arg(long, default_value = "ops")]
        scale: String,
        /// Deliberately break the adjoint of this primitive.
        #[arg(long)]
        corrupt: Option<String>,
        #[arg(long, default_value_t = 9)]
        seed: u64,
        /// Coordinates sampled per tensor at model scale.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// PNG to NSEG.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat the PNG as a label mask.
        #[arg(long)]
        mask: bool,
    },
    /// Square resize of an NSEG image or mask.
    Resize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Gen { out, n, size, classes, seed } => data_cmds::gen(&out, n, size, classes, seed),
        Cmd::Train { config, set, data, val, out, resume, save_every } => {
            train_cmd::train(train_cmd::TrainArgs { config, set, data, val, out, resume, save_every })
        }
        Cmd::Eval { checkpoint, data, out, no_hd95 } => eval_cmds::eval(&checkpoint, &data, &out, !no_hd95),
        Cmd::Predict { checkpoint, image, out, overlay } => eval_cmds::predict(&checkpoint, &image, &out, overlay),
        Cmd::Profile { config, set, batch, out } => diag::profile(config.as_deref(), &set, batch, out.as_deref()),
        Cmd::Gradcheck { scale, corrupt, seed, samples, config, set } => {
            diag::gradcheck(&scale, corrupt, seed, samples, config.as_deref(), &set)
        }
        Cmd::Convert { input, out, mask } => data_cmds::convert(&input, &out, mask),
        Cmd::Resize { input, size, out } => data_cmds::resize(&input, size, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::from(error::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
