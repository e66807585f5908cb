use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use trajfield_cli as cmd;
use trajfield_core::{Protocol, RunConfig, ViewProtocol};

#[derive(Parser)]
#[command(name = "trajfield", version, about = "Dynamic radiance fields from monocular video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth depth, flow and masks.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or fine-tune with `init`) on one or more datasets.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated dataset directories; overrides `data` in the config.
        #[arg(long, value_delimiter = ',')]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from; overrides `init` in the config.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Train on the first four frames only.
        #[arg(long)]
        unseen_frames: bool,
    },
    /// Render a view sweep from a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train-views | fixed-view | novel-view
        #[arg(long, default_value = "fixed-view")]
        protocol: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render with edits, e.g. "flip;translate:0.1,0,0;swap-bg:DIR".
    Edit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ops: String,
        #[arg(long, default_value = "train-views")]
        protocol: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare rendered frames with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// training-frames | unseen-frames | unseen-video
        #[arg(long, default_value = "training-frames")]
        protocol: String,
        /// Comma-separated frame indices to score (all by default).
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
    /// Print the documented default configuration.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = cmd::load_config(config.as_deref())?;
            let seq = cmd::synth(&cfg, &out)?;
            println!("wrote {} frames to {}", seq.len(), out.display());
        }
        Command::Train { config, data, out, init, unseen_frames } => {
            let mut cfg = cmd::load_config(config.as_deref())?;
            if init.is_some() {
                cfg.init = init;
            }
            let data = if data.is_empty() { cfg.data.clone() } else { data };
            cmd::train(&cfg, &data, &out, unseen_frames)?;
            println!("checkpoint written to {}", out.join("model.ckpt").display());
        }
        Command::Render { ckpt, data, protocol, out } => {
            let images = cmd::render(&ckpt, &data, ViewProtocol::parse(&protocol)?, &out)?;
            println!("rendered {} frames to {}", images.len(), out.display());
        }
        Command::Edit { ckpt, data, ops, protocol, out } => {
            let images = cmd::edit(&ckpt, &data, &ops, ViewProtocol::parse(&protocol)?, &out)?;
            println!("rendered {} edited frames to {}", images.len(), out.display());
        }
        Command::Eval { pred, gt, report, protocol, frames } => {
            let frames = (!frames.is_empty()).then_some(frames);
            let r = cmd::eval(&pred, &gt, Protocol::parse(&protocol)?, frames.as_deref(), &report)?;
            println!("{} frames: PSNR {:.2} dB, SSIM {:.4}", r.frames.len(), r.mean_psnr, r.mean_ssim);
        }
        Command::Config => print!("{}", RunConfig::documented()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
