use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "onevision", version, about = "Native vision-language toolkit: serialization, masks, training and evaluation")]
struct Cli {
    /// Accepted for scripting; every command is already deterministic for a
    /// fixed seed.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serialize a prompt manifest into a layout dump.
    Serialize {
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the attention mask of a layout dump as a binary PGM.
    #[command(alias = "mask")]
    MaskDump {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the rotary angles of every token of a layout dump.
    RopeDump {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying d_t/d_h/d_w and the base frequencies.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate synthetic samples as Netpbm images plus manifests.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One of textonly, caption, same_diff, motion; default is the mixture.
        #[arg(long)]
        task: Option<String>,
        /// Mixture weights textonly:caption:same_diff:motion.
        #[arg(long, default_value = "2:4:1:1")]
        mix: String,
    },
    /// Compare analytic and finite-difference gradients of the model loss.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 8)]
        coords: usize,
        /// Debug aid: doubles the analytic gradient, so the check must fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Run one training stage; writes a checkpoint and a metrics log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage: u8,
        /// Continue an interrupted run of the same stage.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy-decode held-out samples and report exact-match accuracy.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
    },
    /// Greedy-decode an answer for a prompt manifest.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
