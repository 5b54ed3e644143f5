use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flextune::experiment::{cmd_pretrain, cmd_retrieve, cmd_select, cmd_sweep, describe, ExperimentConfig};
use flextune::{Error, Result, Strategy};

/// Single-unit fine-tuning experiments.
///
/// Exit codes: 0 success, 2 config or argument error, 3 data error,
/// 4 runtime or numeric error.
#[derive(Parser)]
#[command(name = "flextune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured architecture on the source domain.
    Pretrain(Common),
    /// Pick and fine-tune a unit on the shifted target domain.
    Select(Common),
    /// Fine-tune every unit at every configured training size.
    Sweep(Common),
    /// Nearest-neighbour retrieval of source images for target queries.
    Retrieve(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel training runs; results do not depend on it.
    #[arg(long, env = "FLEXTUNE_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prepend a 1×1 convolution unit before selecting.
    #[arg(long)]
    pixel_unit: bool,
    /// Run only this strategy (flex, fast-flex, faster-flex, ft-fc, ft-fc2, ft-ss, ft-all).
    #[arg(long)]
    strategy: Option<String>,
    /// Pretrained (source) checkpoint; defaults to <out>/pretrained.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Tuned checkpoint for retrieval.
    #[arg(long)]
    tuned: Option<PathBuf>,
    /// Neighbours per query for retrieval.
    #[arg(long)]
    k: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.pixel_unit {
            cfg.pixel_unit = true;
        }
        if let Some(s) = &self.strategy {
            cfg.strategies = vec![s.parse::<Strategy>()?];
        }
        if self.workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let (_, m) = cmd_pretrain(&c.config()?)?;
            println!(
                "pretrained {} for {} epochs: source test {:.4}, shifted test {:.4}",
                m.architecture, m.epochs, m.source_test_accuracy, m.shifted_test_accuracy
            );
        }
        Command::Select(c) => {
            for r in cmd_select(&c.config()?, c.checkpoint.as_deref(), c.workers)? {
                println!("{}", describe(&r));
            }
        }
        Command::Sweep(c) => {
            let t = cmd_sweep(&c.config()?, c.checkpoint.as_deref(), c.workers)?;
            println!("sweep wrote {} rows", t.rows.len());
        }
        Command::Retrieve(c) => {
            let (_, s) = cmd_retrieve(&c.config()?, c.checkpoint.as_deref(), c.tuned.as_deref(), c.k)?;
            println!("mAP@{} = {:.4} over {} queries", s.k, s.map, s.queries);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
