use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dosmct_cli::config::{resolve, Axis, FlagOverrides, Method};
use dosmct_cli::pipeline::{cmd_ablate, cmd_reconstruct, cmd_rerun, cmd_simulate, cmd_train_score};
use dosmct_cli::Failure;

/// Sparse-view CT reconstruction with a multi-channel score-based sampler.
#[derive(Parser)]
#[command(name = "dosmct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Views kept from the full scan.
    #[arg(long)]
    views: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, full and sparse sinograms.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct with fbp, sirt, fista, dosm or pc.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Train the score model on random head phantoms.
    TrainScore {
        #[command(flatten)]
        common: Common,
    },
    /// DOSM over a list of N, K or beta values.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Option<Axis>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("DOSMCT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Failure::Usage(format!("DOSMCT_THREADS must be a count, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn flags(c: &Common) -> FlagOverrides {
    FlagOverrides {
        seed: c.seed,
        views: c.views,
        ..FlagOverrides::default()
    }
}

fn execute(cli: Cli) -> Result<PathBuf, Failure> {
    configure_threads()?;
    let (manifest, out) = match cli.command {
        Command::Simulate { common } => {
            let cfg = resolve(common.config.as_deref(), &flags(&common))?;
            (cmd_simulate(&cfg, &common.out)?, common.out)
        }
        Command::Reconstruct { common, method } => {
            let f = FlagOverrides {
                method,
                ..flags(&common)
            };
            let cfg = resolve(common.config.as_deref(), &f)?;
            (cmd_reconstruct(&cfg, &common.out)?, common.out)
        }
        Command::TrainScore { common } => {
            let cfg = resolve(common.config.as_deref(), &flags(&common))?;
            (cmd_train_score(&cfg, &common.out)?, common.out)
        }
        Command::Ablate { common, axis, values } => {
            let f = FlagOverrides {
                axis,
                values,
                ..flags(&common)
            };
            let cfg = resolve(common.config.as_deref(), &f)?;
            (cmd_ablate(&cfg, &common.out)?, common.out)
        }
        Command::Rerun { manifest, out } => (cmd_rerun(&manifest, &out)?, out),
    };
    eprintln!("{}: {} outputs", manifest.command, manifest.outputs.len());
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            println!("{}", Path::new(&out).join(dosmct_cli::manifest::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dosmct: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
