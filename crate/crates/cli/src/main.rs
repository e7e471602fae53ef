use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use micon_cli::commands;
use micon_cli::config::DataConfig;
use micon_cli::{CliResult, Context, RunConfig};

#[derive(Parser)]
#[command(name = "micon", version, about = "Contrastive morphological profiling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML); the shipped default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seeds sequentially; outputs are identical across invocations.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Use a single seed: the data seed for gen-data, the model seed otherwise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `<out>/data`.
    GenData,
    /// Train every configured method and seed.
    Train,
    /// Score checkpoints by constrained nearest-neighbour retrieval.
    Evaluate,
    /// List compounds far from their plate-map nearest control.
    Nominate,
    /// Merge the comparisons of one or more run directories.
    Report {
        /// Run directories holding `comparison.json`; defaults to the run directory.
        runs: Vec<PathBuf>,
    },
}

fn load(cli: &Cli, gen_data: bool) -> CliResult<(RunConfig, Context)> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        if gen_data {
            if let DataConfig::Synthetic(s) = &mut cfg.data {
                s.seed = seed;
            }
        } else {
            cfg.train.seeds = vec![seed];
            cfg.eval.seeds = Some(vec![seed]);
        }
    }
    let ctx = Context::new(&cfg, cli.out.clone(), cli.deterministic);
    Ok((cfg, ctx))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData => {
            let (cfg, ctx) = load(cli, true)?;
            let s = commands::gen_data(&cfg, &ctx)?;
            println!(
                "wrote {}: {} wells ({} DMSO), {} FOVs, {} compounds, {} sources, {} batches, {} plates, {} features",
                ctx.data_dir().display(),
                s.wells,
                s.control_wells,
                s.fovs,
                s.compounds,
                s.sources,
                s.batches,
                s.plates,
                s.feature_dim
            );
        }
        Command::Train => {
            let (cfg, ctx) = load(cli, false)?;
            for s in commands::train(&cfg, &ctx)? {
                println!(
                    "{} seed {}: best step {}, val loss {:.4} (initial {:.4})",
                    s.method, s.seed, s.best_step, s.best_val_loss, s.initial_val_loss
                );
            }
        }
        Command::Evaluate => {
            let (cfg, ctx) = load(cli, false)?;
            print!("{}", commands::evaluate(&cfg, &ctx)?.table());
        }
        Command::Nominate => {
            let (cfg, ctx) = load(cli, false)?;
            let noms = commands::nominate(&cfg, &ctx)?;
            for n in &noms {
                println!("{}\t{} sources\tmean distance {:.4}", n.compound, n.qualifying.len(), n.mean_distance);
            }
            println!("{} compounds nominated", noms.len());
        }
        Command::Report { runs } => {
            let (runs, out) = if runs.is_empty() {
                let (_, ctx) = load(cli, false)?;
                (vec![ctx.out.clone()], ctx.out)
            } else {
                let out = cli.out.clone().unwrap_or_else(|| runs[0].clone());
                (runs.clone(), out)
            };
            print!("{}", commands::report(&runs, &out)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
