use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maglab::{Error, Result};
use maglab_cli::config::parse_config;
use maglab_cli::{exit_code, run_to_dir};

#[derive(Parser)]
#[command(name = "maglab", version, about = "Spectral experiments on periodic and random magnetic lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Bands(Common),
    GhCertify(Common),
    Ids(Common),
    Lifshitz(Common),
    Wegner(Common),
    Kw(Common),
    Decay(Common),
    FeshbachVerify(Common),
    FhCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overrides compute.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Bands(c) => ("bands", c),
            Command::GhCertify(c) => ("gh_certify", c),
            Command::Ids(c) => ("ids", c),
            Command::Lifshitz(c) => ("lifshitz", c),
            Command::Wegner(c) => ("wegner", c),
            Command::Kw(c) => ("kw", c),
            Command::Decay(c) => ("decay", c),
            Command::FeshbachVerify(c) => ("feshbach_verify", c),
            Command::FhCheck(c) => ("fh_check", c),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = cli.command.parts();
    // before validation, which may already use the pool
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let mut cfg = parse_config(&args.config)?;
    if cfg.experiment.name() != kind {
        return Err(Error::Config(format!(
            "{} describes a '{}' experiment, not '{kind}'",
            args.config.display(),
            cfg.experiment.name()
        )));
    }
    if let Some(s) = args.seed {
        cfg.compute.master_seed = s;
    }
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let manifest = run_to_dir(&cfg, &dir)?;
    log::info!("{kind}: wrote {} files to {} in {:.2} s", manifest.outputs.len(), dir.display(), manifest.wall_time_seconds);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
