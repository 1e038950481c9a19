use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use irs_core::harness::{format_summary, run, summarize, write_csv, Experiment, ExperimentConfig, RunOptions, Scheme};
use irs_core::Error;

#[derive(Parser)]
#[command(name = "irs-lab", version, about = "Monte-Carlo experiments for reflecting-surface-aided MIMO links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; defaults to the config's `output` or `<config stem>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// 100 random restarts and 100 realizations.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        realizations: Option<usize>,
        /// Comma-separated scheme names replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        /// Fill the wall_ms column (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// List experiment ids and registered schemes.
    ListExperiments,
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "results".into());
    PathBuf::from(stem).with_extension("csv")
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> irs_core::Result<()> {
    match cli.command {
        Command::ListExperiments => {
            println!("experiments:");
            for e in Experiment::ALL {
                println!("  {:<20} {}", e.name(), e.description());
            }
            println!("schemes:");
            for s in Scheme::ALL {
                println!("  {}", s.name());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for w in cfg.warnings() {
                eprintln!("warning: {w}");
            }
            println!("{}: ok ({}, {} schemes)", config.display(), cfg.experiment_id, cfg.schemes.len());
            Ok(())
        }
        Command::Run {
            config,
            out,
            seed,
            paper_scale,
            realizations,
            schemes,
            timing,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if paper_scale {
                cfg.apply_paper_scale();
            }
            if let Some(r) = realizations {
                cfg.realizations = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(list) = schemes {
                cfg.schemes = list.iter().map(|s| s.trim().parse()).collect::<irs_core::Result<_>>()?;
            }
            cfg.validate()?;
            for w in cfg.warnings() {
                eprintln!("warning: {w}");
            }
            let path = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| default_out(&config));
            let rows = run(&cfg, RunOptions { timing })?;
            write_csv(&rows, &path)?;
            print!("{}", format_summary(&summarize(&rows)));
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
            Ok(())
        }
    }
}
