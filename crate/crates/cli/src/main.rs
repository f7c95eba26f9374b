use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pernode_cli::error::CliError;
use pernode_cli::grid::RunStatus;
use pernode_cli::verify::Suite;
use pernode_cli::{bench, cmd_bench, cmd_gen_data, cmd_grid, cmd_report, cmd_verify};

#[derive(Parser)]
#[command(name = "pernode", version, about = "Per-sample mask regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write features.csv and labels.csv for the config's synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every variant at every drop rate; completed runs are skipped.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run invariant suites and print one JSON line per check.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Top-k table, Friedman ranking and charts from a grid directory.
    Report {
        /// Grid output directory, or any directory of .jsonl run logs.
        log_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Mean and standard deviation of epoch time per variant.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let dir = cmd_gen_data(&config, out.as_deref(), seed)?;
            println!("wrote dataset to {}", dir.display());
        }
        Command::Grid {
            config,
            out,
            seed,
            jobs,
        } => {
            let summary = cmd_grid(&config, out.as_deref(), seed, jobs)?;
            let diverged = summary
                .manifest
                .runs
                .iter()
                .filter(|r| r.status == RunStatus::Diverged)
                .count();
            println!(
                "{} runs: {} executed, {} resumed, {} diverged, {} records",
                summary.manifest.runs.len(),
                summary.executed,
                summary.resumed,
                diverged,
                summary.records.len()
            );
            for s in &summary.manifest.skipped_variants {
                println!("skipped {}: {}", s.variant, s.error);
            }
            let failed: Vec<String> = summary
                .failures()
                .map(|r| format!("{} @ {}: {}", r.variant, r.drop_rate, r.error.as_deref().unwrap_or("")))
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(format!("runs failed: {}", failed.join("; "))));
            }
        }
        Command::Verify { suite, seed } => {
            cmd_verify(suite, seed, None, &mut std::io::stdout())?;
        }
        Command::Report { log_dir, out, k } => {
            let outcome = cmd_report(&log_dir, &out, k)?;
            println!("{} top-k rows", outcome.topk.len());
            if let Some(r) = &outcome.rank {
                println!(
                    "Friedman chi2 = {:.3}, p = {:.2e}, Kendall W = {:.3} ({} blocks x {} variants)",
                    r.friedman_chi2, r.p_value, r.kendall_w, r.n_blocks, r.k_variants
                );
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bench { config, out, seed } => {
            let report = cmd_bench(&config, out.as_deref(), seed)?;
            print!("{}", bench::format_table(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
