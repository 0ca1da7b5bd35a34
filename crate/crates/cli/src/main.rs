use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use dpt_core::bench::experiment::{verify_run_dir, write_outputs, OutputError, METRICS_FILE};
use dpt_core::bench::{emit_plot_data, parse_config, read_csv, run_experiment, SeedRun};

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "dpt-bench", version, about = "Small-cell power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configured experiment and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the final efficiency of every run in a metrics file.
    Verify {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Write efficiency-versus-iteration series for plotting.
    Plotdata {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: CONFIG_ERROR,
        message: e.to_string(),
    }
}

fn runtime_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: RUNTIME_ERROR,
        message: e.to_string(),
    }
}

fn output_error(e: OutputError) -> Failure {
    match e {
        OutputError::Config(_) => config_error(e),
        _ => runtime_error(e),
    }
}

fn summarize(runs: &[SeedRun]) {
    for run in runs {
        if let Some(last) = run.records.last() {
            println!(
                "{}\titerations {}\teta {:.6e}\tviolations {}",
                run.run_id,
                run.records.len(),
                last.eta,
                last.violations
            );
        }
    }
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut spec = parse_config(config).map_err(config_error)?;
    if let Some(seed) = seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = out {
        spec.output_dir = out;
    }
    let dir = spec.output_dir.clone();
    match run_experiment(&spec) {
        Ok(runs) => {
            write_outputs(&spec, &runs, &dir).map_err(output_error)?;
            summarize(&runs);
            println!("wrote {}", dir.join(METRICS_FILE).display());
            Ok(())
        }
        Err(e) => {
            if !e.partial.is_empty() {
                if let Err(w) = write_outputs(&spec, &e.partial, &dir) {
                    eprintln!("error: could not write partial results: {w}");
                } else {
                    summarize(&e.partial);
                    eprintln!("partial results written to {}", dir.display());
                }
            }
            Err(runtime_error(e))
        }
    }
}

fn verify(csv: &Path) -> Result<(), Failure> {
    let outcomes = verify_run_dir(csv).map_err(output_error)?;
    let mut failed = 0;
    for o in &outcomes {
        let weights = o.weights_eta.map(|e| format!("\tweights {e:.12e}")).unwrap_or_default();
        println!(
            "{}\t{}\trecorded {:.12e}\tallocation {:.12e}{weights}",
            if o.passed { "ok" } else { "MISMATCH" },
            o.run_id,
            o.recorded_eta,
            o.allocation_eta
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(runtime_error(format!("{failed} of {} runs failed verification", outcomes.len())));
    }
    Ok(())
}

fn plotdata(csv: &Path, out: &Path) -> Result<(), Failure> {
    let records = read_csv(csv).map_err(runtime_error)?;
    let written = emit_plot_data(&records, out).map_err(runtime_error)?;
    println!("wrote {} series to {}", written.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(CONFIG_ERROR),
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out),
        Command::Verify { csv } => verify(&csv),
        Command::Plotdata { csv, out } => plotdata(&csv, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
