use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fspde::harness::{self, Overrides};

/// Experiment runner for fractional stochastic evolution equations.
///
/// Exit status: 0 pass, 1 assertion failure, 2 config error, 3 numerical abort.
#[derive(Parser)]
#[command(name = "fspde-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Output directory (default `run.out`, else `fspde-out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Explain what a run kind computes and asserts.
    Describe { kind: String },
    /// List the built-in model presets.
    ListPresets,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { code(2) } else { code(0) };
        }
    };
    match cli.command {
        Command::ListPresets => {
            print!("{}", harness::list_presets());
            code(0)
        }
        Command::Describe { kind } => match harness::describe(&kind) {
            Ok(text) => {
                println!("{text}");
                code(0)
            }
            Err(e) => {
                let kinds: Vec<&str> = harness::RunKind::ALL.iter().map(|k| k.name()).collect();
                eprintln!("error: {e}\nknown kinds: {}", kinds.join(", "));
                code(2)
            }
        },
        Command::Run {
            config,
            seed,
            paths,
            out,
            workers,
        } => {
            let overrides = Overrides {
                seed,
                paths,
                out,
                workers,
            };
            let result = harness::load_config(&config).and_then(|cfg| harness::run(&cfg, &overrides));
            match &result {
                Ok(outcome) => {
                    print!("{}", outcome.report_text());
                    println!("content_hash: {}", outcome.hash);
                    println!("output: {}", outcome.out_dir.display());
                }
                Err(e) => eprintln!("error: {e}"),
            }
            code(harness::exit_code(&result))
        }
    }
}
