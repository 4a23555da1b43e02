use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ard_lora::config::{parse_config, RunConfig};
use ard_lora::experiments::{report, run_experiment};
use ard_lora::trainer::Mode;
use ard_lora::verify::{run_suite, SUITES};
use ard_lora::Error;

#[derive(Parser)]
#[command(name = "ard-lora", version, about = "Adaptive-rank LoRA on synthetic planted-rank tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the planted task described by a config file.
    #[command(after_help = RunConfig::key_help())]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run one mode only; both run by default.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Run an oracle suite: linalg, gradient, adapter, regularizer or all.
    OracleCheck {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a finished run directory after verifying its manifest.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn train(config: PathBuf, seed: Option<u64>, out: PathBuf, mode: Option<Mode>) -> Result<(), Error> {
    let text = std::fs::read_to_string(&config).map_err(|source| Error::Io { path: config.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![Mode::Adaptive, Mode::Uniform],
    };
    let summary = run_experiment(&cfg, &modes, &out)?;
    for m in &summary.modes {
        println!(
            "{:<9} loss {:.4e}  params {:>6}  ranks {:?}",
            m.mode, m.final_task_loss, m.final_params, m.ranks
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out, mode } => train(config, seed, out, mode),
        Command::OracleCheck { suite, seed } => match run_suite(&suite, seed) {
            Ok(reports) => {
                let mut ok = true;
                for r in &reports {
                    print!("{r}");
                    ok &= r.passed();
                }
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvariantBreach("oracle suite failed".into()))
                }
            }
            Err(Error::InvalidInput(msg)) => {
                eprintln!("{msg} (suites: {})", SUITES.join(", "));
                return ExitCode::from(2);
            }
            Err(e) => Err(e),
        },
        Command::Report { run } => report(&run).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
