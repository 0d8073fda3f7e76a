use std::path::PathBuf;
use std::process::ExitCode;

use amrlab_cases::config::parse_flux;
use amrlab_cases::verify;
use amrlab_cases::{load_config, run_case, Backend, CaseId};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "amrlab",
    version,
    about = "Tree- and patch-based AMR benchmark driver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark case.
    Run {
        #[arg(long)]
        case: String,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        flux: Option<String>,
        /// Plain-text `key = value` overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the available cases.
    ListCases,
    /// Run a verification suite and print one line per check.
    Verify {
        #[arg(long, default_value = "quick")]
        suite: String,
        /// Directory for the outputs of the runs a suite performs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListCases => {
            for c in CaseId::ALL {
                println!("{:<14} {}", c.name(), c.summary());
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            case,
            backend,
            flux,
            config,
            out,
        } => {
            let case: CaseId = match case.parse() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let backend: Option<Backend> = match backend.map(|b| b.parse()).transpose() {
                Ok(b) => b,
                Err(e) => return config_error(e),
            };
            let mut overrides = Vec::new();
            if let Some(f) = &flux {
                if let Err(e) = parse_flux(f) {
                    return config_error(e);
                }
                overrides.push(("flux", f.as_str()));
            }
            let cfg = match load_config(case, backend, config.as_deref(), &overrides) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_case(&cfg, Some(&out)) {
                Ok(outcome) => {
                    print!("{}", outcome.report.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Verify { suite, out } => {
            let Some(ids) = verify::suite(&suite) else {
                return config_error(format!(
                    "unknown suite '{suite}' (expected one of {:?} or criterion numbers like 1,4)",
                    verify::SUITES
                ));
            };
            let mut ctx = verify::Context::new(out);
            let mut failed = 0;
            for id in ids {
                let r = ctx.criterion(id);
                println!("{}", r.line());
                if !r.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
