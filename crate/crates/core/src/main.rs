use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbrhc::cli::{self, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, OUT_DIR_ENV};
use rbrhc::controller::Algorithm;
use rbrhc::Error;

#[derive(Parser)]
#[command(name = "rbrhc", version, about = "Risk-budget receding horizon control experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte Carlo experiment and write CSV/JSON results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of rb-rhc, jcc-fh, jcc-rhc, pcl-rhc.
        #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
        algorithms: Option<Vec<Algorithm>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Run the bundled oracle checks.
    Verify,
    /// Builtin scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    List,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::parse(s).ok_or_else(|| format!("unknown algorithm `{s}` (rb-rhc, jcc-fh, jcc-rhc, pcl-rhc)"))
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("{}", cli::error_json(err));
    ExitCode::from(cli::exit_code(err) as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match args.command {
        Command::Run {
            config,
            algorithms,
            trials,
            seed,
            out,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    return fail(&Error::Io {
                        path: config.display().to_string(),
                        message: e.to_string(),
                    })
                }
            };
            let mut cfg = match cli::parse_config_str(&text, &config.display().to_string()) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(a) = algorithms {
                cfg.algorithms = a;
            }
            if let Some(m) = trials {
                cfg.trials = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out_dir = cli::output_dir(out, &cfg);
            let base = config.parent().map(PathBuf::from).unwrap_or_default();
            let run = match cli::resolve(&cfg, &base) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            match cli::cmd_run(&run, &out_dir) {
                Ok(result) => {
                    print!("{}", cli::format_summary(&result.summary));
                    println!("results written to {}", out_dir.display());
                    ExitCode::from(EXIT_OK as u8)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Verify => match cli::cmd_verify(&mut std::io::stdout()) {
            Ok(true) => ExitCode::from(EXIT_OK as u8),
            Ok(false) => ExitCode::from(EXIT_FAILURE as u8),
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_FAILURE as u8)
            }
        },
        Command::Scenarios {
            action: ScenarioAction::List,
        } => match cli::scenarios_list(&mut std::io::stdout()) {
            Ok(()) => ExitCode::from(EXIT_OK as u8),
            Err(_) => ExitCode::from(EXIT_FAILURE as u8),
        },
    }
}
