//! `mmg`: day-ahead dispatch and local market runs for three-phase microgrids.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmg_core::market::CaseConfig;
use mmg_core::pipeline::{
    dump_pds_cbf, format_suite, prepare, read_roles, run_ets, run_pds, run_suite, validate,
    write_ets, write_infeasibility, write_pds, write_suite, RunError, RunResult,
};
use mmg_core::scenario::Scenario;

/// Exit code when the suite ran but an ordering check failed.
const CHECKS_FAILED: u8 = 1;
/// Bad command line.
const USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "mmg",
    version,
    about = "Day-ahead energy management and local energy market for unbalanced microgrids"
)]
struct Cli {
    /// Output directory for CSV artifacts.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-microgrid pre-dispatch and role extraction.
    Pds {
        /// Scenario TOML file, or `benchmark` for the bundled one.
        scenario: String,
        /// Also write each pre-dispatch problem as CBF into this directory.
        #[arg(long)]
        dump_cbf: Option<PathBuf>,
    },
    /// Joint transactions step for one case, e.g. `C1.2-`.
    Ets {
        scenario: String,
        #[arg(long)]
        case: CaseConfig,
    },
    /// Pre-dispatch plus all eight cases, with ordering checks.
    Suite { scenario: String },
    /// Schema, connectivity and power-flow spot check.
    Validate { scenario: String },
    /// Print the bundled benchmark scenario.
    Benchmark,
}

fn load(arg: &str) -> RunResult<Scenario> {
    let path = Path::new(arg);
    if arg == "benchmark" && !path.exists() {
        return Ok(Scenario::benchmark());
    }
    Ok(Scenario::load(path)?)
}

fn pds_dir(out: &Path) -> PathBuf {
    out.join("pds")
}

fn run(cli: &Cli) -> RunResult<u8> {
    match &cli.command {
        Command::Pds { scenario, dump_cbf } => {
            let sc = load(scenario)?;
            let preps = prepare(&sc)?;
            if let Some(dir) = dump_cbf {
                for p in dump_pds_cbf(&sc, &preps, dir)? {
                    println!("wrote {}", p.display());
                }
            }
            let out = run_pds(&sc, &preps).map_err(|e| report(e, &pds_dir(&cli.out)))?;
            for p in write_pds(&pds_dir(&cli.out), &out)? {
                println!("wrote {}", p.display());
            }
            println!("pre-dispatch objective: {}", out.objective());
            Ok(0)
        }
        Command::Ets { scenario, case } => {
            let sc = load(scenario)?;
            let preps = prepare(&sc)?;
            let roles_path = pds_dir(&cli.out).join("roles.csv");
            let roles = if roles_path.exists() {
                log::info!("using roles from {}", roles_path.display());
                read_roles(&roles_path)?
            } else {
                let pds = run_pds(&sc, &preps).map_err(|e| report(e, &pds_dir(&cli.out)))?;
                write_pds(&pds_dir(&cli.out), &pds)?;
                pds.roles
            };
            if roles.entries.len() != preps.len() {
                return Err(RunError::Model(mmg_core::Error::Schema(format!(
                    "{} lists {} microgrids, scenario has {}",
                    roles_path.display(),
                    roles.entries.len(),
                    preps.len()
                ))));
            }
            let dir = cli.out.join(case.to_string());
            let out = run_ets(&sc, &preps, &roles, *case).map_err(|e| report(e, &dir))?;
            for p in write_ets(&dir, &out)? {
                println!("wrote {}", p.display());
            }
            println!("{case} objective: {}", out.objective());
            Ok(0)
        }
        Command::Suite { scenario } => {
            let sc = load(scenario)?;
            let out = run_suite(&sc).map_err(|e| report(e, &cli.out))?;
            let files = write_suite(&cli.out, &out)?;
            print!("{}", format_suite(&out.report));
            println!("{} files written under {}", files.len(), cli.out.display());
            Ok(if out.report.all_pass() {
                0
            } else {
                CHECKS_FAILED
            })
        }
        Command::Validate { scenario } => {
            let sc = load(scenario)?;
            println!("{}: {} microgrids", sc.name, sc.microgrids.len());
            for line in validate(&sc)? {
                println!("{line}");
            }
            Ok(0)
        }
        Command::Benchmark => {
            print!("{}", Scenario::benchmark_source());
            Ok(0)
        }
    }
}

fn report(err: RunError, dir: &Path) -> RunError {
    match write_infeasibility(dir, &err) {
        Ok(Some(p)) => eprintln!("infeasibility report written to {}", p.display()),
        Ok(None) => {}
        Err(e) => eprintln!("could not write infeasibility report: {e}"),
    }
    err
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
