use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use superpulse::runner::{self, Plan, SCENARIO_NAMES};
use superpulse::{Error, Result};

/// Dissipative one-axis-twisting simulations: mean field, cumulant,
/// master equation and quantum trajectories.
#[derive(Parser, Debug)]
#[command(name = "superpulse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// List the built-in scenarios and exit.
    #[arg(long, global = true)]
    list_scenarios: bool,

    /// Output directory (overrides the config and SUPERPULSE_OUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed for the trajectory backend.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// ODE tolerance for every integration.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single configuration.
    Run { config: PathBuf },
    /// Run a parameter sweep over N and omega.
    Sweep { config: PathBuf },
    /// Run a built-in scenario.
    Scenario {
        name: Option<String>,
        /// Print the normalized scenario configuration instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Check a run or sweep configuration and print its normalized form.
    Validate { config: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
}

fn check_tol(tol: Option<f64>) -> Result<()> {
    match tol {
        Some(t) if !(t > 0.0 && t <= 1e-2) => Err(Error::Config(vec![format!("--tol: {t} outside (0, 1e-2]")])),
        _ => Ok(()),
    }
}

fn list() {
    for name in SCENARIO_NAMES {
        let s = runner::scenario(name).expect("listed scenario exists");
        println!("{name:18} {}", s.description);
    }
}

fn report(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn dispatch(cli: &Cli, command: &Command) -> Result<()> {
    check_tol(cli.tol)?;
    match command {
        Command::Run { config } => {
            let mut cfg = runner::validate_config(&read(config)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = cli.tol {
                cfg.tolerances.ode = t;
            }
            let (out, files) = runner::run(&cfg, cli.out.as_deref())?;
            report(&files);
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
            Ok(())
        }
        Command::Sweep { config } => {
            let mut cfg = runner::validate_sweep(&read(config)?)?;
            if let Some(s) = cli.seed {
                cfg.base.seed = s;
            }
            if let Some(t) = cli.tol {
                cfg.base.tolerances.ode = t;
            }
            let (out, files) = runner::sweep(&cfg, cli.out.as_deref())?;
            report(&files);
            for s in &out.slopes {
                println!("omega = {}: slope of {} = {:.4} ({} points)", s.omega, s.reduction, s.slope, s.points);
            }
            for p in out.points.iter().filter(|p| !p.ok()) {
                eprintln!(
                    "point N={} omega={} failed: {}",
                    p.n_atoms,
                    p.omega,
                    p.error.as_deref().unwrap_or("")
                );
            }
            if out.failures() > 0 {
                return Err(Error::SweepFailures(out.failures()));
            }
            Ok(())
        }
        Command::Scenario { name, print_config } => {
            let Some(name) = name else {
                list();
                return Ok(());
            };
            let mut s = runner::scenario(name).ok_or_else(|| {
                Error::Config(vec![format!(
                    "unknown scenario {name:?} (expected one of: {})",
                    SCENARIO_NAMES.join(", ")
                )])
            })?;
            s.override_with(cli.seed, cli.tol);
            if *print_config {
                println!("{}", serde_json::to_string_pretty(&s.to_json())?);
                return Ok(());
            }
            let dir = cli.out.clone().unwrap_or_else(runner::default_out_dir);
            if let Plan::Runs { runs, .. } = &s.plan {
                eprintln!("scenario {name}: {} run(s) into {}", runs.len(), dir.display());
            }
            let files = runner::run_scenario(&s, &dir)?;
            report(&files);
            Ok(())
        }
        Command::Validate { config } => {
            let text = read(config)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
            let normalized = if value.get("base").is_some() {
                runner::validate_sweep(&text)?.to_json_string()
            } else {
                runner::validate_config(&text)?.to_json_string()
            };
            println!("{normalized}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    if cli.list_scenarios {
        list();
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("error: no command given (try --help)");
        return ExitCode::from(2);
    };
    let result = dispatch(&cli, command);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(runner::exit_code(&result) as u8)
}
