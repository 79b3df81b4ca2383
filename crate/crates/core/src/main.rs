use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use catw::cli::{self, CliError, ExperimentConfig, SWEEP_AXES};
use catw::hamiltonians::SystemParams;

#[derive(Parser)]
#[command(name = "catw", version, about = "Cat-encoded W-state transfer through a driven qutrit")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write a results table plus manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trajectory seed, overriding solver.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat a scenario over values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of g_cr, kappa, alpha, omega_fe, dt, drive.
        #[arg(long)]
        axis: String,
        /// Comma-separated values in the axis units.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify Hamiltonian structure, solver health and the ideal transfer.
    Check {
        /// Two pairs and fewer sample times.
        #[arg(long)]
        fast: bool,
        /// Check the parameters of this config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(args: Args) -> Result<(), CliError> {
    cli::init_threads()?;
    match args.command {
        Command::Run { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let o = cli::run(&cfg, out.as_deref(), seed)?;
            let s = &o.manifest.summary;
            println!("peak fidelity {:.6} at t/T = {:.4}", s.peak_fidelity, s.peak_t_over_t);
            if let Some(f) = s.fidelity_at_t {
                println!("fidelity at T  {f:.6}");
            }
            if let Some(path) = &o.manifest.results_file {
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep { config, axis, values, out, seed } => {
            if !SWEEP_AXES.iter().any(|(a, _)| *a == axis) {
                let known: Vec<String> = SWEEP_AXES.iter().map(|(a, u)| format!("{a} ({u})")).collect();
                return Err(CliError::Config(format!("unknown axis '{axis}'; known axes: {}", known.join(", "))));
            }
            let cfg = ExperimentConfig::load(&config)?;
            let m = cli::sweep(&cfg, &axis, &cli::parse_values(&values)?, out.as_deref(), seed)?;
            println!("{:>14} {:>12} {:>10} {:>12}", axis, "max F", "t/T", "F(T)");
            for r in &m.rows {
                let at_t = r.fidelity_at_t.map_or("-".to_string(), |f| format!("{f:.6}"));
                println!("{:>14.6e} {:>12.6} {:>10.4} {:>12}", r.value, r.max_fidelity, r.argmax_t_over_t, at_t);
            }
        }
        Command::Check { fast, config } => {
            let params = match config {
                Some(path) => ExperimentConfig::load(&path)?.resolved()?.params()?,
                None => SystemParams::defaults(3),
            };
            let report = cli::run_checks(&params, fast);
            for item in &report.items {
                println!("{} {}: {}", if item.passed { "PASS" } else { "FAIL" }, item.name, item.detail);
            }
            if !report.passed() {
                return Err(CliError::Verification(format!("{} check(s) failed", report.failures().count())));
            }
        }
    }
    Ok(())
}
