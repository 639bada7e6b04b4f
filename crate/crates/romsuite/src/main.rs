use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use romsuite::commands::{self, SimulateInput};
use romsuite::{AppError, AppResult, WorkspaceConfig};

#[derive(Parser)]
#[command(name = "romsuite", version, about = "Reduced-order models with a learned memory closure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Workspace configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the full-order model for every sampled control signal.
    Generate,
    /// Build the temperature and velocity POD bases.
    Pod,
    /// Project the operators and fit the velocity map.
    BuildRom,
    /// Train the closure.
    Train,
    /// Compare corrected and uncorrected rollouts on both splits.
    Eval,
    /// Roll out the corrected model for new control signals.
    Simulate {
        /// Number of signals sampled from the configured distribution.
        #[arg(long, conflicts_with = "coeffs")]
        batch: Option<usize>,
        /// JSON file with one `{"c0": …, "c": [..]}` object or an array of them.
        #[arg(long)]
        coeffs: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> AppResult<()> {
    let path = cli
        .config
        .ok_or_else(|| AppError::Validation("--config <path> is required".into()))?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = WorkspaceConfig::load(&path, &overrides)?;
    let summary = match cli.command {
        Command::Generate => serde_json::to_string(&commands::cmd_generate(&cfg)?),
        Command::Pod => serde_json::to_string(&commands::cmd_pod(&cfg)?),
        Command::BuildRom => serde_json::to_string(&commands::cmd_build_rom(&cfg)?),
        Command::Train => serde_json::to_string(&commands::cmd_train(&cfg)?),
        Command::Eval => serde_json::to_string(&commands::cmd_eval(&cfg)?),
        Command::Simulate { batch, coeffs } => {
            let input = match (batch, coeffs) {
                (_, Some(p)) => SimulateInput::File(p),
                (Some(n), None) => SimulateInput::Sampled(n),
                (None, None) => return Err(AppError::Validation("simulate needs --batch N or --coeffs <file>".into())),
            };
            let s = commands::cmd_simulate(&cfg, &input)?;
            println!(
                "simulated {} trajectories in {:.3} s ({:.1} trajectories/s)",
                s.n_trajectories, s.wall_seconds, s.trajectories_per_second
            );
            serde_json::to_string(&s)
        }
    };
    println!("{}", summary.expect("summaries serialize"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
