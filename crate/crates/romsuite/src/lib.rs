//! The `romsuite` pipeline: every subcommand as a library function over a
//! workspace directory, so the binary stays a thin argument parser.
//!
//! ```text
//! workspace/
//!   dataset/   traj_000/{meta.json,temps.bin,vels.bin} … dataset.json
//!   basis/     T/ u/ energy_report.json
//!   rom/       operators, velocity map, rom.json
//!   closure/   closure.json weights.bin history.csv
//!   eval/      eval.json mode_k.csv traj_XXX/mode_k.csv
//!   simulate/  traj_XXXX.csv simulate.json
//! ```
//!
//! Every output directory also receives the effective `config.toml`.

pub mod commands;
pub mod config;
pub mod error;
pub mod workspace;

pub use config::WorkspaceConfig;
pub use error::{AppError, AppResult};
