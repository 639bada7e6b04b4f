//! On-disk layout of a workspace and the artifacts passed between stages.

use std::fs;
use std::path::{Path, PathBuf};

use romsuite_core::array_io::{read_array, read_json, write_array, write_json};
use romsuite_core::closure::{ClosureParams, MemoryParams, MlpParams, Normalizer};
use romsuite_core::fom::{load_snapshots, PhysicalParams, SnapshotSet, TimeSettings};
use romsuite_core::linalg::Matrix;
use romsuite_core::signals::{CoeffRecord, SignalSpec};
use serde::{Deserialize, Serialize};

use crate::config::WorkspaceConfig;
use crate::error::{io_err, AppError, AppResult};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const ENERGY_REPORT: &str = "energy_report.json";
pub const ROM_REPORT: &str = "rom.json";
pub const CLOSURE_FILE: &str = "closure.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const SIMULATE_REPORT: &str = "simulate.json";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn trajectory(&self, index: usize) -> PathBuf {
        self.dataset().join(trajectory_dir_name(index))
    }

    pub fn basis(&self) -> PathBuf {
        self.root.join("basis")
    }

    pub fn basis_t(&self) -> PathBuf {
        self.basis().join("T")
    }

    pub fn basis_u(&self) -> PathBuf {
        self.basis().join("u")
    }

    pub fn rom(&self) -> PathBuf {
        self.root.join("rom")
    }

    pub fn closure(&self) -> PathBuf {
        self.root.join("closure")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn simulate(&self) -> PathBuf {
        self.root.join("simulate")
    }

    /// Fails with the artifact's name and the stage producing it unless `path` exists.
    pub fn require(&self, path: PathBuf, artifact: &'static str, stage: &'static str) -> AppResult<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(AppError::MissingArtifact { artifact, path, stage })
        }
    }
}

pub fn trajectory_dir_name(index: usize) -> String {
    format!("traj_{index:03}")
}

/// Replaces `dir` with an empty directory holding the effective config.
pub fn fresh_output_dir(dir: &Path, cfg: &WorkspaceConfig) -> AppResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(format!("clearing {}", dir.display())))?;
    }
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_toml()).map_err(io_err(format!("writing config into {}", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dir: String,
    pub n_snapshots: usize,
    pub coeffs: CoeffRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_c: usize,
    pub params: PhysicalParams,
    pub time: TimeSettings,
    pub signals: SignalSpec,
    pub trajectories: Vec<DatasetEntry>,
}

pub fn load_dataset(layout: &Layout) -> AppResult<(DatasetManifest, Vec<SnapshotSet>)> {
    let path = layout.require(layout.dataset().join(DATASET_MANIFEST), "dataset manifest", "generate")?;
    let manifest: DatasetManifest = read_json(&path)?;
    let mut sets = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let (set, n_c) = load_snapshots(&layout.dataset().join(&entry.dir))?;
        if n_c != manifest.n_c {
            return Err(AppError::Validation(format!(
                "{}: grid size {n_c} differs from the manifest's {}",
                entry.dir, manifest.n_c
            )));
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(AppError::Validation("dataset manifest lists no trajectories".into()));
    }
    Ok((manifest, sets))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureFile {
    pub n_t: usize,
    pub n_u: usize,
    pub widths: Vec<usize>,
    pub memory: MemoryParams,
    pub normalizer: Normalizer,
    pub num_params: usize,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub uncorrected_train_loss: f64,
    pub best_val_loss: Option<f64>,
    pub train_trajectories: Vec<usize>,
    pub test_trajectories: Vec<usize>,
}

pub fn save_closure(dir: &Path, meta: &ClosureFile, params: &ClosureParams) -> AppResult<()> {
    write_json(&dir.join(CLOSURE_FILE), meta)?;
    let flat = params.to_flat();
    write_array(&dir.join(WEIGHTS_FILE), &Matrix::from_vec(1, flat.len(), flat)?)?;
    Ok(())
}

pub fn load_closure(layout: &Layout) -> AppResult<(ClosureFile, ClosureParams)> {
    let path = layout.require(layout.closure().join(CLOSURE_FILE), "trained closure", "train")?;
    let meta: ClosureFile = read_json(&path)?;
    let weights = read_array(&layout.require(layout.closure().join(WEIGHTS_FILE), "closure weights", "train")?)?;
    let mut params = ClosureParams {
        mlp: MlpParams::zeros(&meta.widths),
        memory: meta.memory.clone(),
        normalizer: meta.normalizer.clone(),
    };
    if weights.rows() != 1 || weights.cols() != params.num_params() {
        return Err(AppError::Validation(format!(
            "{WEIGHTS_FILE} holds {}x{} values, the closure needs 1x{}",
            weights.rows(),
            weights.cols(),
            params.num_params()
        )));
    }
    params.set_flat(weights.as_slice())?;
    params.validate(meta.n_u)?;
    Ok((meta, params))
}
