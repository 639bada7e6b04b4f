//! The workspace configuration file and its command-line overrides.

use std::path::{Path, PathBuf};

use romsuite_core::closure::ClosureConfig;
use romsuite_core::fom::{Grid1D, PhysicalParams, TimeSettings};
use romsuite_core::odeint::CheckpointPolicy;
use romsuite_core::signals::SignalSpec;
use romsuite_core::training::{AdamConfig, Curriculum, RolloutSettings, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    /// Master seed for signal sampling, the data split, network initialization and batch order.
    pub seed: u64,
    pub paths: PathsSection,
    pub fom: FomSection,
    pub signals: SignalsSection,
    pub pod: PodSection,
    pub rom: RomSection,
    pub closure: ClosureSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Workspace root. Relative paths are taken from the config file's directory.
    pub workspace: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FomSection {
    pub n_c: usize,
    pub t_end: f64,
    pub dt: f64,
    pub snap_every: f64,
    pub diffusivity: f64,
    pub eta0: f64,
    pub beta: f64,
    pub channel_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsSection {
    pub n_trajectories: usize,
    pub mean_loc: f64,
    pub mean_scale: f64,
    pub amp_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodSection {
    pub n_t: usize,
    /// Upper bound on the velocity basis size; clamped to the numerical rank of the data.
    pub n_u: usize,
    pub energy_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomSection {
    pub ridge_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Debug: use the identity as temperature basis, so the reduced operators are the raw stencils.
    pub identity_basis: bool,
    pub dt: f64,
    pub sample_stride: usize,
    pub segment_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureSection {
    pub hidden: Vec<usize>,
    pub horizons: usize,
    pub min_timescale: f64,
    pub max_timescale: f64,
    pub output_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub split_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Snapshots per rollout; 0 means whole trajectories.
    pub rollout_length: usize,
    pub curriculum: bool,
    pub curriculum_start: usize,
    pub curriculum_every: usize,
    pub clip_norm: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: PathsSection::default(),
            fom: FomSection::default(),
            signals: SignalsSection::default(),
            pod: PodSection::default(),
            rom: RomSection::default(),
            closure: ClosureSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
        }
    }
}

impl Default for FomSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        let t = TimeSettings::default();
        Self {
            n_c: 256,
            t_end: t.t_end,
            dt: t.dt,
            snap_every: t.snap_every,
            diffusivity: p.diffusivity,
            eta0: p.eta0,
            beta: p.beta,
            channel_min: p.channel_min,
        }
    }
}

impl Default for SignalsSection {
    fn default() -> Self {
        let s = SignalSpec::default();
        Self {
            n_trajectories: 20,
            mean_loc: s.mean_loc,
            mean_scale: s.mean_scale,
            amp_scale: s.amp_scale,
        }
    }
}

impl Default for PodSection {
    fn default() -> Self {
        Self {
            n_t: 6,
            n_u: 4,
            energy_threshold: 0.95,
        }
    }
}

impl Default for RomSection {
    fn default() -> Self {
        let r = RolloutSettings::default();
        Self {
            ridge_grid: vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
            cv_folds: 5,
            identity_basis: false,
            dt: r.dt,
            sample_stride: r.sample_stride,
            segment_length: r.checkpoint.segment_length,
        }
    }
}

impl Default for ClosureSection {
    fn default() -> Self {
        let c = ClosureConfig::default();
        Self {
            hidden: c.hidden,
            horizons: c.horizons,
            min_timescale: c.min_timescale,
            max_timescale: c.max_timescale,
            output_gain: c.output_gain,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = Curriculum::default();
        Self {
            split_fraction: 0.8,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            rollout_length: 0,
            curriculum: false,
            curriculum_start: c.start,
            curriculum_every: c.every,
            clip_norm: t.clip_norm,
        }
    }
}

impl WorkspaceConfig {
    /// Reads `path`, applies `key=value` overrides (dotted keys, TOML values)
    /// and resolves the workspace path against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| AppError::Validation(format!("config {}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: WorkspaceConfig = table
            .try_into()
            .map_err(|e| AppError::Validation(format!("config {}: {e}", path.display())))?;
        if cfg.paths.workspace.is_relative() {
            let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            cfg.paths.workspace = base.join(&cfg.paths.workspace);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> AppResult<()> {
        let invalid = |m: String| Err(AppError::Validation(m));
        self.physical().validate()?;
        self.signal_spec().validate()?;
        Grid1D::new(self.fom.n_c)?;
        let f = &self.fom;
        if !(f.dt > 0.0 && f.snap_every > 0.0 && f.t_end >= 0.0) {
            return invalid(format!("fom: need dt > 0, snap_every > 0, t_end >= 0, got {f:?}"));
        }
        if self.signals.n_trajectories == 0 {
            return invalid("signals.n_trajectories must be >= 1".into());
        }
        if self.pod.n_t == 0 || self.pod.n_u == 0 {
            return invalid("pod.n_t and pod.n_u must be >= 1".into());
        }
        if !(self.pod.energy_threshold > 0.0 && self.pod.energy_threshold <= 1.0) {
            return invalid(format!("pod.energy_threshold must lie in (0, 1], got {}", self.pod.energy_threshold));
        }
        let r = &self.rom;
        if r.ridge_grid.is_empty() || r.ridge_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return invalid(format!("rom.ridge_grid must be non-empty and positive, got {:?}", r.ridge_grid));
        }
        if r.cv_folds < 2 {
            return invalid(format!("rom.cv_folds must be >= 2, got {}", r.cv_folds));
        }
        if !(r.dt > 0.0) || r.sample_stride == 0 || r.segment_length == 0 {
            return invalid(format!("rom: need dt > 0, sample_stride >= 1, segment_length >= 1, got {r:?}"));
        }
        let spacing = r.dt * r.sample_stride as f64;
        if (spacing - f.snap_every).abs() > 1e-9 * f.snap_every {
            return invalid(format!(
                "rom.dt · rom.sample_stride = {spacing} must equal fom.snap_every = {}",
                f.snap_every
            ));
        }
        let c = &self.closure;
        if c.hidden.iter().any(|&w| w == 0) {
            return invalid(format!("closure.hidden widths must be >= 1, got {:?}", c.hidden));
        }
        if c.horizons > 0 && !(c.min_timescale > 0.0 && c.max_timescale >= c.min_timescale) {
            return invalid(format!(
                "closure timescales need 0 < min <= max, got {} and {}",
                c.min_timescale, c.max_timescale
            ));
        }
        let t = &self.train;
        if !(t.split_fraction > 0.0 && t.split_fraction < 1.0) {
            return invalid(format!("train.split_fraction must lie in (0, 1), got {}", t.split_fraction));
        }
        self.adam().validate()?;
        if t.batch_size == 0 || !(t.clip_norm > 0.0) {
            return invalid("train: need batch_size >= 1 and clip_norm > 0".into());
        }
        if t.curriculum && (t.curriculum_start == 0 || t.curriculum_every == 0) {
            return invalid("train: curriculum_start and curriculum_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn physical(&self) -> PhysicalParams {
        PhysicalParams {
            diffusivity: self.fom.diffusivity,
            eta0: self.fom.eta0,
            beta: self.fom.beta,
            channel_min: self.fom.channel_min,
        }
    }

    pub fn time_settings(&self) -> TimeSettings {
        TimeSettings {
            t_end: self.fom.t_end,
            dt: self.fom.dt,
            snap_every: self.fom.snap_every,
        }
    }

    pub fn signal_spec(&self) -> SignalSpec {
        SignalSpec {
            seed: self.seed,
            mean_loc: self.signals.mean_loc,
            mean_scale: self.signals.mean_scale,
            amp_scale: self.signals.amp_scale,
        }
    }

    pub fn rollout(&self) -> RolloutSettings {
        RolloutSettings {
            dt: self.rom.dt,
            sample_stride: self.rom.sample_stride,
            checkpoint: CheckpointPolicy {
                segment_length: self.rom.segment_length,
            },
        }
    }

    pub fn closure_config(&self) -> ClosureConfig {
        ClosureConfig {
            hidden: self.closure.hidden.clone(),
            horizons: self.closure.horizons,
            min_timescale: self.closure.min_timescale,
            max_timescale: self.closure.max_timescale,
            output_gain: self.closure.output_gain,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            adam: self.adam(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            rollout_length: (t.rollout_length > 0).then_some(t.rollout_length),
            curriculum: t.curriculum.then_some(Curriculum {
                start: t.curriculum_start,
                every: t.curriculum_every,
            }),
            clip_norm: t.clip_norm,
            seed: self.seed,
        }
    }
}

/// `section.key=value`; the value is parsed as TOML and kept as a bare string otherwise.
fn apply_override(table: &mut toml::Table, spec: &str) -> AppResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| AppError::Validation(format!("--set expects key=value, got {spec:?}")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(AppError::Validation(format!("--set: malformed key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| AppError::Validation(format!("--set: {s:?} in {key:?} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
