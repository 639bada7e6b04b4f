//! Datasets of projected trajectories, the rollout loss, Adam and evaluation.
//!
//! The loss of one trajectory is the mean over its samples of the squared
//! Euclidean distance between rolled-out and target reduced coordinates:
//!
//! ```text
//! L = 1/(n_t+1) · Σ_i ‖α_T*(t_i) − α_T(t_i)‖²
//! ```
//!
//! Batches average the per-trajectory losses. Rollouts always start from the
//! projected initial snapshot with the memory at its fixed point.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closure::{ClosureParams, CoupledDynamics, Normalizer, UncorrectedDynamics};
use crate::error::{check_len, Error, Result};
use crate::fom::SnapshotSet;
use crate::galerkin::{eval_reduced_rhs, predict_velocity, ReducedOperators, VelocityMap};
use crate::linalg::Matrix;
use crate::odeint::{backward_checkpointed, integrate_forward, CheckpointPolicy, TimeGrid};
use crate::pod::{project, PodBasis};
use crate::signals::{evaluate_signal, ControlCoeffs, ControlSignal};

/// Stream of the seeded generator used to split the dataset.
const SPLIT_STREAM: u64 = 1;
/// Stream used to shuffle the training trajectories each epoch.
const SHUFFLE_STREAM: u64 = 2;

/// One trajectory in reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Position of the trajectory in the generated dataset.
    pub index: usize,
    pub coeffs: ControlCoeffs,
    pub times: Vec<f64>,
    /// `n_s × n_T`: projected snapshot `i` in row `i`.
    pub targets: Matrix,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Memory input `[α_T*(t_0), S(t_0)]` at the start of the trajectory.
    pub fn initial_memory_input(&self) -> Vec<f64> {
        let mut x = self.targets.row(0).to_vec();
        x.push(evaluate_signal(&self.coeffs, self.times[0]));
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomDataset {
    pub train: Vec<TrajectoryRecord>,
    pub test: Vec<TrajectoryRecord>,
}

impl RomDataset {
    pub fn n_t(&self) -> usize {
        self.train[0].targets.cols()
    }
}

/// Projects every trajectory, shuffles their order with `seed` and puts the
/// first `⌈split_fraction·N⌉` in the training split.
pub fn build_dataset(
    snapshot_sets: &[SnapshotSet],
    basis_t: &PodBasis,
    split_fraction: f64,
    seed: u64,
) -> Result<RomDataset> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "build_dataset: split fraction must lie in (0, 1), got {split_fraction}"
        )));
    }
    let n = snapshot_sets.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "build_dataset: need at least 2 trajectories, got {n}"
        )));
    }
    let n_train = (split_fraction * n as f64).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "build_dataset: split {split_fraction} of {n} trajectories leaves one side empty"
        )));
    }

    let mut records = Vec::with_capacity(n);
    for (index, set) in snapshot_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("build_dataset: trajectory {index} has no snapshots")));
        }
        check_len("build_dataset (snapshot width)", basis_t.n_c(), set.temps.cols())?;
        let rows = (0..set.len())
            .map(|i| project(basis_t, set.temps.row(i)))
            .collect::<Result<Vec<_>>>()?;
        records.push(TrajectoryRecord {
            index,
            coeffs: set.coeffs,
            times: set.times.clone(),
            targets: Matrix::from_rows(&rows)?,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    records.shuffle(&mut rng);
    let test = records.split_off(n_train);
    Ok(RomDataset { train: records, test })
}

/// `1/(n_t+1) · Σ_i ‖predicted_i − target_i‖²` over the rows.
pub fn trajectory_loss(predicted: &Matrix, target: &Matrix) -> Result<f64> {
    check_shapes("trajectory_loss", predicted, target)?;
    if target.rows() == 0 {
        return Err(Error::InvalidArgument("trajectory_loss: empty trajectory".into()));
    }
    Ok(squared_distance(predicted, target) / target.rows() as f64)
}

/// RMSE over all entries divided by the population standard deviation of `target`.
pub fn nrmse(predicted: &Matrix, target: &Matrix) -> Result<f64> {
    check_shapes("nrmse", predicted, target)?;
    let n = target.as_slice().len();
    if n == 0 {
        return Err(Error::InvalidArgument("nrmse: empty trajectory".into()));
    }
    let mean = target.as_slice().iter().sum::<f64>() / n as f64;
    let var = target.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidArgument("nrmse: target has zero variance".into()));
    }
    Ok((squared_distance(predicted, target) / n as f64).sqrt() / var.sqrt())
}

fn check_shapes(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    check_len(context, b.rows(), a.rows())?;
    check_len(context, b.cols(), a.cols())
}

fn squared_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    check_len("adam_step (grads)", params.len(), grads.len())?;
    check_len("adam_step (first moment)", params.len(), state.m.len())?;
    check_len("adam_step (second moment)", params.len(), state.v.len())?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Rescales `grads` so its Euclidean norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = crate::linalg::norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Integration settings for reduced rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutSettings {
    pub dt: f64,
    /// Integration steps between consecutive snapshots.
    pub sample_stride: usize,
    pub checkpoint: CheckpointPolicy,
}

impl Default for RolloutSettings {
    fn default() -> Self {
        // On the default surrogate, dt = 0.05 puts the fastest advective mode
        // outside the RK4 stability region once S exceeds about 2.4.
        Self {
            dt: 0.025,
            sample_stride: 10,
            checkpoint: CheckpointPolicy { segment_length: 32 },
        }
    }
}

impl RolloutSettings {
    /// Grid covering the first `n_samples` snapshots of `record`, after checking
    /// that the snapshot spacing is `sample_stride·dt`.
    pub fn grid_for(&self, record: &TrajectoryRecord, n_samples: usize) -> Result<TimeGrid> {
        if n_samples == 0 || n_samples > record.len() {
            return Err(Error::InvalidArgument(format!(
                "rollout of {n_samples} samples requested from a trajectory with {}",
                record.len()
            )));
        }
        let spacing = self.dt * self.sample_stride as f64;
        for (i, t) in record.times.iter().enumerate() {
            let expected = record.times[0] + i as f64 * spacing;
            if (t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "snapshot {i} at t = {t} is off the rollout grid (spacing {spacing})"
                )));
            }
        }
        let grid = TimeGrid {
            t0: record.times[0],
            dt: self.dt,
            n_steps: (n_samples - 1) * self.sample_stride,
            sample_stride: self.sample_stride,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// α_T samples (rows) of the closure-corrected rollout of `record`.
pub fn rollout_corrected(
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    record: &TrajectoryRecord,
    n_samples: usize,
    settings: &RolloutSettings,
) -> Result<Matrix> {
    let grid = settings.grid_for(record, n_samples)?;
    simulate_corrected(closure, rom, vmap, &record.coeffs, record.targets.row(0), &grid)
}

/// α_T samples of the corrected model driven by `signal` from `alpha_t0`,
/// with the memory starting at its fixed point.
pub fn simulate_corrected(
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    signal: &dyn ControlSignal,
    alpha_t0: &[f64],
    grid: &TimeGrid,
) -> Result<Matrix> {
    let dynamics = CoupledDynamics::new(closure, rom, vmap, signal)?;
    check_len("simulate_corrected (alpha_T0)", rom.n_t(), alpha_t0.len())?;
    let z0 = dynamics.initial_state(alpha_t0, grid.t0)?.to_flat();
    let pass = integrate_forward(&dynamics, &z0, grid, &CheckpointPolicy::single(grid))?;
    let n_t = rom.n_t();
    let rows: Vec<Vec<f64>> = pass.samples.iter().map(|z| z[..n_t].to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// α_T samples of the rollout without any closure term.
pub fn rollout_uncorrected(
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    record: &TrajectoryRecord,
    n_samples: usize,
    settings: &RolloutSettings,
) -> Result<Matrix> {
    let grid = settings.grid_for(record, n_samples)?;
    simulate_uncorrected(rom, vmap, &record.coeffs, record.targets.row(0), &grid)
}

pub fn simulate_uncorrected(
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    signal: &dyn ControlSignal,
    alpha_t0: &[f64],
    grid: &TimeGrid,
) -> Result<Matrix> {
    let dynamics = UncorrectedDynamics::new(rom, vmap, signal)?;
    check_len("simulate_uncorrected (alpha_T0)", rom.n_t(), alpha_t0.len())?;
    let pass = integrate_forward(&dynamics, alpha_t0, grid, &CheckpointPolicy::single(grid))?;
    Matrix::from_rows(&pass.samples)
}

/// Loss of the corrected rollout over the first `n_samples` snapshots and
/// its exact gradient w.r.t. the flat closure parameters.
///
/// The memory starts at `x̃0 / λ`, so the decay parameters also reach the
/// loss through the initial state; that path is included.
pub fn rollout_loss_and_gradient(
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    record: &TrajectoryRecord,
    n_samples: usize,
    settings: &RolloutSettings,
) -> Result<(f64, Vec<f64>)> {
    let grid = settings.grid_for(record, n_samples)?;
    let dynamics = CoupledDynamics::new(closure, rom, vmap, &record.coeffs)?;
    let init = dynamics.initial_state(record.targets.row(0), grid.t0)?;
    let z0 = init.to_flat();
    let pass = integrate_forward(&dynamics, &z0, &grid, &settings.checkpoint)?;

    let n_t = rom.n_t();
    let scale = 1.0 / n_samples as f64;
    let mut loss = 0.0;
    let mut cotangents = Vec::with_capacity(n_samples);
    for (i, z) in pass.samples.iter().enumerate() {
        let mut c = vec![0.0; z.len()];
        for j in 0..n_t {
            let d = z[j] - record.targets[(i, j)];
            loss += d * d;
            c[j] = 2.0 * scale * d;
        }
        cotangents.push(c);
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { t: grid.time(grid.n_steps) });
    }

    let grads = backward_checkpointed(&dynamics, &grid, &settings.checkpoint, &pass.checkpoints, &cotangents)?;
    let mut grad = grads.grad_params;
    let theta_offset = closure.mlp.num_params();
    for (c, y0) in init.y.iter().enumerate() {
        grad[theta_offset + c] -= grads.grad_z0[n_t + c] * y0;
    }
    Ok((loss, grad))
}

/// Loss of the corrected rollout over the first `n_samples` snapshots.
pub fn rollout_loss(
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    record: &TrajectoryRecord,
    n_samples: usize,
    settings: &RolloutSettings,
) -> Result<f64> {
    let predicted = rollout_corrected(closure, rom, vmap, record, n_samples, settings)?;
    let target = head_rows(&record.targets, n_samples)?;
    trajectory_loss(&predicted, &target)
}

fn head_rows(m: &Matrix, n: usize) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// Per-feature standardization of the network inputs and a per-mode output
/// scale, frozen from the training split.
///
/// Inputs `(α_T, α_u, S)` use the mean and population std over all training
/// snapshots. A memory channel with rate `λ` integrates its input over a
/// window of length `1/λ`, so its statistics are those of the input divided
/// by `λ`. Outputs are left uncentered and scaled by the RMS of the part of
/// `dα_T*/dt` that the reduced operators do not explain, estimated by central
/// differences between snapshots.
pub fn fit_normalizer(
    dataset: &RomDataset,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    closure: &ClosureParams,
) -> Result<Normalizer> {
    let n_t = rom.n_t();
    let n_u = rom.n_u();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut residual_sq = vec![0.0; n_t];
    let mut residual_count = 0usize;
    for rec in &dataset.train {
        check_len("fit_normalizer (record n_T)", n_t, rec.targets.cols())?;
        for i in 0..rec.len() {
            let alpha = rec.targets.row(i);
            let s = evaluate_signal(&rec.coeffs, rec.times[i]);
            let au = predict_velocity(vmap, alpha, s)?;
            let mut f = alpha.to_vec();
            f.extend_from_slice(&au);
            f.push(s);
            features.push(f);
            if i > 0 && i + 1 < rec.len() {
                let dt = rec.times[i + 1] - rec.times[i - 1];
                let r = eval_reduced_rhs(alpha, &au, rom)?;
                for j in 0..n_t {
                    let d = (rec.targets[(i + 1, j)] - rec.targets[(i - 1, j)]) / dt - r[j];
                    residual_sq[j] += d * d;
                }
                residual_count += 1;
            }
        }
    }
    let width = n_t + n_u + 1;
    let n = features.len() as f64;
    let mut mean = vec![0.0; width];
    let mut std = vec![0.0; width];
    for k in 0..width {
        mean[k] = features.iter().map(|f| f[k]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n;
        std[k] = var.sqrt();
    }

    let memory = &closure.memory;
    let mut input_shift = mean.clone();
    let mut input_scale = std.clone();
    for (c, rate) in memory.rates().iter().enumerate() {
        // memory input i is α_T[i] for i < n_T, then S
        let i = c % memory.input_dim;
        let k = if i < n_t { i } else { n_t + n_u };
        input_shift.push(mean[k] / rate);
        input_scale.push(std[k] / rate);
    }
    let floor = input_scale.iter().cloned().fold(0.0, f64::max) * 1e-12;
    for s in &mut input_scale {
        if !(*s > floor) {
            *s = 1.0;
        }
    }
    let output_scale = residual_sq
        .iter()
        .map(|s| {
            let rms = (s / residual_count.max(1) as f64).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let norm = Normalizer {
        input_shift,
        input_scale,
        output_shift: vec![0.0; n_t],
        output_scale,
    };
    norm.validate(closure.mlp.input_width(), n_t)?;
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    /// Snapshots per rollout in the first stage.
    pub start: usize,
    /// Epochs per stage; the rollout length doubles at each new stage.
    pub every: usize,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { start: 16, every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Trajectories per batch.
    pub batch_size: usize,
    /// Fixed rollout length in snapshots; `None` uses whole trajectories.
    pub rollout_length: Option<usize>,
    /// Short-to-long rollouts; overrides `rollout_length` when set.
    pub curriculum: Option<Curriculum>,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 500,
            batch_size: 4,
            rollout_length: None,
            curriculum: None,
            clip_norm: 100.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::InvalidArgument(format!(
                "batch_size must lie in 1..={n_train}, got {}",
                self.batch_size
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if self.rollout_length == Some(0) {
            return Err(Error::InvalidArgument("rollout_length must be >= 1".into()));
        }
        if let Some(c) = self.curriculum {
            if c.start == 0 || c.every == 0 {
                return Err(Error::InvalidArgument(format!("invalid curriculum {c:?}")));
            }
        }
        Ok(())
    }

    /// Snapshots per rollout at `epoch`, capped by the trajectory length.
    pub fn rollout_samples(&self, epoch: usize, trajectory_len: usize) -> usize {
        let wanted = match (self.curriculum, self.rollout_length) {
            (Some(c), _) => {
                let doublings = (epoch / c.every).min(usize::BITS as usize - 1) as u32;
                c.start.saturating_mul(1usize << doublings)
            }
            (None, Some(l)) => l,
            (None, None) => trajectory_len,
        };
        wanted.min(trajectory_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, at the parameters each batch saw.
    pub train_loss: f64,
    /// Mean whole-trajectory loss over the test split after the epoch.
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ClosureParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Mean whole-trajectory loss of the corrected model over `records`.
pub fn mean_rollout_loss(
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    records: &[TrajectoryRecord],
    settings: &RolloutSettings,
) -> Result<f64> {
    let losses = records
        .par_iter()
        .map(|r| rollout_loss(closure, rom, vmap, r, r.len(), settings))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean whole-trajectory loss of the uncorrected model over `records`.
pub fn mean_uncorrected_loss(
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    records: &[TrajectoryRecord],
    settings: &RolloutSettings,
) -> Result<f64> {
    let losses = records
        .par_iter()
        .map(|r| trajectory_loss(&rollout_uncorrected(rom, vmap, r, r.len(), settings)?, &r.targets))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Adam on the batch-mean rollout loss. Per-trajectory work runs in
/// parallel; losses and gradients are summed in batch order so the result
/// does not depend on scheduling.
///
/// `on_epoch` sees each history record as soon as it is complete.
pub fn train_closure(
    dataset: &RomDataset,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    init: &ClosureParams,
    config: &TrainConfig,
    settings: &RolloutSettings,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate(dataset.train.len())?;
    init.validate(rom.n_u())?;
    if dataset.test.is_empty() {
        return Err(Error::InvalidArgument("train_closure: empty validation split".into()));
    }
    let started = Instant::now();
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut best: Option<(f64, usize, ClosureParams)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&k| {
                    let rec = &dataset.train[k];
                    let n = config.rollout_samples(epoch, rec.len());
                    rollout_loss_and_gradient(&params, rom, vmap, rec, n, settings)
                })
                .collect::<Vec<Result<(f64, Vec<f64>)>>>();
            let mut loss = 0.0;
            let mut grad = vec![0.0; flat.len()];
            for r in results {
                let (l, g) = r.map_err(|e| if e.is_numerical() { Error::Diverged { epoch } } else { e })?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            loss *= inv;
            grad.iter_mut().for_each(|g| *g *= inv);
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            clip_global_norm(&mut grad, config.clip_norm);
            adam_step(&mut flat, &grad, &mut adam, &config.adam)?;
            params.set_flat(&flat)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;
        let val_loss = mean_rollout_loss(&params, rom, vmap, &dataset.test, settings)
            .map_err(|e| if e.is_numerical() { Error::Diverged { epoch } } else { e })?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }

    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome {
            params: p,
            best_epoch: Some(epoch),
            history,
        },
        None => TrainOutcome {
            params: init.clone(),
            best_epoch: None,
            history,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEval {
    pub index: usize,
    pub times: Vec<f64>,
    pub truth: Matrix,
    pub corrected: Matrix,
    pub uncorrected: Matrix,
    pub nrmse_corrected: f64,
    pub nrmse_uncorrected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub trajectories: Vec<TrajectoryEval>,
    pub mean_nrmse_corrected: f64,
    pub mean_nrmse_uncorrected: f64,
}

/// Whole-trajectory rollouts with and without the closure. With `closure =
/// None` the corrected columns repeat the uncorrected rollout.
pub fn evaluate_model(
    records: &[TrajectoryRecord],
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    closure: Option<&ClosureParams>,
    settings: &RolloutSettings,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("evaluate_model: no trajectories".into()));
    }
    let trajectories = records
        .par_iter()
        .map(|rec| {
            let uncorrected = rollout_uncorrected(rom, vmap, rec, rec.len(), settings)?;
            let corrected = match closure {
                Some(c) => rollout_corrected(c, rom, vmap, rec, rec.len(), settings)?,
                None => uncorrected.clone(),
            };
            Ok(TrajectoryEval {
                index: rec.index,
                times: rec.times.clone(),
                nrmse_corrected: nrmse(&corrected, &rec.targets)?,
                nrmse_uncorrected: nrmse(&uncorrected, &rec.targets)?,
                truth: rec.targets.clone(),
                corrected,
                uncorrected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = trajectories.len() as f64;
    Ok(EvalReport {
        mean_nrmse_corrected: trajectories.iter().map(|t| t.nrmse_corrected).sum::<f64>() / n,
        mean_nrmse_uncorrected: trajectories.iter().map(|t| t.nrmse_uncorrected).sum::<f64>() / n,
        trajectories,
    })
}
