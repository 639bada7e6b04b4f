//! One function per CLI subcommand. Each reads the artifacts of earlier
//! stages from the workspace, writes its own output directory and returns a
//! small summary for the console.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use romsuite_core::array_io::{read_json, write_json};
use romsuite_core::closure::ClosureParams;
use romsuite_core::fom::{linear_rhs_central, save_snapshots, simulate_fom, Grid1D, SnapshotSet};
use romsuite_core::galerkin::{
    build_reduced_operators, cross_validate_ridge, eval_reduced_rhs, fit_velocity_map, load_operators,
    load_velocity_map, save_operators, save_velocity_map, ReducedOperators, RidgeCvReport, VelocityMap,
    VelocitySample,
};
use romsuite_core::linalg::Matrix;
use romsuite_core::odeint::TimeGrid;
use romsuite_core::pod::{
    compute_pod, concat_columns, load_basis, project, residual_energy, save_basis, smallest_rank_for_energy,
    PodBasis, Truncation,
};
use romsuite_core::signals::{evaluate_signal, sample_record, CoeffRecord, ControlCoeffs};
use romsuite_core::training::{
    build_dataset, evaluate_model, fit_normalizer, mean_uncorrected_loss, simulate_corrected, train_closure,
    EvalReport, RomDataset, TrajectoryEval,
};
use romsuite_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::WorkspaceConfig;
use crate::error::{io_err, AppError, AppResult};
use crate::workspace::{
    fresh_output_dir, load_closure, load_dataset, save_closure, trajectory_dir_name, ClosureFile, DatasetEntry,
    DatasetManifest, Layout, DATASET_MANIFEST, ENERGY_REPORT, EVAL_FILE, HISTORY_FILE, ROM_REPORT,
    SIMULATE_REPORT,
};

/// Tolerance of the Galerkin spot check run by `build-rom`.
pub const GALERKIN_CHECK_TOL: f64 = 1e-11;

fn layout(cfg: &WorkspaceConfig) -> Layout {
    Layout::new(&cfg.paths.workspace)
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("[romsuite] {}", msg.as_ref());
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub n_trajectories: usize,
    pub n_snapshots: usize,
    pub wall_seconds: f64,
}

pub fn cmd_generate(cfg: &WorkspaceConfig) -> AppResult<GenerateSummary> {
    let started = Instant::now();
    let layout = layout(cfg);
    let grid = Grid1D::new(cfg.fom.n_c)?;
    let params = cfg.physical();
    let time = cfg.time_settings();
    let spec = cfg.signal_spec();
    let records: Vec<CoeffRecord> = (0..cfg.signals.n_trajectories as u64)
        .map(|i| sample_record(&spec, i))
        .collect();
    progress(format!("simulating {} trajectories on {} cells", records.len(), grid.n_c));

    let sets: Vec<Result<SnapshotSet, Error>> = records
        .par_iter()
        .map(|r| simulate_fom(&r.coeffs(), &grid, &params, &time))
        .collect();
    let mut ok = Vec::with_capacity(sets.len());
    for (index, s) in sets.into_iter().enumerate() {
        ok.push(s.map_err(|source| AppError::Trajectory { index, source })?);
    }

    fresh_output_dir(&layout.dataset(), cfg)?;
    let mut entries = Vec::with_capacity(ok.len());
    for (index, (set, record)) in ok.iter().zip(&records).enumerate() {
        save_snapshots(&layout.trajectory(index), set, &grid, &params)?;
        entries.push(DatasetEntry {
            dir: trajectory_dir_name(index),
            n_snapshots: set.len(),
            coeffs: *record,
        });
    }
    let manifest = DatasetManifest {
        n_c: grid.n_c,
        params,
        time,
        signals: spec,
        trajectories: entries,
    };
    write_json(&layout.dataset().join(DATASET_MANIFEST), &manifest)?;
    let summary = GenerateSummary {
        n_trajectories: ok.len(),
        n_snapshots: ok.first().map_or(0, |s| s.len()),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    progress(format!(
        "wrote {} trajectories of {} snapshots in {:.1} s",
        summary.n_trajectories, summary.n_snapshots, summary.wall_seconds
    ));
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub requested_rank: usize,
    pub rank: usize,
    /// Rank of the snapshot matrix above the relative cutoff.
    pub numerical_rank: usize,
    pub energy_captured: f64,
    pub threshold: f64,
    pub smallest_rank_for_threshold: usize,
    pub meets_threshold: bool,
    pub frobenius_sq: f64,
    /// `Σ_{i>r} σ_i²`
    pub tail_energy: f64,
    /// `‖X − VVᵀX‖_F²`, computed directly.
    pub residual_energy: f64,
    /// `|residual − tail| / ‖X‖_F²`
    pub identity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub temperature: BasisReport,
    pub velocity: BasisReport,
}

fn snapshot_matrix(sets: &[SnapshotSet], field: impl Fn(&SnapshotSet) -> &Matrix) -> AppResult<Matrix> {
    let blocks: Vec<Matrix> = sets.iter().map(|s| field(s).transpose()).collect();
    Ok(concat_columns(&blocks.iter().collect::<Vec<_>>())?)
}

/// POD of `x` at `requested` modes, reduced to the numerical rank when the
/// data holds fewer independent directions.
fn clamped_pod(x: &Matrix, requested: usize, threshold: f64, what: &str) -> AppResult<(PodBasis, BasisReport)> {
    let basis = match compute_pod(x, Truncation::Rank(requested)) {
        Err(Error::RankDeficient { available, .. }) if available > 0 => {
            progress(format!(
                "{what} snapshots have numerical rank {available}; using {available} modes instead of {requested}"
            ));
            compute_pod(x, Truncation::Rank(available))?
        }
        other => other?,
    };
    let frobenius_sq = x.frobenius_sq();
    let tail = basis.tail_energy();
    let residual = residual_energy(&basis, x)?;
    let smallest = smallest_rank_for_energy(&basis.spectrum, threshold);
    let report = BasisReport {
        requested_rank: requested,
        rank: basis.rank(),
        numerical_rank: basis.spectrum.len(),
        energy_captured: basis.energy_captured,
        threshold,
        smallest_rank_for_threshold: smallest,
        meets_threshold: basis.energy_captured >= threshold,
        frobenius_sq,
        tail_energy: tail,
        residual_energy: residual,
        identity_error: (residual - tail).abs() / frobenius_sq,
    };
    Ok((basis, report))
}

pub fn cmd_pod(cfg: &WorkspaceConfig) -> AppResult<EnergyReport> {
    let layout = layout(cfg);
    let (_, sets) = load_dataset(&layout)?;
    let threshold = cfg.pod.energy_threshold;
    let (bt, temperature) = clamped_pod(&snapshot_matrix(&sets, |s| &s.temps)?, cfg.pod.n_t, threshold, "temperature")?;
    let (bu, velocity) = clamped_pod(&snapshot_matrix(&sets, |s| &s.vels)?, cfg.pod.n_u, threshold, "velocity")?;

    fresh_output_dir(&layout.basis(), cfg)?;
    save_basis(&layout.basis_t(), &bt)?;
    save_basis(&layout.basis_u(), &bu)?;
    let report = EnergyReport { temperature, velocity };
    write_json(&layout.basis().join(ENERGY_REPORT), &report)?;
    for (name, r) in [("temperature", &report.temperature), ("velocity", &report.velocity)] {
        progress(format!(
            "{name}: {} modes capture {:.6}% of the energy ({} needed for {}%: {})",
            r.rank,
            100.0 * r.energy_captured,
            r.smallest_rank_for_threshold,
            100.0 * r.threshold,
            if r.meets_threshold { "met" } else { "not met" }
        ));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinCheck {
    pub samples: usize,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomReport {
    pub n_t: usize,
    pub n_u: usize,
    pub identity_basis: bool,
    pub ridge_cv: RidgeCvReport,
    pub ridge_lambda: f64,
    pub velocity_fit_rmse: f64,
    pub galerkin_check: GalerkinCheck,
}

fn identity_basis(n: usize) -> PodBasis {
    PodBasis {
        modes: Matrix::identity(n),
        singular_values: vec![1.0; n],
        spectrum: vec![1.0; n],
        energy_captured: 1.0,
        total_snapshots: n,
        mean: None,
    }
}

/// Compares the reduced right-hand side with the projected full linear
/// right-hand side of the reconstructed fields at seeded random coordinates.
pub fn galerkin_spot_check(
    ops: &ReducedOperators,
    bt: &PodBasis,
    bu: &PodBasis,
    grid: &Grid1D,
    cfg: &WorkspaceConfig,
    samples: usize,
) -> AppResult<GalerkinCheck> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..samples {
        let at: Vec<f64> = (0..ops.n_t()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let au: Vec<f64> = (0..ops.n_u()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = bt.modes.matvec(&at)?;
        let u = bu.modes.matvec(&au)?;
        let full = linear_rhs_central(&t, &u, grid, &cfg.physical())?;
        let projected = bt.modes.tr_matvec(&full)?;
        let reduced = eval_reduced_rhs(&at, &au, ops)?;
        for (a, b) in projected.iter().zip(&reduced) {
            max_err = max_err.max((a - b).abs());
        }
    }
    Ok(GalerkinCheck {
        samples,
        max_abs_error: max_err,
        tolerance: GALERKIN_CHECK_TOL,
        passed: max_err <= GALERKIN_CHECK_TOL,
    })
}

fn velocity_samples(sets: &[SnapshotSet], bt: &PodBasis, bu: &PodBasis) -> AppResult<(Vec<VelocitySample>, Vec<Vec<f64>>)> {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for set in sets {
        for i in 0..set.len() {
            features.push(VelocitySample {
                alpha_t: project(bt, set.temps.row(i))?,
                s: set.controls[i],
            });
            targets.push(project(bu, set.vels.row(i))?);
        }
    }
    Ok((features, targets))
}

pub fn cmd_build_rom(cfg: &WorkspaceConfig) -> AppResult<RomReport> {
    let layout = layout(cfg);
    let (manifest, sets) = load_dataset(&layout)?;
    let grid = Grid1D::new(manifest.n_c)?;
    let bu = load_basis(&layout.require(layout.basis_u(), "velocity basis", "pod")?)?;
    let bt = if cfg.rom.identity_basis {
        identity_basis(manifest.n_c)
    } else {
        load_basis(&layout.require(layout.basis_t(), "temperature basis", "pod")?)?
    };
    let ops = build_reduced_operators(&bt, &bu, &grid, &cfg.physical())?;
    let (features, targets) = velocity_samples(&sets, &bt, &bu)?;
    let folds = cfg.rom.cv_folds.min(features.len() / 2).max(2);
    let cv = cross_validate_ridge(&features, &targets, &cfg.rom.ridge_grid, folds)?;
    let vmap = fit_velocity_map(&features, &targets, cv.selected)?;
    let rss = romsuite_core::galerkin::residual_sum_of_squares(&vmap, &features, &targets)?;
    let check = galerkin_spot_check(&ops, &bt, &bu, &grid, cfg, 100)?;
    progress(format!(
        "ridge lambda {:e} selected by {folds}-fold CV; Galerkin spot check max error {:.3e} ({})",
        cv.selected,
        check.max_abs_error,
        if check.passed { "pass" } else { "FAIL" }
    ));

    fresh_output_dir(&layout.rom(), cfg)?;
    save_operators(&layout.rom(), &ops)?;
    save_velocity_map(&layout.rom(), &vmap)?;
    let report = RomReport {
        n_t: ops.n_t(),
        n_u: ops.n_u(),
        identity_basis: cfg.rom.identity_basis,
        ridge_lambda: cv.selected,
        velocity_fit_rmse: (rss / (features.len() * ops.n_u()) as f64).sqrt(),
        ridge_cv: cv,
        galerkin_check: check,
    };
    write_json(&layout.rom().join(ROM_REPORT), &report)?;
    Ok(report)
}

struct Loaded {
    dataset: RomDataset,
    ops: ReducedOperators,
    vmap: VelocityMap,
}

fn load_for_training(cfg: &WorkspaceConfig, layout: &Layout) -> AppResult<Loaded> {
    let (_, sets) = load_dataset(layout)?;
    let bt = load_basis(&layout.require(layout.basis_t(), "temperature basis", "pod")?)?;
    layout.require(layout.rom().join(ROM_REPORT), "reduced operators", "build-rom")?;
    let rom_report: RomReport = read_json(&layout.rom().join(ROM_REPORT))?;
    if rom_report.identity_basis {
        return Err(AppError::Validation(
            "the reduced operators were built with the identity basis (debug); rebuild them from the POD basis".into(),
        ));
    }
    let ops = load_operators(&layout.rom())?;
    let vmap = load_velocity_map(&layout.rom())?;
    if ops.n_t() != bt.rank() {
        return Err(AppError::Validation(format!(
            "reduced operators have n_T = {} but the basis has {} modes; rerun build-rom",
            ops.n_t(),
            bt.rank()
        )));
    }
    let dataset = build_dataset(&sets, &bt, cfg.train.split_fraction, cfg.seed)?;
    Ok(Loaded { dataset, ops, vmap })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub uncorrected_train_loss: f64,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub wall_seconds: f64,
}

pub fn cmd_train(cfg: &WorkspaceConfig) -> AppResult<TrainSummary> {
    let started = Instant::now();
    let layout = layout(cfg);
    let Loaded { dataset, ops, vmap } = load_for_training(cfg, &layout)?;
    let settings = cfg.rollout();
    let mut init = ClosureParams::new(ops.n_t(), ops.n_u(), &cfg.closure_config(), cfg.seed);
    init.normalizer = fit_normalizer(&dataset, &ops, &vmap, &init)?;
    let uncorrected = mean_uncorrected_loss(&ops, &vmap, &dataset.train, &settings)?;
    progress(format!(
        "training {} parameters on {} trajectories ({} held out); uncorrected train loss {uncorrected:.6e}",
        init.num_params(),
        dataset.train.len(),
        dataset.test.len()
    ));

    fresh_output_dir(&layout.closure(), cfg)?;
    let history_path = layout.closure().join(HISTORY_FILE);
    let mut history = csv::Writer::from_path(&history_path)?;
    history.write_record(["epoch", "train_loss", "val_loss", "wall_seconds"])?;
    history.flush().map_err(io_err(format!("writing {}", history_path.display())))?;
    let mut write_error = None;
    let outcome = train_closure(&dataset, &ops, &vmap, &init, &cfg.train_config(), &settings, |r| {
        let row = [
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            format!("{:.3}", r.wall_seconds),
        ];
        if let Err(e) = history.write_record(&row).and_then(|_| history.flush().map_err(csv::Error::from)) {
            write_error.get_or_insert(e);
        }
        if r.epoch % 10 == 0 {
            progress(format!(
                "epoch {:>4}  train {:.6e}  val {:.6e}  {:.1} s",
                r.epoch, r.train_loss, r.val_loss, r.wall_seconds
            ));
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }

    let best_val = outcome.best_epoch.map(|e| outcome.history[e].val_loss);
    let meta = ClosureFile {
        n_t: ops.n_t(),
        n_u: ops.n_u(),
        widths: outcome.params.mlp.widths(),
        memory: outcome.params.memory.clone(),
        normalizer: outcome.params.normalizer.clone(),
        num_params: outcome.params.num_params(),
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        uncorrected_train_loss: uncorrected,
        best_val_loss: best_val,
        train_trajectories: dataset.train.iter().map(|r| r.index).collect(),
        test_trajectories: dataset.test.iter().map(|r| r.index).collect(),
    };
    save_closure(&layout.closure(), &meta, &outcome.params)?;
    let summary = TrainSummary {
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        uncorrected_train_loss: uncorrected,
        final_train_loss: outcome.history.last().map(|r| r.train_loss),
        best_val_loss: best_val,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    progress(format!(
        "trained {} epochs in {:.1} s; best validation loss {:?} at epoch {:?}",
        summary.epochs, summary.wall_seconds, summary.best_val_loss, summary.best_epoch
    ));
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub index: usize,
    pub nrmse_corrected: f64,
    pub nrmse_uncorrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub mean_nrmse_corrected: f64,
    pub mean_nrmse_uncorrected: f64,
    pub trajectories: Vec<TrajectoryScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub test: SplitScores,
    pub train: SplitScores,
    /// Test trajectory whose modes are written to `mode_k.csv` at the top level.
    pub showcase_trajectory: usize,
}

fn scores(report: &EvalReport) -> SplitScores {
    SplitScores {
        mean_nrmse_corrected: report.mean_nrmse_corrected,
        mean_nrmse_uncorrected: report.mean_nrmse_uncorrected,
        trajectories: report
            .trajectories
            .iter()
            .map(|t| TrajectoryScore {
                index: t.index,
                nrmse_corrected: t.nrmse_corrected,
                nrmse_uncorrected: t.nrmse_uncorrected,
            })
            .collect(),
    }
}

/// `mode_1.csv … mode_n.csv` with columns `t, truth, corrected, uncorrected`.
fn write_mode_csvs(dir: &Path, traj: &TrajectoryEval) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    for k in 0..traj.truth.cols() {
        let mut w = csv::Writer::from_path(dir.join(format!("mode_{}.csv", k + 1)))?;
        w.write_record(["t", "truth", "corrected", "uncorrected"])?;
        for (i, t) in traj.times.iter().enumerate() {
            w.write_record([
                t.to_string(),
                traj.truth[(i, k)].to_string(),
                traj.corrected[(i, k)].to_string(),
                traj.uncorrected[(i, k)].to_string(),
            ])?;
        }
        w.flush().map_err(io_err("writing mode csv"))?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &WorkspaceConfig) -> AppResult<EvalFile> {
    let layout = layout(cfg);
    let Loaded { dataset, ops, vmap } = load_for_training(cfg, &layout)?;
    let (_, closure) = load_closure(&layout)?;
    let settings = cfg.rollout();
    let test = evaluate_model(&dataset.test, &ops, &vmap, Some(&closure), &settings)?;
    let train = evaluate_model(&dataset.train, &ops, &vmap, Some(&closure), &settings)?;

    fresh_output_dir(&layout.eval(), cfg)?;
    let showcase = &test.trajectories[0];
    write_mode_csvs(&layout.eval(), showcase)?;
    for t in test.trajectories.iter().chain(&train.trajectories) {
        write_mode_csvs(&layout.eval().join(trajectory_dir_name(t.index)), t)?;
    }
    let file = EvalFile {
        test: scores(&test),
        train: scores(&train),
        showcase_trajectory: showcase.index,
    };
    write_json(&layout.eval().join(EVAL_FILE), &file)?;
    progress(format!(
        "test NRMSE: corrected {:.4}, uncorrected {:.4} (ratio {:.1})",
        file.test.mean_nrmse_corrected,
        file.test.mean_nrmse_uncorrected,
        file.test.mean_nrmse_uncorrected / file.test.mean_nrmse_corrected
    ));
    Ok(file)
}

/// Where the coefficients of a `simulate` run come from.
#[derive(Debug, Clone)]
pub enum SimulateInput {
    /// JSON file: one coefficient object or an array of them.
    File(PathBuf),
    /// The first `n` draws of the configured signal distribution.
    Sampled(usize),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CoeffFile {
    Many(Vec<ControlCoeffs>),
    One(ControlCoeffs),
}

pub fn read_coeff_file(path: &Path) -> AppResult<Vec<ControlCoeffs>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let parsed: CoeffFile = serde_json::from_str(&text).map_err(|e| {
        AppError::Validation(format!(
            "{}: expected an object {{\"c0\": …, \"c\": [4 numbers]}} or an array of them ({e})",
            path.display()
        ))
    })?;
    let coeffs = match parsed {
        CoeffFile::Many(v) => v,
        CoeffFile::One(c) => vec![c],
    };
    if coeffs.is_empty() {
        return Err(AppError::Validation(format!("{}: no coefficient sets", path.display())));
    }
    if let Some(i) = coeffs
        .iter()
        .position(|c| !(c.c0.is_finite() && c.c.iter().all(|v| v.is_finite())))
    {
        return Err(AppError::Validation(format!("{}: coefficient set {i} is not finite", path.display())));
    }
    Ok(coeffs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n_trajectories: usize,
    pub n_samples: usize,
    pub wall_seconds: f64,
    pub trajectories_per_second: f64,
}

pub fn cmd_simulate(cfg: &WorkspaceConfig, input: &SimulateInput) -> AppResult<SimulateSummary> {
    let layout = layout(cfg);
    let bt = load_basis(&layout.require(layout.basis_t(), "temperature basis", "pod")?)?;
    layout.require(layout.rom().join(ROM_REPORT), "reduced operators", "build-rom")?;
    let ops = load_operators(&layout.rom())?;
    let vmap = load_velocity_map(&layout.rom())?;
    let (_, closure) = load_closure(&layout)?;
    let coeffs = match input {
        SimulateInput::File(p) => read_coeff_file(p)?,
        SimulateInput::Sampled(0) => return Err(AppError::Validation("--batch must be >= 1".into())),
        SimulateInput::Sampled(n) => {
            let spec = cfg.signal_spec();
            (0..*n as u64).map(|i| sample_record(&spec, i).coeffs()).collect()
        }
    };
    let settings = cfg.rollout();
    let n_intervals = (cfg.fom.t_end / cfg.fom.snap_every).round() as usize;
    let grid = TimeGrid {
        t0: 0.0,
        dt: settings.dt,
        n_steps: n_intervals * settings.sample_stride,
        sample_stride: settings.sample_stride,
    };
    // Every generated trajectory starts from the zero field.
    let alpha0 = project(&bt, &vec![0.0; bt.n_c()])?;

    let started = Instant::now();
    let results: Vec<AppResult<Matrix>> = coeffs
        .par_iter()
        .enumerate()
        .map(|(index, c)| {
            simulate_corrected(&closure, &ops, &vmap, c, &alpha0, &grid).map_err(|source| AppError::Trajectory { index, source })
        })
        .collect();
    let wall = started.elapsed().as_secs_f64();
    let rollouts = results.into_iter().collect::<AppResult<Vec<_>>>()?;

    fresh_output_dir(&layout.simulate(), cfg)?;
    let times = grid.sample_times();
    for (index, (c, traj)) in coeffs.iter().zip(&rollouts).enumerate() {
        let path = layout.simulate().join(format!("traj_{index:04}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["t".to_string(), "S".to_string()];
        header.extend((1..=traj.cols()).map(|k| format!("alpha_{k}")));
        w.write_record(&header)?;
        for (i, t) in times.iter().enumerate() {
            let mut row = vec![t.to_string(), evaluate_signal(c, *t).to_string()];
            row.extend(traj.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(format!("writing {}", path.display())))?;
    }
    let summary = SimulateSummary {
        n_trajectories: rollouts.len(),
        n_samples: times.len(),
        wall_seconds: wall,
        trajectories_per_second: rollouts.len() as f64 / wall.max(f64::MIN_POSITIVE),
    };
    write_json(&layout.simulate().join(SIMULATE_REPORT), &summary)?;
    Ok(summary)
}
