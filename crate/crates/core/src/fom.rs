//! Full-order model: 1D advection-diffusion of temperature through a
//! converging channel, heated by viscous dissipation.
//!
//! ```text
//! h(x)   = 1 − (1 − channel_min)·sin(πx)
//! u(x,t) = S(t) / h(x)
//! γ      = |∂u/∂x|
//! η(T)   = eta0 · exp(−beta·T)
//! ∂T/∂t  = diffusivity·∂²T/∂x² − u·∂T/∂x + η(T)·γ²
//! ```
//!
//! Dirichlet `T = 0` at `x = 0`, zero gradient at `x = 1`, `T(x, 0) = 0`.
//! Diffusion uses central differences, advection first-order upwinding and
//! time integration explicit RK4.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, read_json, write_array, write_json};
use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::signals::{evaluate_signal, ControlCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    /// Thermal diffusivity λ/(ρ·Cp).
    pub diffusivity: f64,
    /// Reference viscosity.
    pub eta0: f64,
    /// Viscosity sensitivity to temperature.
    pub beta: f64,
    /// Narrowest gap of the channel, relative to the inlet.
    pub channel_min: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            diffusivity: 1e-3,
            eta0: 0.5,
            beta: 0.2,
            channel_min: 0.25,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.diffusivity > 0.0
            && self.eta0 >= 0.0
            && self.beta >= 0.0
            && self.channel_min > 0.0
            && self.channel_min <= 1.0
            && self.diffusivity.is_finite()
            && self.eta0.is_finite()
            && self.beta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "physical parameters out of range: {self:?}"
            )))
        }
    }

    pub fn channel_gap(&self, x: f64) -> f64 {
        1.0 - (1.0 - self.channel_min) * (PI * x).sin()
    }
}

/// Uniform grid of `n_c` nodes on `[0, 1]`, both ends included.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub n_c: usize,
    pub x: Vec<f64>,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(n_c: usize) -> Result<Self> {
        if n_c < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 nodes, got {n_c}"
            )));
        }
        let dx = 1.0 / (n_c - 1) as f64;
        let x = (0..n_c).map(|j| j as f64 * dx).collect();
        Ok(Self { n_c, x, dx })
    }
}

pub fn velocity_field(grid: &Grid1D, params: &PhysicalParams, s: f64) -> Vec<f64> {
    grid.x.iter().map(|&x| s / params.channel_gap(x)).collect()
}

/// Second-difference stencil with the solver's boundary rows: row 0 is
/// zero (pinned Dirichlet node) and the last row uses a ghost node equal
/// to the last node.
pub fn apply_d2(grid: &Grid1D, t: &[f64]) -> Vec<f64> {
    let n = grid.n_c;
    let inv = 1.0 / (grid.dx * grid.dx);
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        out[j] = (t[j + 1] - 2.0 * t[j] + t[j - 1]) * inv;
    }
    out[n - 1] = (t[n - 2] - t[n - 1]) * inv;
    out
}

/// Central first-difference stencil with the same boundary rows as [`apply_d2`].
pub fn apply_d1_central(grid: &Grid1D, t: &[f64]) -> Vec<f64> {
    let n = grid.n_c;
    let inv = 0.5 / grid.dx;
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        out[j] = (t[j + 1] - t[j - 1]) * inv;
    }
    out[n - 1] = (t[n - 1] - t[n - 2]) * inv;
    out
}

fn stencil_matrix(grid: &Grid1D, apply: fn(&Grid1D, &[f64]) -> Vec<f64>) -> Matrix {
    let n = grid.n_c;
    let mut m = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        for (r, v) in apply(grid, &e).into_iter().enumerate() {
            m[(r, i)] = v;
        }
        e[i] = 0.0;
    }
    m
}

pub fn d2_matrix(grid: &Grid1D) -> Matrix {
    stencil_matrix(grid, apply_d2)
}

pub fn d1_central_matrix(grid: &Grid1D) -> Matrix {
    stencil_matrix(grid, apply_d1_central)
}

/// Linear part of the dynamics with central advection and no source:
/// `diffusivity·D2·T − u ⊙ D1·T`.
pub fn linear_rhs_central(
    t: &[f64],
    u: &[f64],
    grid: &Grid1D,
    params: &PhysicalParams,
) -> Result<Vec<f64>> {
    check_len("linear_rhs_central (T)", grid.n_c, t.len())?;
    check_len("linear_rhs_central (u)", grid.n_c, u.len())?;
    let d2 = apply_d2(grid, t);
    let d1 = apply_d1_central(grid, t);
    Ok(d2
        .iter()
        .zip(&d1)
        .zip(u)
        .map(|((a, b), ui)| params.diffusivity * a - ui * b)
        .collect())
}

/// Precomputed geometry for repeated right-hand side evaluations.
#[derive(Debug, Clone)]
pub struct FomOperator {
    grid: Grid1D,
    params: PhysicalParams,
    inv_gap: Vec<f64>,
}

impl FomOperator {
    pub fn new(grid: &Grid1D, params: &PhysicalParams) -> Self {
        let inv_gap = grid.x.iter().map(|&x| 1.0 / params.channel_gap(x)).collect();
        Self {
            grid: grid.clone(),
            params: *params,
            inv_gap,
        }
    }

    /// Full right-hand side at control value `s`, written into `out`.
    pub fn rhs_into(&self, t: &[f64], s: f64, out: &mut [f64]) {
        let n = self.grid.n_c;
        let dx = self.grid.dx;
        let inv_dx = 1.0 / dx;
        let inv_dx2 = inv_dx * inv_dx;
        let p = &self.params;
        let u = |j: usize| s * self.inv_gap[j];

        out[0] = 0.0;
        for j in 1..n {
            let tr = if j + 1 < n { t[j + 1] } else { t[j] };
            let diffusion = p.diffusivity * (tr - 2.0 * t[j] + t[j - 1]) * inv_dx2;
            let uj = u(j);
            let advection = if uj > 0.0 {
                uj * (t[j] - t[j - 1]) * inv_dx
            } else {
                uj * (tr - t[j]) * inv_dx
            };
            let gamma = if j + 1 < n {
                (u(j + 1) - u(j - 1)) * 0.5 * inv_dx
            } else {
                (u(j) - u(j - 1)) * inv_dx
            };
            let source = p.eta0 * (-p.beta * t[j]).exp() * gamma * gamma;
            out[j] = diffusion - advection + source;
        }
    }
}

pub fn rhs_full(t: &[f64], s: f64, grid: &Grid1D, params: &PhysicalParams) -> Result<Vec<f64>> {
    check_len("rhs_full", grid.n_c, t.len())?;
    if !s.is_finite() || t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "rhs_full: non-finite temperature or control".into(),
        ));
    }
    let mut out = vec![0.0; grid.n_c];
    FomOperator::new(grid, params).rhs_into(t, s, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSettings {
    pub t_end: f64,
    pub dt: f64,
    pub snap_every: f64,
}

impl Default for TimeSettings {
    fn default() -> Self {
        Self {
            t_end: 64.0,
            dt: 2e-4,
            snap_every: 0.25,
        }
    }
}

/// Number of `unit` intervals in `span`, if `span` is an integer multiple.
pub(crate) fn integer_ratio(span: f64, unit: f64) -> Option<usize> {
    let k = (span / unit).round();
    if k >= 0.0 && (k * unit - span).abs() <= 1e-9 * span.abs().max(unit) {
        Some(k as usize)
    } else {
        None
    }
}

/// Largest stable step for the trajectory's worst-case control magnitude.
pub fn cfl_bound(coeffs: &ControlCoeffs, grid: &Grid1D, params: &PhysicalParams) -> f64 {
    let u_max = coeffs.magnitude_bound() / params.channel_min;
    if u_max == 0.0 {
        f64::INFINITY
    } else {
        0.5 * grid.dx / u_max
    }
}

/// Snapshots of one full-order trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    /// `n_s × n_c` temperatures, one snapshot per row.
    pub temps: Matrix,
    /// `n_s × n_c` velocities.
    pub vels: Matrix,
    pub controls: Vec<f64>,
    pub coeffs: ControlCoeffs,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn simulate_fom(
    coeffs: &ControlCoeffs,
    grid: &Grid1D,
    params: &PhysicalParams,
    time: &TimeSettings,
) -> Result<SnapshotSet> {
    params.validate()?;
    if !(time.dt > 0.0 && time.snap_every > 0.0 && time.t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "simulate_fom: need dt > 0, snap_every > 0, t_end >= 0, got {time:?}"
        )));
    }
    let bound = cfl_bound(coeffs, grid, params);
    if time.dt > bound {
        return Err(Error::Cfl { dt: time.dt, bound });
    }
    let steps_per_snap = integer_ratio(time.snap_every, time.dt)
        .filter(|&k| k >= 1)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "snap_every {} is not an integer multiple of dt {}",
                time.snap_every, time.dt
            ))
        })?;
    let n_intervals = integer_ratio(time.t_end, time.snap_every).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "t_end {} is not an integer multiple of snap_every {}",
            time.t_end, time.snap_every
        ))
    })?;

    let n = grid.n_c;
    let op = FomOperator::new(grid, params);
    let n_s = n_intervals + 1;
    let mut temps = Matrix::zeros(n_s, n);
    let mut vels = Matrix::zeros(n_s, n);
    let mut times = Vec::with_capacity(n_s);
    let mut controls = Vec::with_capacity(n_s);

    let mut state = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let dt = time.dt;
    let mut step: usize = 0;

    for snap in 0..n_s {
        if snap > 0 {
            for _ in 0..steps_per_snap {
                let t = step as f64 * dt;
                let s_0 = evaluate_signal(coeffs, t);
                let s_half = evaluate_signal(coeffs, t + 0.5 * dt);
                let s_1 = evaluate_signal(coeffs, t + dt);
                op.rhs_into(&state, s_0, &mut k1);
                for j in 0..n {
                    tmp[j] = state[j] + 0.5 * dt * k1[j];
                }
                op.rhs_into(&tmp, s_half, &mut k2);
                for j in 0..n {
                    tmp[j] = state[j] + 0.5 * dt * k2[j];
                }
                op.rhs_into(&tmp, s_half, &mut k3);
                for j in 0..n {
                    tmp[j] = state[j] + dt * k3[j];
                }
                op.rhs_into(&tmp, s_1, &mut k4);
                let mut finite = true;
                for j in 0..n {
                    state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                    finite &= state[j].is_finite();
                }
                step += 1;
                if !finite {
                    return Err(Error::NonFinite {
                        t: step as f64 * dt,
                    });
                }
            }
        }
        let t = snap as f64 * time.snap_every;
        let s = evaluate_signal(coeffs, t);
        times.push(t);
        controls.push(s);
        temps.row_mut(snap).copy_from_slice(&state);
        vels.row_mut(snap)
            .copy_from_slice(&velocity_field(grid, params, s));
    }

    Ok(SnapshotSet {
        times,
        temps,
        vels,
        controls,
        coeffs: *coeffs,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotMeta {
    n_c: usize,
    dx: f64,
    params: PhysicalParams,
    coeffs: ControlCoeffs,
    times: Vec<f64>,
    controls: Vec<f64>,
}

pub const META_FILE: &str = "meta.json";
pub const TEMPS_FILE: &str = "temps.bin";
pub const VELS_FILE: &str = "vels.bin";

pub fn save_snapshots(
    dir: &Path,
    set: &SnapshotSet,
    grid: &Grid1D,
    params: &PhysicalParams,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = SnapshotMeta {
        n_c: grid.n_c,
        dx: grid.dx,
        params: *params,
        coeffs: set.coeffs,
        times: set.times.clone(),
        controls: set.controls.clone(),
    };
    write_json(&dir.join(META_FILE), &meta)?;
    write_array(&dir.join(TEMPS_FILE), &set.temps)?;
    write_array(&dir.join(VELS_FILE), &set.vels)
}

/// Loads a snapshot directory, returning the set and the grid size it was produced on.
pub fn load_snapshots(dir: &Path) -> Result<(SnapshotSet, usize)> {
    let meta: SnapshotMeta = read_json(&dir.join(META_FILE))?;
    let temps = read_array(&dir.join(TEMPS_FILE))?;
    let vels = read_array(&dir.join(VELS_FILE))?;
    let n_s = meta.times.len();
    let bad = |reason: String| Error::Format {
        path: dir.to_path_buf(),
        reason,
    };
    if temps.rows() != n_s || vels.rows() != n_s || meta.controls.len() != n_s {
        return Err(bad(format!(
            "row counts disagree: {n_s} times, {} temps, {} vels, {} controls",
            temps.rows(),
            vels.rows(),
            meta.controls.len()
        )));
    }
    if temps.cols() != meta.n_c || vels.cols() != meta.n_c {
        return Err(bad(format!("field width differs from n_c = {}", meta.n_c)));
    }
    if meta.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("snapshot times are not strictly increasing".into()));
    }
    Ok((
        SnapshotSet {
            times: meta.times,
            temps,
            vels,
            controls: meta.controls,
            coeffs: meta.coeffs,
        },
        meta.n_c,
    ))
}
