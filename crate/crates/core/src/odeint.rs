//! Fixed-step RK4 and its exact discrete adjoint with fixed-interval checkpointing.
//!
//! The reverse sweep differentiates the RK4 recurrence itself, so gradients
//! are exact for the discrete rollout. Only every `segment_length`-th state
//! is kept during the forward pass; each segment is recomputed from its
//! checkpoint while sweeping backwards.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::axpy;

/// An autonomous-in-parameters ODE `dz/dt = f(t, z; p)` with a
/// vector-Jacobian product.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    fn rhs(&self, t: f64, z: &[f64], out: &mut [f64]);

    /// Writes `cotangentᵀ·∂f/∂z` into `grad_z` and adds `cotangentᵀ·∂f/∂p` to `grad_params`.
    fn vjp(&self, t: f64, z: &[f64], cotangent: &[f64], grad_z: &mut [f64], grad_params: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Samples are taken every `sample_stride` steps, step 0 included.
    pub sample_stride: usize,
}

impl TimeGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.sample_stride == 0 || self.n_steps % self.sample_stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs dt > 0 and n_steps divisible by sample_stride, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps / self.sample_stride + 1
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.n_samples())
            .map(|i| self.time(i * self.sample_stride))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub segment_length: usize,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        Self { segment_length: 16 }
    }
}

impl CheckpointPolicy {
    /// A single checkpoint at step 0: plain backpropagation through time
    /// with the whole trajectory recomputed once.
    pub fn single(grid: &TimeGrid) -> Self {
        Self {
            segment_length: grid.n_steps.max(1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segment_length == 0 {
            return Err(Error::InvalidArgument("segment_length must be >= 1".into()));
        }
        Ok(())
    }
}

struct Stages {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    z4: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            z2: vec![0.0; n],
            z3: vec![0.0; n],
            z4: vec![0.0; n],
        }
    }

    /// Evaluates the four stages at `(t, z)`; with `need_k4 = false` the
    /// last evaluation is skipped (the adjoint only needs the stage states).
    fn compute<D: Dynamics + ?Sized>(&mut self, f: &D, z: &[f64], t: f64, dt: f64, need_k4: bool) {
        let half = 0.5 * dt;
        f.rhs(t, z, &mut self.k1);
        for i in 0..z.len() {
            self.z2[i] = z[i] + half * self.k1[i];
        }
        f.rhs(t + half, &self.z2, &mut self.k2);
        for i in 0..z.len() {
            self.z3[i] = z[i] + half * self.k2[i];
        }
        f.rhs(t + half, &self.z3, &mut self.k3);
        for i in 0..z.len() {
            self.z4[i] = z[i] + dt * self.k3[i];
        }
        if need_k4 {
            f.rhs(t + dt, &self.z4, &mut self.k4);
        }
    }

    fn advance(&self, z: &mut [f64], dt: f64) -> bool {
        let mut finite = true;
        for i in 0..z.len() {
            z[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            finite &= z[i].is_finite();
        }
        finite
    }
}

fn step_in_place<D: Dynamics + ?Sized>(f: &D, z: &mut [f64], t: f64, dt: f64, stages: &mut Stages) -> Result<()> {
    stages.compute(f, z, t, dt, true);
    if stages.advance(z, dt) {
        Ok(())
    } else {
        Err(Error::NonFinite { t: t + dt })
    }
}

/// One classical Runge–Kutta step.
pub fn rk4_step<D: Dynamics + ?Sized>(f: &D, z: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    check_len("rk4_step", f.dim(), z.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("rk4_step: dt must be > 0, got {dt}")));
    }
    let mut out = z.to_vec();
    step_in_place(f, &mut out, t, dt, &mut Stages::new(z.len()))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// States at steps `0, stride, 2·stride, …, n_steps`.
    pub samples: Vec<Vec<f64>>,
    /// `(step, state)` at steps `0, L, 2L, …` below `n_steps`.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
}

pub fn integrate_forward<D: Dynamics + ?Sized>(
    f: &D,
    z0: &[f64],
    grid: &TimeGrid,
    policy: &CheckpointPolicy,
) -> Result<ForwardPass> {
    grid.validate()?;
    policy.validate()?;
    check_len("integrate_forward", f.dim(), z0.len())?;
    let mut z = z0.to_vec();
    let mut stages = Stages::new(z.len());
    let mut samples = Vec::with_capacity(grid.n_samples());
    let mut checkpoints = Vec::with_capacity(grid.n_steps / policy.segment_length + 1);
    samples.push(z.clone());
    for step in 0..grid.n_steps {
        if step % policy.segment_length == 0 {
            checkpoints.push((step, z.clone()));
        }
        step_in_place(f, &mut z, grid.time(step), grid.dt, &mut stages)?;
        if (step + 1) % grid.sample_stride == 0 {
            samples.push(z.clone());
        }
    }
    Ok(ForwardPass { samples, checkpoints })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad_z0: Vec<f64>,
    pub grad_params: Vec<f64>,
    /// Most states held at once: checkpoints plus one recomputed segment.
    pub peak_stored_states: usize,
}

/// Adjoint of one RK4 step: maps `∂L/∂z_{n+1}` (in `grad`) to `∂L/∂z_n`
/// and accumulates the parameter gradient.
#[allow(clippy::too_many_arguments)]
fn rk4_step_adjoint<D: Dynamics + ?Sized>(
    f: &D,
    z: &[f64],
    t: f64,
    dt: f64,
    grad: &mut [f64],
    grad_params: &mut [f64],
    stages: &mut Stages,
    scratch: &mut AdjointScratch,
) {
    let half = 0.5 * dt;
    stages.compute(f, z, t, dt, false);
    let AdjointScratch { kb1, kb2, kb3, kb4, w } = scratch;
    for i in 0..z.len() {
        kb4[i] = dt / 6.0 * grad[i];
        kb3[i] = dt / 6.0 * 2.0 * grad[i];
        kb2[i] = dt / 6.0 * 2.0 * grad[i];
        kb1[i] = dt / 6.0 * grad[i];
    }
    f.vjp(t + dt, &stages.z4, kb4, w, grad_params);
    axpy(1.0, w, grad);
    axpy(dt, w, kb3);
    f.vjp(t + half, &stages.z3, kb3, w, grad_params);
    axpy(1.0, w, grad);
    axpy(half, w, kb2);
    f.vjp(t + half, &stages.z2, kb2, w, grad_params);
    axpy(1.0, w, grad);
    axpy(half, w, kb1);
    f.vjp(t, z, kb1, w, grad_params);
    axpy(1.0, w, grad);
}

struct AdjointScratch {
    kb1: Vec<f64>,
    kb2: Vec<f64>,
    kb3: Vec<f64>,
    kb4: Vec<f64>,
    w: Vec<f64>,
}

impl AdjointScratch {
    fn new(n: usize) -> Self {
        Self {
            kb1: vec![0.0; n],
            kb2: vec![0.0; n],
            kb3: vec![0.0; n],
            kb4: vec![0.0; n],
            w: vec![0.0; n],
        }
    }
}

/// Reverse sweep over the rollout. `loss_cotangents[i]` is `∂L/∂(sample i)`.
pub fn backward_checkpointed<D: Dynamics + ?Sized>(
    f: &D,
    grid: &TimeGrid,
    policy: &CheckpointPolicy,
    checkpoints: &[(usize, Vec<f64>)],
    loss_cotangents: &[Vec<f64>],
) -> Result<Gradients> {
    grid.validate()?;
    policy.validate()?;
    check_len("backward_checkpointed (cotangents)", grid.n_samples(), loss_cotangents.len())?;
    let n = f.dim();
    for c in loss_cotangents {
        check_len("backward_checkpointed (cotangent width)", n, c.len())?;
    }
    let seg = policy.segment_length;
    let expected_checkpoints = grid.n_steps.div_ceil(seg);
    let aligned = checkpoints.len() == expected_checkpoints
        && checkpoints
            .iter()
            .enumerate()
            .all(|(i, (step, z))| *step == i * seg && z.len() == n);
    if !aligned {
        return Err(Error::InvalidArgument(format!(
            "checkpoints do not match the grid: expected {expected_checkpoints} at multiples of {seg}"
        )));
    }

    let mut grad = vec![0.0; n];
    let mut grad_params = vec![0.0; f.num_params()];
    let mut stages = Stages::new(n);
    let mut scratch = AdjointScratch::new(n);
    let mut segment: Vec<Vec<f64>> = Vec::with_capacity(seg);
    let mut peak = 0;

    for (start, z_start) in checkpoints.iter().rev() {
        let end = (start + seg).min(grid.n_steps);
        segment.clear();
        let mut z = z_start.clone();
        segment.push(z.clone());
        for step in *start..end - 1 {
            step_in_place(f, &mut z, grid.time(step), grid.dt, &mut stages)?;
            segment.push(z.clone());
        }
        peak = peak.max(checkpoints.len() + segment.len());
        for step in (*start..end).rev() {
            if (step + 1) % grid.sample_stride == 0 {
                axpy(1.0, &loss_cotangents[(step + 1) / grid.sample_stride], &mut grad);
            }
            rk4_step_adjoint(
                f,
                &segment[step - start],
                grid.time(step),
                grid.dt,
                &mut grad,
                &mut grad_params,
                &mut stages,
                &mut scratch,
            );
        }
    }
    axpy(1.0, &loss_cotangents[0], &mut grad);
    if !grad.iter().chain(&grad_params).all(|v| v.is_finite()) {
        return Err(Error::NonFinite { t: grid.t0 });
    }
    Ok(Gradients {
        grad_z0: grad,
        grad_params,
        peak_stored_states: peak.max(checkpoints.len()),
    })
}
