//! Memory-augmented neural closure for the reduced dynamics.
//!
//! ```text
//! dα_T/dt = R(α_T, α_u) + NN(α_T, α_u, S, y)
//! dy/dt   = −Λ·y + x̃,   x = [α_T, S],   x̃ = x tiled over k horizons
//! α_u     = W·[α_T; S] + b   (ridge velocity map)
//! ```
//!
//! `Λ = diag(exp(θ))` so the decay rates stay positive under any update.
//! The vector-Jacobian products are written out by hand from these closed
//! forms and checked against finite differences in the tests.
//!
//! Flat parameter layout, in order: for each dense layer its weights
//! (row-major, `out × in`) then its bias; after the last layer, `θ`
//! (channel `h·input_dim + i` is horizon `h`, memory input `i`).

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::galerkin::{reduced_rhs_into, ReducedOperators, VelocityMap};
use crate::linalg::{axpy, dot, Matrix};
use crate::odeint::Dynamics;
use crate::signals::ControlSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    /// Log decay rates, one per memory channel.
    pub theta_lambda: Vec<f64>,
    pub horizons: usize,
    /// Width of the memory input `x = [α_T, S]`, i.e. `n_T + 1`.
    pub input_dim: usize,
}

impl MemoryParams {
    /// Timescales `1/λ` log-spaced from `min_timescale` to `max_timescale`,
    /// shared by all inputs of a horizon.
    pub fn log_spaced(input_dim: usize, horizons: usize, min_timescale: f64, max_timescale: f64) -> Self {
        let mut theta_lambda = Vec::with_capacity(horizons * input_dim);
        for h in 0..horizons {
            let frac = if horizons > 1 {
                h as f64 / (horizons - 1) as f64
            } else {
                0.0
            };
            let timescale = min_timescale * (max_timescale / min_timescale).powf(frac);
            theta_lambda.extend(std::iter::repeat(-timescale.ln()).take(input_dim));
        }
        Self {
            theta_lambda,
            horizons,
            input_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_lambda.len()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.theta_lambda.iter().map(|t| t.exp()).collect()
    }

    fn check(&self) -> Result<()> {
        check_len("MemoryParams (k · input_dim)", self.horizons * self.input_dim, self.dim())
    }
}

/// `−Λ⊙y + x̃`
pub fn memory_rhs(y: &[f64], x: &[f64], memory: &MemoryParams) -> Result<Vec<f64>> {
    memory.check()?;
    check_len("memory_rhs (y)", memory.dim(), y.len())?;
    check_len("memory_rhs (x)", memory.input_dim, x.len())?;
    Ok(y.iter()
        .zip(&memory.theta_lambda)
        .enumerate()
        .map(|(c, (yc, th))| -th.exp() * yc + x[c % memory.input_dim])
        .collect())
}

/// `Λ⁻¹·x̃0`: the memory integral over `(−∞, 0]` for an input held at `x0`.
pub fn init_memory(x0: &[f64], memory: &MemoryParams) -> Result<Vec<f64>> {
    memory.check()?;
    check_len("init_memory (x0)", memory.input_dim, x0.len())?;
    Ok(memory
        .theta_lambda
        .iter()
        .enumerate()
        .map(|(c, th)| x0[c % memory.input_dim] / th.exp())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(n_out, n_in),
            bias: vec![0.0; n_out],
        }
    }

    fn n_in(&self) -> usize {
        self.weights.cols()
    }

    fn n_out(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            (0..self.n_out()).map(|r| dot(self.weights.row(r), input) + self.bias[r]),
        );
    }
}

/// Dense network with tanh on every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases; the last layer's weights are
    /// additionally multiplied by `output_gain`.
    pub fn glorot(widths: &[usize], output_gain: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n_layers = widths.len().saturating_sub(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let gain = if l + 1 == n_layers { output_gain } else { 1.0 };
                let mut layer = DenseLayer::zeros(n_in, n_out);
                for v in layer.weights.as_mut_slice() {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    *v = gain * limit * (2.0 * u - 1.0);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.n_in()).collect();
        w.extend(self.layers.last().map(|l| l.n_out()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_in() * l.n_out() + l.n_out()).sum()
    }
}

/// Affine normalization `(v − shift)/scale` of the network input and
/// `o·scale + shift` of its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            input_shift: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            output_shift: vec![0.0; n_out],
            output_scale: vec![1.0; n_out],
        }
    }

    pub fn validate(&self, n_in: usize, n_out: usize) -> Result<()> {
        check_len("Normalizer (input shift)", n_in, self.input_shift.len())?;
        check_len("Normalizer (input scale)", n_in, self.input_scale.len())?;
        check_len("Normalizer (output shift)", n_out, self.output_shift.len())?;
        check_len("Normalizer (output scale)", n_out, self.output_scale.len())?;
        let positive = |v: &[f64]| v.iter().all(|s| *s > 0.0 && s.is_finite());
        if positive(&self.input_scale) && positive(&self.output_scale) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "normalizer scales must be positive and finite".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureParams {
    pub mlp: MlpParams,
    pub memory: MemoryParams,
    pub normalizer: Normalizer,
}

/// Architecture of a fresh closure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosureConfig {
    pub hidden: Vec<usize>,
    pub horizons: usize,
    pub min_timescale: f64,
    pub max_timescale: f64,
    /// Multiplier on the Glorot range of the output layer.
    pub output_gain: f64,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            horizons: 4,
            min_timescale: 1.0,
            max_timescale: 64.0,
            output_gain: 0.1,
        }
    }
}

impl ClosureParams {
    pub fn new(n_t: usize, n_u: usize, config: &ClosureConfig, seed: u64) -> Self {
        let memory = MemoryParams::log_spaced(n_t + 1, config.horizons, config.min_timescale, config.max_timescale);
        let n_in = n_t + n_u + 1 + memory.dim();
        let mut widths = vec![n_in];
        widths.extend(&config.hidden);
        widths.push(n_t);
        Self {
            mlp: MlpParams::glorot(&widths, config.output_gain, seed),
            normalizer: Normalizer::identity(n_in, n_t),
            memory,
        }
    }

    pub fn n_t(&self) -> usize {
        self.mlp.output_width()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params() + self.memory.dim()
    }

    pub fn validate(&self, n_u: usize) -> Result<()> {
        self.memory.check()?;
        let n_t = self.n_t();
        check_len("ClosureParams (memory input = n_T + 1)", n_t + 1, self.memory.input_dim)?;
        check_len(
            "ClosureParams (network input = n_T + n_u + 1 + m)",
            n_t + n_u + 1 + self.memory.dim(),
            self.mlp.input_width(),
        )?;
        self.normalizer.validate(self.mlp.input_width(), n_t)
    }

    /// Flat parameter vector in the documented layout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.mlp.layers {
            flat.extend_from_slice(l.weights.as_slice());
            flat.extend_from_slice(&l.bias);
        }
        flat.extend_from_slice(&self.memory.theta_lambda);
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("ClosureParams::set_flat", self.num_params(), flat.len())?;
        let mut off = 0;
        for l in &mut self.mlp.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.memory.theta_lambda.copy_from_slice(&flat[off..]);
        Ok(())
    }
}

/// Joint state of the reduced coordinates and the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub alpha_t: Vec<f64>,
    pub y: Vec<f64>,
}

impl CoupledState {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = self.alpha_t.clone();
        z.extend_from_slice(&self.y);
        z
    }

    pub fn from_flat(n_t: usize, z: &[f64]) -> Self {
        Self {
            alpha_t: z[..n_t].to_vec(),
            y: z[n_t..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha_t.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

struct Activations {
    /// Normalized network input followed by every layer's output
    /// (post-tanh for hidden layers, raw for the last).
    values: Vec<Vec<f64>>,
}

fn assemble_input(alpha_t: &[f64], alpha_u: &[f64], s: f64, y: &[f64], norm: &Normalizer) -> Vec<f64> {
    alpha_t
        .iter()
        .chain(alpha_u)
        .chain(std::iter::once(&s))
        .chain(y)
        .zip(norm.input_shift.iter().zip(&norm.input_scale))
        .map(|(v, (sh, sc))| (v - sh) / sc)
        .collect()
}

fn forward(mlp: &MlpParams, input: Vec<f64>) -> Activations {
    let n = mlp.layers.len();
    let mut values = Vec::with_capacity(n + 1);
    values.push(input);
    for (l, layer) in mlp.layers.iter().enumerate() {
        let mut out = Vec::new();
        layer.apply(values.last().unwrap(), &mut out);
        if l + 1 < n {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        values.push(out);
    }
    Activations { values }
}

fn denormalize<'a>(raw: &'a [f64], norm: &'a Normalizer) -> impl Iterator<Item = f64> + 'a {
    raw.iter()
        .zip(norm.output_scale.iter().zip(&norm.output_shift))
        .map(|(o, (sc, sh))| o * sc + sh)
}

/// Backpropagates `grad_out` (w.r.t. the denormalized output) through the
/// network. Accumulates weight gradients into `grad_params` (layer part of
/// the flat layout) and returns the gradient w.r.t. the un-normalized input.
fn backward(
    mlp: &MlpParams,
    norm: &Normalizer,
    acts: &Activations,
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Vec<f64> {
    let n = mlp.layers.len();
    let mut delta: Vec<f64> = grad_out.iter().zip(&norm.output_scale).map(|(g, s)| g * s).collect();
    let mut offsets = Vec::with_capacity(n);
    let mut off = 0;
    for layer in &mlp.layers {
        offsets.push(off);
        off += layer.n_in() * layer.n_out() + layer.n_out();
    }
    for l in (0..n).rev() {
        let layer = &mlp.layers[l];
        let input = &acts.values[l];
        let (n_in, n_out) = (layer.n_in(), layer.n_out());
        let base = offsets[l];
        for (r, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, input, &mut grad_params[base + r * n_in..base + (r + 1) * n_in]);
            }
        }
        for (g, d) in grad_params[base + n_in * n_out..base + n_in * n_out + n_out].iter_mut().zip(&delta) {
            *g += d;
        }
        let mut grad_in = vec![0.0; n_in];
        for (r, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, layer.weights.row(r), &mut grad_in);
            }
        }
        if l > 0 {
            // input of layer l is tanh output of layer l-1
            for (g, a) in grad_in.iter_mut().zip(input) {
                *g *= 1.0 - a * a;
            }
        }
        delta = grad_in;
    }
    delta.iter().zip(&norm.input_scale).map(|(g, s)| g / s).collect()
}

/// Closure network output for one set of inputs, in physical units.
pub fn mlp_forward(
    params: &MlpParams,
    normalizer: &Normalizer,
    alpha_t: &[f64],
    alpha_u: &[f64],
    s: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    let n_in = alpha_t.len() + alpha_u.len() + 1 + y.len();
    check_len("mlp_forward (input width)", params.input_width(), n_in)?;
    normalizer.validate(params.input_width(), params.output_width())?;
    if !(alpha_t.iter().chain(alpha_u).chain(y).all(|v| v.is_finite()) && s.is_finite()) {
        return Err(Error::InvalidArgument("mlp_forward: non-finite input".into()));
    }
    let acts = forward(params, assemble_input(alpha_t, alpha_u, s, y, normalizer));
    Ok(denormalize(acts.values.last().unwrap(), normalizer).collect())
}

/// The closure-corrected reduced model as an ODE on the flat state `[α_T, y]`.
pub struct CoupledDynamics<'a> {
    closure: &'a ClosureParams,
    rom: &'a ReducedOperators,
    vmap: &'a VelocityMap,
    signal: &'a dyn ControlSignal,
    rates: Vec<f64>,
}

impl<'a> CoupledDynamics<'a> {
    pub fn new(
        closure: &'a ClosureParams,
        rom: &'a ReducedOperators,
        vmap: &'a VelocityMap,
        signal: &'a dyn ControlSignal,
    ) -> Result<Self> {
        check_len("CoupledDynamics (velocity map n_T)", rom.n_t(), vmap.n_t())?;
        check_len("CoupledDynamics (velocity map n_u)", rom.n_u(), vmap.n_u())?;
        check_len("CoupledDynamics (closure n_T)", rom.n_t(), closure.n_t())?;
        closure.validate(rom.n_u())?;
        Ok(Self {
            closure,
            rom,
            vmap,
            signal,
            rates: closure.memory.rates(),
        })
    }

    fn n_t(&self) -> usize {
        self.rom.n_t()
    }

    /// Initial state: the given coordinates and the memory at its fixed point.
    pub fn initial_state(&self, alpha_t0: &[f64], t0: f64) -> Result<CoupledState> {
        let mut x0 = alpha_t0.to_vec();
        x0.push(self.signal.value(t0));
        Ok(CoupledState {
            alpha_t: alpha_t0.to_vec(),
            y: init_memory(&x0, &self.closure.memory)?,
        })
    }
}

impl Dynamics for CoupledDynamics<'_> {
    fn dim(&self) -> usize {
        self.n_t() + self.closure.memory.dim()
    }

    fn num_params(&self) -> usize {
        self.closure.num_params()
    }

    fn rhs(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let n_t = self.n_t();
        let (alpha_t, y) = z.split_at(n_t);
        let s = self.signal.value(t);
        let mut alpha_u = vec![0.0; self.rom.n_u()];
        self.vmap.predict_into(alpha_t, s, &mut alpha_u);

        let (d_alpha, d_y) = out.split_at_mut(n_t);
        reduced_rhs_into(alpha_t, &alpha_u, self.rom, d_alpha);
        let norm = &self.closure.normalizer;
        let acts = forward(&self.closure.mlp, assemble_input(alpha_t, &alpha_u, s, y, norm));
        for (d, nn) in d_alpha.iter_mut().zip(denormalize(acts.values.last().unwrap(), norm)) {
            *d += nn;
        }

        let input_dim = n_t + 1;
        for (c, (dy, (yc, rate))) in d_y.iter_mut().zip(y.iter().zip(&self.rates)).enumerate() {
            let i = c % input_dim;
            let xi = if i < n_t { alpha_t[i] } else { s };
            *dy = -rate * yc + xi;
        }
    }

    fn vjp(&self, t: f64, z: &[f64], cotangent: &[f64], grad_z: &mut [f64], grad_params: &mut [f64]) {
        let n_t = self.n_t();
        let n_u = self.rom.n_u();
        let (alpha_t, y) = z.split_at(n_t);
        let (g_alpha, g_y) = cotangent.split_at(n_t);
        let s = self.signal.value(t);
        let mut alpha_u = vec![0.0; n_u];
        self.vmap.predict_into(alpha_t, s, &mut alpha_u);

        grad_z.iter_mut().for_each(|g| *g = 0.0);
        let (gz_alpha, gz_y) = grad_z.split_at_mut(n_t);
        let mlp_params = self.closure.mlp.num_params();
        let (gp_mlp, gp_theta) = grad_params.split_at_mut(mlp_params);

        // memory: dy_c = −λ_c y_c + x_{c mod (n_T+1)}
        let input_dim = n_t + 1;
        for c in 0..y.len() {
            let gc = g_y[c];
            gz_y[c] = -self.rates[c] * gc;
            gp_theta[c] += -gc * self.rates[c] * y[c];
            let i = c % input_dim;
            if i < n_t {
                gz_alpha[i] += gc;
            }
        }

        // reduced operators: (L − Σ a_k A_k)ᵀ g, and ∂/∂a_k = −gᵀ A_k α
        let mut g_au = vec![0.0; n_u];
        for (j, &gj) in g_alpha.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            axpy(gj, self.rom.l_red.row(j), gz_alpha);
            for (k, a) in self.rom.a_red.iter().enumerate() {
                axpy(-gj * alpha_u[k], a.row(j), gz_alpha);
                g_au[k] -= gj * dot(a.row(j), alpha_t);
            }
        }

        // network
        let norm = &self.closure.normalizer;
        let acts = forward(&self.closure.mlp, assemble_input(alpha_t, &alpha_u, s, y, norm));
        let g_in = backward(&self.closure.mlp, norm, &acts, g_alpha, gp_mlp);
        for (g, v) in gz_alpha.iter_mut().zip(&g_in[..n_t]) {
            *g += v;
        }
        for (g, v) in g_au.iter_mut().zip(&g_in[n_t..n_t + n_u]) {
            *g += v;
        }
        for (g, v) in gz_y.iter_mut().zip(&g_in[n_t + n_u + 1..]) {
            *g += v;
        }

        // velocity map: α_u depends on α_T through W[:, :n_T]
        for (k, &gk) in g_au.iter().enumerate() {
            if gk != 0.0 {
                axpy(gk, &self.vmap.w[k][..n_t], gz_alpha);
            }
        }
    }
}

/// The uncorrected reduced model `dα_T/dt = R(α_T, α_u(α_T, S))`. It holds
/// no closure parameters at all.
pub struct UncorrectedDynamics<'a> {
    rom: &'a ReducedOperators,
    vmap: &'a VelocityMap,
    signal: &'a dyn ControlSignal,
}

impl<'a> UncorrectedDynamics<'a> {
    pub fn new(rom: &'a ReducedOperators, vmap: &'a VelocityMap, signal: &'a dyn ControlSignal) -> Result<Self> {
        check_len("UncorrectedDynamics (velocity map n_T)", rom.n_t(), vmap.n_t())?;
        check_len("UncorrectedDynamics (velocity map n_u)", rom.n_u(), vmap.n_u())?;
        Ok(Self { rom, vmap, signal })
    }
}

impl Dynamics for UncorrectedDynamics<'_> {
    fn dim(&self) -> usize {
        self.rom.n_t()
    }

    fn num_params(&self) -> usize {
        0
    }

    fn rhs(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let s = self.signal.value(t);
        let mut alpha_u = vec![0.0; self.rom.n_u()];
        self.vmap.predict_into(z, s, &mut alpha_u);
        reduced_rhs_into(z, &alpha_u, self.rom, out);
    }

    fn vjp(&self, t: f64, z: &[f64], cotangent: &[f64], grad_z: &mut [f64], _grad_params: &mut [f64]) {
        let n_t = self.rom.n_t();
        let s = self.signal.value(t);
        let mut alpha_u = vec![0.0; self.rom.n_u()];
        self.vmap.predict_into(z, s, &mut alpha_u);
        let m = self.rom.linear_operator(&alpha_u);
        grad_z.copy_from_slice(&m.tr_matvec(cotangent).expect("square operator"));
        for (k, a) in self.rom.a_red.iter().enumerate() {
            let g_au = -dot(cotangent, &a.matvec(z).expect("square operator"));
            axpy(g_au, &self.vmap.w[k][..n_t], grad_z);
        }
    }
}

/// Right-hand side of the coupled system at `(z, t)`.
pub fn coupled_rhs(
    z: &CoupledState,
    t: f64,
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    signal: &dyn ControlSignal,
) -> Result<CoupledState> {
    let dynamics = CoupledDynamics::new(closure, rom, vmap, signal)?;
    check_len("coupled_rhs (alpha_T)", rom.n_t(), z.alpha_t.len())?;
    check_len("coupled_rhs (y)", closure.memory.dim(), z.y.len())?;
    let mut out = vec![0.0; dynamics.dim()];
    dynamics.rhs(t, &z.to_flat(), &mut out);
    Ok(CoupledState::from_flat(rom.n_t(), &out))
}

/// Reverse-mode product of `cotangent` with the Jacobians of
/// [`coupled_rhs`] w.r.t. the state and the flat closure parameters.
pub fn coupled_vjp(
    z: &CoupledState,
    t: f64,
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    signal: &dyn ControlSignal,
    cotangent: &CoupledState,
) -> Result<(CoupledState, Vec<f64>)> {
    let dynamics = CoupledDynamics::new(closure, rom, vmap, signal)?;
    check_len("coupled_vjp (alpha_T)", rom.n_t(), z.alpha_t.len())?;
    check_len("coupled_vjp (y)", closure.memory.dim(), z.y.len())?;
    check_len("coupled_vjp (cotangent alpha_T)", rom.n_t(), cotangent.alpha_t.len())?;
    check_len("coupled_vjp (cotangent y)", closure.memory.dim(), cotangent.y.len())?;
    let mut grad_z = vec![0.0; dynamics.dim()];
    let mut grad_p = vec![0.0; dynamics.num_params()];
    dynamics.vjp(t, &z.to_flat(), &cotangent.to_flat(), &mut grad_z, &mut grad_p);
    Ok((CoupledState::from_flat(rom.n_t(), &grad_z), grad_p))
}
