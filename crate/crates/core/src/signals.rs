//! Randomized control trajectories: a mean speed plus four sines with
//! periods 2⁴, 2⁵, 2⁶ and 2⁷ time units.
//!
//! Coefficient streams come from ChaCha20 keyed by the 64-bit seed, with the
//! trajectory index selecting the stream, so each trajectory is independent
//! of generation order. Normal variates use the Box–Muller transform on
//! 53-bit uniforms; the cosine branch only, one variate per pair of uniforms.

use std::f64::consts::PI;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponents `i` of the sine periods `2^i`.
pub const PERIOD_EXPONENTS: [i32; 4] = [4, 5, 6, 7];

/// Longest period; every term of the signal repeats after this many time units.
pub const SIGNAL_PERIOD: f64 = 128.0;

/// Anything that produces a control value at time `t`.
pub trait ControlSignal: Sync {
    fn value(&self, t: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Sync> ControlSignal for F {
    fn value(&self, t: f64) -> f64 {
        self(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCoeffs {
    pub c0: f64,
    /// Amplitudes of the sines with periods 2⁴..2⁷.
    pub c: [f64; 4],
}

impl ControlCoeffs {
    pub fn constant(c0: f64) -> Self {
        Self { c0, c: [0.0; 4] }
    }

    /// Upper bound on `|S(t)|` over all `t`.
    pub fn magnitude_bound(&self) -> f64 {
        self.c0.abs() + self.c.iter().map(|c| c.abs()).sum::<f64>()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            c0: a * self.c0,
            c: self.c.map(|c| a * c),
        }
    }
}

impl ControlSignal for ControlCoeffs {
    fn value(&self, t: f64) -> f64 {
        evaluate_signal(self, t)
    }
}

/// Coefficients together with their provenance, as persisted on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffRecord {
    pub c0: f64,
    pub c: [f64; 4],
    pub seed: u64,
    pub index: u64,
}

impl CoeffRecord {
    pub fn coeffs(&self) -> ControlCoeffs {
        ControlCoeffs {
            c0: self.c0,
            c: self.c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalSpec {
    pub seed: u64,
    pub mean_loc: f64,
    /// Standard deviation of `c0`.
    pub mean_scale: f64,
    /// Standard deviation of each sine amplitude.
    pub amp_scale: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            mean_loc: 1.0,
            mean_scale: 0.25,
            amp_scale: 0.25,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_scale > 0.0 && self.amp_scale > 0.0) || !self.mean_loc.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "signal spec needs finite mean_loc and positive scales, got {self:?}"
            )));
        }
        Ok(())
    }
}

struct NormalStream {
    rng: ChaCha20Rng,
}

impl NormalStream {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    // Uniform on (0, 1]: never zero, so the logarithm below is finite.
    fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Draws the coefficients of trajectory `trajectory_index`.
///
/// Bit-identical for identical `(spec, trajectory_index)`. Scales are used
/// as given, so zero scales collapse to the means.
pub fn sample_coefficients(spec: &SignalSpec, trajectory_index: u64) -> ControlCoeffs {
    let mut stream = NormalStream::new(spec.seed, trajectory_index);
    let c0 = spec.mean_loc + spec.mean_scale * stream.standard_normal();
    let mut c = [0.0; 4];
    for ci in &mut c {
        *ci = spec.amp_scale * stream.standard_normal();
    }
    ControlCoeffs { c0, c }
}

pub fn sample_record(spec: &SignalSpec, trajectory_index: u64) -> CoeffRecord {
    let coeffs = sample_coefficients(spec, trajectory_index);
    CoeffRecord {
        c0: coeffs.c0,
        c: coeffs.c,
        seed: spec.seed,
        index: trajectory_index,
    }
}

/// `S(t) = c0 + Σ c_i sin(2πt / 2^i)`, `i = 4..7`.
pub fn evaluate_signal(coeffs: &ControlCoeffs, t: f64) -> f64 {
    let mut s = coeffs.c0;
    for (ci, &i) in coeffs.c.iter().zip(&PERIOD_EXPONENTS) {
        s += ci * (2.0 * PI * t / 2f64.powi(i)).sin();
    }
    s
}

pub fn signal_grid(coeffs: &ControlCoeffs, t0: f64, dt: f64, n: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("signal_grid: dt must be > 0, got {dt}")));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("signal_grid: n must be >= 1".into()));
    }
    Ok((0..n)
        .map(|j| evaluate_signal(coeffs, t0 + j as f64 * dt))
        .collect())
}
