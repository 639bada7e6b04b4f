#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romsuite_core::closure::{ClosureConfig, ClosureParams, Normalizer};
use romsuite_core::galerkin::{ReducedOperators, VelocityMap};
use romsuite_core::linalg::Matrix;
use romsuite_core::odeint::TimeGrid;
use romsuite_core::signals::ControlCoeffs;
use romsuite_core::training::{simulate_corrected, RolloutSettings, TrajectoryRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, half_width: f64) -> Matrix {
    Matrix::from_vec(r, c, uniform_vec(rng, r * c, half_width)).unwrap()
}

/// Damped reduced operators with a random velocity map.
pub fn random_rom(rng: &mut ChaCha8Rng, n_t: usize, n_u: usize) -> (ReducedOperators, VelocityMap) {
    let mut l_red = uniform_matrix(rng, n_t, n_t, 0.1);
    for i in 0..n_t {
        l_red[(i, i)] -= 0.5;
    }
    let rom = ReducedOperators {
        l_red,
        a_red: (0..n_u).map(|_| uniform_matrix(rng, n_t, n_t, 0.1)).collect(),
    };
    let vmap = VelocityMap {
        w: (0..n_u).map(|_| uniform_vec(rng, n_t + 1, 0.5)).collect(),
        b: uniform_vec(rng, n_u, 0.5),
        ridge_lambda: 0.0,
    };
    (rom, vmap)
}

/// Closure with nonzero biases, perturbed decay rates and a non-trivial normalizer.
pub fn random_closure(rng: &mut ChaCha8Rng, n_t: usize, n_u: usize, hidden: &[usize], horizons: usize) -> ClosureParams {
    let config = ClosureConfig {
        hidden: hidden.to_vec(),
        horizons,
        min_timescale: 1.0,
        max_timescale: 8.0,
        output_gain: 1.0,
    };
    let mut closure = ClosureParams::new(n_t, n_u, &config, rng.random());
    for l in &mut closure.mlp.layers {
        l.bias = uniform_vec(rng, l.bias.len(), 0.3);
    }
    for th in &mut closure.memory.theta_lambda {
        *th += rng.random_range(-0.3..0.3);
    }
    let n_in = closure.mlp.input_width();
    closure.normalizer = Normalizer {
        input_shift: uniform_vec(rng, n_in, 0.5),
        input_scale: (0..n_in).map(|_| rng.random_range(0.5..2.0)).collect(),
        output_shift: uniform_vec(rng, n_t, 0.1),
        output_scale: (0..n_t).map(|_| rng.random_range(0.05..0.3)).collect(),
    };
    closure
}

pub fn random_coeffs(rng: &mut ChaCha8Rng) -> ControlCoeffs {
    ControlCoeffs {
        c0: rng.random_range(0.5..1.5),
        c: [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ],
    }
}

pub fn short_settings() -> RolloutSettings {
    RolloutSettings {
        dt: 0.05,
        sample_stride: 5,
        checkpoint: romsuite_core::odeint::CheckpointPolicy { segment_length: 4 },
    }
}

/// A record whose targets are the corrected rollout of `closure` from `alpha0`.
pub fn record_from_model(
    index: usize,
    closure: &ClosureParams,
    rom: &ReducedOperators,
    vmap: &VelocityMap,
    coeffs: ControlCoeffs,
    alpha0: &[f64],
    n_samples: usize,
    settings: &RolloutSettings,
) -> TrajectoryRecord {
    let grid = TimeGrid {
        t0: 0.0,
        dt: settings.dt,
        n_steps: (n_samples - 1) * settings.sample_stride,
        sample_stride: settings.sample_stride,
    };
    let targets = simulate_corrected(closure, rom, vmap, &coeffs, alpha0, &grid).unwrap();
    TrajectoryRecord {
        index,
        coeffs,
        times: grid.sample_times(),
        targets,
    }
}
