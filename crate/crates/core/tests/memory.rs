mod common;

use proptest::prelude::*;
use romsuite_core::closure::{coupled_rhs, init_memory, memory_rhs, CoupledState, MemoryParams};
use romsuite_core::linalg::norm;
use romsuite_core::odeint::{integrate_forward, CheckpointPolicy, Dynamics, TimeGrid};
use romsuite_core::training::{adam_step, AdamConfig, AdamState};

/// The memory ODE alone, driven by a prescribed input.
struct Memory<F> {
    params: MemoryParams,
    input: F,
}

impl<F: Fn(f64) -> Vec<f64> + Sync> Dynamics for Memory<F> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn num_params(&self) -> usize {
        0
    }

    fn rhs(&self, t: f64, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&memory_rhs(z, &(self.input)(t), &self.params).unwrap());
    }

    fn vjp(&self, _t: f64, _z: &[f64], c: &[f64], gz: &mut [f64], _gp: &mut [f64]) {
        for ((g, c), r) in gz.iter_mut().zip(c).zip(self.params.rates()) {
            *g = -r * c;
        }
    }
}

fn rates_params(rates: &[f64], input_dim: usize) -> MemoryParams {
    MemoryParams {
        theta_lambda: rates.iter().map(|r| r.ln()).collect(),
        horizons: rates.len() / input_dim,
        input_dim,
    }
}

fn run<F: Fn(f64) -> Vec<f64> + Sync>(m: &Memory<F>, y0: &[f64], dt: f64, n_steps: usize) -> Vec<Vec<f64>> {
    let grid = TimeGrid {
        t0: 0.0,
        dt,
        n_steps,
        sample_stride: 1,
    };
    integrate_forward(m, y0, &grid, &CheckpointPolicy::default()).unwrap().samples
}

#[test]
fn unit_input_matches_closed_form() {
    let rates = [0.25, 0.5, 1.0, 2.0, 4.0];
    let m = Memory {
        params: rates_params(&rates, 1),
        input: |_t: f64| vec![1.0],
    };
    let samples = run(&m, &[0.0; 5], 0.01, 300);
    for (step, y) in samples.iter().enumerate() {
        let t = step as f64 * 0.01;
        for (c, &l) in rates.iter().enumerate() {
            let want = (1.0 - (-l * t).exp()) / l;
            assert!((y[c] - want).abs() < 1e-8, "rate {l} t {t}: {} vs {want}", y[c]);
        }
    }
    assert!((samples[100][3] - 0.43233235838169365).abs() < 1e-8);
}

#[test]
fn decay_without_input() {
    let m = rates_params(&[0.5, 3.0], 1);
    let y = [2.0, -1.0];
    let out = memory_rhs(&y, &[0.0], &m).unwrap();
    assert!((out[0] + 1.0).abs() < 1e-15 && (out[1] - 3.0).abs() < 1e-15);
}

#[test]
fn held_input_is_a_fixed_point() {
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let input_dim = 4;
        let theta = common::uniform_vec(&mut rng, 3 * input_dim, 3.0);
        let m = MemoryParams {
            theta_lambda: theta,
            horizons: 3,
            input_dim,
        };
        let x0 = common::uniform_vec(&mut rng, input_dim, 2.0);
        let y0 = init_memory(&x0, &m).unwrap();
        let scale = y0.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for v in memory_rhs(&y0, &x0, &m).unwrap() {
            assert!(v.abs() < 1e-13 * scale, "{v}");
        }
    }
    let unit = rates_params(&[1.0, 1.0], 2);
    assert_eq!(init_memory(&[0.7, -0.2], &unit).unwrap(), vec![0.7, -0.2]);
    assert_eq!(init_memory(&[0.0, 0.0], &rates_params(&[3.0, 0.1], 2)).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn default_horizons_contract() {
    let params = MemoryParams::log_spaced(3, 4, 1.0, 64.0);
    let rates = params.rates();
    let (lmin, lmax) = rates.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let dt = 0.1 / lmax;
    let m = Memory {
        params,
        input: |_t: f64| vec![0.0; 3],
    };
    let y0: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let n0 = norm(&y0);
    for (step, y) in run(&m, &y0, dt, 2000).iter().enumerate() {
        let bound = n0 * (-lmin * step as f64 * dt).exp();
        assert!(norm(y) <= bound + 1e-10, "step {step}: {} > {bound}", norm(y));
    }
}

#[test]
fn rates_stay_positive_under_adam() {
    let mut theta = vec![0.0, -1.0, 2.0];
    let mut state = AdamState::new(3);
    let cfg = AdamConfig {
        learning_rate: 0.1,
        ..AdamConfig::default()
    };
    for _ in 0..1000 {
        adam_step(&mut theta, &[1e6, 1e6, 1e6], &mut state, &cfg).unwrap();
        let m = MemoryParams {
            theta_lambda: theta.clone(),
            horizons: 3,
            input_dim: 1,
        };
        assert!(m.rates().iter().all(|&r| r > 0.0));
    }
    assert!(theta.iter().all(|&t| t < -90.0));
}

#[test]
fn zero_state_without_control_or_bias_is_still() {
    let mut rng = common::rng(5);
    let (rom, vmap) = common::random_rom(&mut rng, 3, 2);
    let mut closure = common::random_closure(&mut rng, 3, 2, &[6], 2);
    let n_in = closure.mlp.input_width();
    closure.normalizer = romsuite_core::closure::Normalizer::identity(n_in, 3);
    for l in &mut closure.mlp.layers {
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let vmap = romsuite_core::galerkin::VelocityMap {
        b: vec![0.0; 2],
        ..vmap
    };
    let z = CoupledState {
        alpha_t: vec![0.0; 3],
        y: vec![0.0; closure.memory.dim()],
    };
    let out = coupled_rhs(&z, 1.0, &closure, &rom, &vmap, &|_t: f64| 0.0).unwrap();
    assert!(out.alpha_t.iter().chain(&out.y).all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contraction_at_any_rates(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let rates: Vec<f64> = common::uniform_vec(&mut rng, 6, 2.0).iter().map(|v| v.exp()).collect();
        let (lmin, lmax) = rates.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        // Close rates need a finer step than 0.1/λ_max: the RK4 amplification
        // factor exceeds e^{−λ·dt} by about (λ·dt)⁵/120 per step.
        let dt = 0.01 / lmax;
        let m = Memory { params: rates_params(&rates, 2), input: |_t: f64| vec![0.0; 2] };
        let y0 = common::uniform_vec(&mut rng, 6, 1.0);
        let n0 = norm(&y0);
        for (step, y) in run(&m, &y0, dt, 1000).iter().enumerate() {
            let bound = n0 * (-lmin * step as f64 * dt).exp();
            prop_assert!(norm(y) <= bound + 1e-10);
        }
    }

    #[test]
    fn response_is_linear_in_the_input(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = common::rng(seed);
        let rates: Vec<f64> = common::uniform_vec(&mut rng, 4, 1.5).iter().map(|v| v.exp()).collect();
        let params = rates_params(&rates, 2);
        let (w1, w2) = (rng_pair(&mut rng), rng_pair(&mut rng));
        let x1 = move |t: f64| vec![(w1.0 * t).sin(), (w1.1 * t).cos()];
        let x2 = move |t: f64| vec![(w2.0 * t).cos() * t, (w2.1 * t).sin()];
        let y1 = run(&Memory { params: params.clone(), input: x1 }, &[0.0; 4], 0.01, 400);
        let y2 = run(&Memory { params: params.clone(), input: x2 }, &[0.0; 4], 0.01, 400);
        let mix = move |t: f64| x1(t).iter().zip(x2(t)).map(|(p, q)| a * p + b * q).collect();
        let y = run(&Memory { params, input: mix }, &[0.0; 4], 0.01, 400);
        for ((y, y1), y2) in y.iter().zip(&y1).zip(&y2) {
            for c in 0..4 {
                prop_assert!((y[c] - a * y1[c] - b * y2[c]).abs() < 1e-11);
            }
        }
    }
}

fn rng_pair(rng: &mut rand_chacha::ChaCha8Rng) -> (f64, f64) {
    let v = common::uniform_vec(rng, 2, 3.0);
    (v[0], v[1])
}
