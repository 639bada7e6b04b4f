use std::f64::consts::PI;

use proptest::prelude::*;
use romsuite_core::fom::{rhs_full, simulate_fom, Grid1D, PhysicalParams, TimeSettings};
use romsuite_core::signals::ControlCoeffs;

/// Node-by-node restatement of the discretization: analytic channel gap,
/// ghost node past the outlet, upwinding by the local flow direction.
/// Also returns the magnitude of the largest term per node, which sets the
/// rounding scale of the cancelling sum.
fn oracle_rhs(t: &[f64], s: f64, n: usize, p: &PhysicalParams) -> (Vec<f64>, Vec<f64>) {
    let dx = 1.0 / (n as f64 - 1.0);
    let gap = |j: usize| 1.0 - (1.0 - p.channel_min) * (PI * j as f64 * dx).sin();
    let u: Vec<f64> = (0..n).map(|j| s / gap(j)).collect();
    let mut ext = t.to_vec();
    ext.push(t[n - 1]);
    let mut out = vec![0.0; n];
    let mut scale = vec![0.0; n];
    for j in 1..n {
        let lap = (ext[j + 1] - 2.0 * ext[j] + ext[j - 1]) / (dx * dx);
        let grad = if u[j] > 0.0 {
            (ext[j] - ext[j - 1]) / dx
        } else {
            (ext[j + 1] - ext[j]) / dx
        };
        let du = if j == n - 1 {
            (u[j] - u[j - 1]) / dx
        } else {
            (u[j + 1] - u[j - 1]) / (2.0 * dx)
        };
        let eta = p.eta0 * (-p.beta * ext[j]).exp();
        let terms = [p.diffusivity * lap, u[j] * grad, eta * du * du];
        out[j] = terms[0] - terms[1] + terms[2];
        scale[j] = terms.iter().map(|v| v.abs()).fold(0.0, f64::max);
    }
    (out, scale)
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn rhs_matches_independent_stencil() {
    let grid = Grid1D::new(256).unwrap();
    let p = PhysicalParams::default();
    for seed in 0..5 {
        let mut t = pseudo_random(256, seed);
        t[0] = 0.0;
        for s in [1.3, -0.7] {
            let got = rhs_full(&t, s, &grid, &p).unwrap();
            let (want, scale) = oracle_rhs(&t, s, 256, &p);
            for ((a, b), m) in got.iter().zip(&want).zip(&scale) {
                assert!((a - b).abs() <= 1e-13 * m.max(1.0), "{a} vs {b} (term scale {m})");
            }
        }
    }
}

fn short_run(n_c: usize, dt: f64) -> Vec<f64> {
    let grid = Grid1D::new(n_c).unwrap();
    let coeffs = ControlCoeffs {
        c0: 1.1,
        c: [0.2, -0.1, 0.05, 0.1],
    };
    let time = TimeSettings {
        t_end: 2.0,
        dt,
        snap_every: 0.5,
    };
    let set = simulate_fom(&coeffs, &grid, &PhysicalParams::default(), &time).unwrap();
    set.temps.row(set.len() - 1).to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn default_grid_is_converged_in_time() {
    let a = short_run(256, 2e-4);
    let b = short_run(256, 1e-4);
    assert!(max_diff(&a, &b) < 1e-6);
}

// On the default grid the time error sits at rounding level, so the rate is
// measured on a coarse grid where a stable step still leaves a visible error.
#[test]
fn step_halving_shows_high_order() {
    let a = short_run(16, 4e-3);
    let b = short_run(16, 2e-3);
    let c = short_run(16, 1e-3);
    let (d1, d2) = (max_diff(&a, &b), max_diff(&b, &c));
    assert!(d1 / d2 >= 8.0, "reduction factor {}", d1 / d2);
}

#[test]
fn temperature_stays_nonnegative_and_runs_repeat() {
    let grid = Grid1D::new(128).unwrap();
    let coeffs = ControlCoeffs {
        c0: 0.8,
        c: [0.3, -0.3, 0.2, 0.1],
    };
    let time = TimeSettings {
        t_end: 16.0,
        dt: 5e-4,
        snap_every: 0.25,
    };
    let p = PhysicalParams::default();
    let a = simulate_fom(&coeffs, &grid, &p, &time).unwrap();
    assert!(a.temps.as_slice().iter().all(|&v| v >= -1e-10));
    assert!(a.temps.as_slice().iter().any(|&v| v > 0.0));
    let b = simulate_fom(&coeffs, &grid, &p, &time).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_state_without_source_or_flow_is_fixed(n in 3usize..40, d in 1e-4f64..1e-1) {
        let grid = Grid1D::new(n).unwrap();
        let p = PhysicalParams { diffusivity: d, ..PhysicalParams::default() };
        let out = rhs_full(&vec![0.0; n], 0.0, &grid, &p).unwrap();
        prop_assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rhs_agrees_with_oracle_on_random_input(seed in 0u64..10_000, s in -2.0f64..2.0, n in 3usize..64) {
        let grid = Grid1D::new(n).unwrap();
        let p = PhysicalParams::default();
        let t = pseudo_random(n, seed);
        let got = rhs_full(&t, s, &grid, &p).unwrap();
        let (want, scale) = oracle_rhs(&t, s, n, &p);
        for ((a, b), m) in got.iter().zip(&want).zip(&scale) {
            prop_assert!((a - b).abs() <= 1e-13 * m.max(1.0));
        }
    }
}
