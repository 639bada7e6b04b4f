use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romsuite_core::linalg::{dot, Matrix};
use romsuite_core::pod::{compute_pod, project, reconstruct, residual_energy, Truncation};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn to_dense(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn matches_reference_svd_up_to_sign() {
    for seed in 0..4 {
        let x = random_matrix(8, 5, seed);
        let basis = compute_pod(&x, Truncation::Rank(5)).unwrap();
        let svd = to_dense(&x).svd(true, false);
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        for (k, &j) in order.iter().enumerate() {
            assert!((basis.singular_values[k] - svd.singular_values[j]).abs() < 1e-10);
            let ours = basis.mode(k);
            let theirs: Vec<f64> = u.column(j).iter().copied().collect();
            let s = dot(&ours, &theirs).signum();
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - s * b).abs() < 1e-10, "mode {k}: {a} vs {}", s * b);
            }
        }
    }
}

#[test]
fn wide_matrices_take_the_covariance_route() {
    let x = random_matrix(6, 15, 9);
    let basis = compute_pod(&x, Truncation::Rank(6)).unwrap();
    let svd = to_dense(&x).svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in basis.singular_values.iter().zip(&sv) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn single_snapshot_gives_its_normalized_direction() {
    let x = Matrix::from_vec(4, 1, vec![0.0, -3.0, 4.0, 0.0]).unwrap();
    let basis = compute_pod(&x, Truncation::Energy(0.95)).unwrap();
    assert_eq!(basis.rank(), 1);
    assert!((basis.singular_values[0] - 5.0).abs() < 1e-14);
    let m = basis.mode(0);
    assert!((m[1] + 0.6).abs() < 1e-14 && (m[2] - 0.8).abs() < 1e-14);
    assert!(compute_pod(&x, Truncation::Rank(2)).is_err());
}

#[test]
fn zero_matrix_is_rejected() {
    let x = Matrix::zeros(5, 3);
    assert!(compute_pod(&x, Truncation::Rank(1)).is_err());
}

#[test]
fn projection_matches_dense_products() {
    let x = random_matrix(12, 7, 3);
    let basis = compute_pod(&x, Truncation::Rank(4)).unwrap();
    let v = to_dense(&basis.modes);
    let f = random_matrix(12, 1, 4);
    let coords = project(&basis, f.as_slice()).unwrap();
    let dense = v.transpose() * DMatrix::from_column_slice(12, 1, f.as_slice());
    for (a, b) in coords.iter().zip(dense.iter()) {
        assert!((a - b).abs() < 1e-13);
    }
    let back = reconstruct(&basis, &coords).unwrap();
    let dense_back = &v * &dense;
    for (a, b) in back.iter().zip(dense_back.iter()) {
        assert!((a - b).abs() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn modes_are_orthonormal(seed in 0u64..1000, rows in 2usize..20, cols in 1usize..20) {
        let x = random_matrix(rows, cols, seed);
        let r = rows.min(cols);
        let basis = compute_pod(&x, Truncation::Rank(r)).unwrap();
        for i in 0..r {
            for j in 0..r {
                let g = dot(&basis.mode(i), &basis.mode(j));
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g - want).abs() < 1e-10, "({i},{j}) = {g}");
            }
        }
    }

    #[test]
    fn residual_equals_discarded_energy(seed in 0u64..1000, rows in 2usize..20, cols in 1usize..20, frac in 0.0f64..1.0) {
        let x = random_matrix(rows, cols, seed);
        let full = rows.min(cols);
        let r = 1 + ((full - 1) as f64 * frac) as usize;
        let basis = compute_pod(&x, Truncation::Rank(r)).unwrap();
        let res = residual_energy(&basis, &x).unwrap();
        prop_assert!((res - basis.tail_energy()).abs() <= 1e-10 * x.frobenius_sq());
        prop_assert!(basis.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn largest_entry_of_each_mode_is_positive(seed in 0u64..1000, rows in 2usize..20, cols in 1usize..10) {
        let x = random_matrix(rows, cols, seed);
        let basis = compute_pod(&x, Truncation::Rank(rows.min(cols))).unwrap();
        for k in 0..basis.rank() {
            let m = basis.mode(k);
            let big = m.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            prop_assert!(big > 0.0);
        }
    }

    #[test]
    fn projecting_twice_changes_nothing(seed in 0u64..1000) {
        let x = random_matrix(10, 6, seed);
        let basis = compute_pod(&x, Truncation::Rank(3)).unwrap();
        let f = random_matrix(10, 1, seed + 7);
        let once = reconstruct(&basis, &project(&basis, f.as_slice()).unwrap()).unwrap();
        let twice = reconstruct(&basis, &project(&basis, &once).unwrap()).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn pod_of_own_modes_spans_the_same_space(seed in 0u64..1000) {
        let x = random_matrix(9, 4, seed);
        let basis = compute_pod(&x, Truncation::Rank(4)).unwrap();
        let again = compute_pod(&basis.modes, Truncation::Rank(4)).unwrap();
        // Unit singular values leave any rotation within the span valid, so
        // only the projector is compared.
        let v = to_dense(&basis.modes);
        let w = to_dense(&again.modes);
        let diff = &v * v.transpose() - &w * w.transpose();
        prop_assert!(diff.amax() < 1e-10);
    }
}
