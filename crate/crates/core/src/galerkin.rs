//! Galerkin-projected linear dynamics and the ridge map from reduced
//! temperature coordinates and control to velocity coordinates.
//!
//! The reducible part of the reduced dynamics is bilinear:
//!
//! ```text
//! R(α_T, α_u) = L·α_T − Σ_k α_u[k]·A_k·α_T
//! L[j,i]      = diffusivity · V_T[:,j]ᵀ · D2 · V_T[:,i]
//! A_k[j,i]    = V_T[:,j]ᵀ · diag(V_u[:,k]) · D1 · V_T[:,i]
//! ```
//!
//! `D1` is the central first difference even though the full-order solver
//! upwinds; the mismatch is left to the closure.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, read_json, write_array, write_json};
use crate::error::{check_len, Error, Result};
use crate::fom::{apply_d1_central, apply_d2, Grid1D, PhysicalParams};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::pod::PodBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOperators {
    /// `n_T × n_T` projected diffusion, diffusivity included.
    pub l_red: Matrix,
    /// One `n_T × n_T` projected advection slice per velocity mode.
    pub a_red: Vec<Matrix>,
}

impl ReducedOperators {
    pub fn n_t(&self) -> usize {
        self.l_red.rows()
    }

    pub fn n_u(&self) -> usize {
        self.a_red.len()
    }

    /// `L − Σ_k α_u[k]·A_k`, the Jacobian of [`eval_reduced_rhs`] in `α_T`
    /// at fixed `α_u`.
    pub fn linear_operator(&self, alpha_u: &[f64]) -> Matrix {
        let mut m = self.l_red.clone();
        for (a, &au) in self.a_red.iter().zip(alpha_u) {
            for (mi, ai) in m.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *mi -= au * ai;
            }
        }
        m
    }
}

pub fn build_reduced_operators(
    basis_t: &PodBasis,
    basis_u: &PodBasis,
    grid: &Grid1D,
    params: &PhysicalParams,
) -> Result<ReducedOperators> {
    check_len("build_reduced_operators (temperature basis grid)", grid.n_c, basis_t.n_c())?;
    check_len("build_reduced_operators (velocity basis grid)", grid.n_c, basis_u.n_c())?;
    if basis_t.mean.is_some() || basis_u.mean.is_some() {
        return Err(Error::InvalidArgument(
            "Galerkin operators need uncentered bases".into(),
        ));
    }
    let n_t = basis_t.rank();
    let modes_t: Vec<Vec<f64>> = (0..n_t).map(|i| basis_t.mode(i)).collect();
    let d2_modes: Vec<Vec<f64>> = modes_t.iter().map(|m| apply_d2(grid, m)).collect();
    let d1_modes: Vec<Vec<f64>> = modes_t.iter().map(|m| apply_d1_central(grid, m)).collect();

    let mut l_red = Matrix::zeros(n_t, n_t);
    for j in 0..n_t {
        for i in 0..n_t {
            l_red[(j, i)] = params.diffusivity * dot(&modes_t[j], &d2_modes[i]);
        }
    }
    let a_red = (0..basis_u.rank())
        .map(|k| {
            let vu = basis_u.mode(k);
            let mut a = Matrix::zeros(n_t, n_t);
            for j in 0..n_t {
                let weighted: Vec<f64> = modes_t[j].iter().zip(&vu).map(|(t, u)| t * u).collect();
                for i in 0..n_t {
                    a[(j, i)] = dot(&weighted, &d1_modes[i]);
                }
            }
            a
        })
        .collect();
    Ok(ReducedOperators { l_red, a_red })
}

/// `L·α_T − Σ_k α_u[k]·(A_k·α_T)`
pub fn eval_reduced_rhs(
    alpha_t: &[f64],
    alpha_u: &[f64],
    ops: &ReducedOperators,
) -> Result<Vec<f64>> {
    check_len("eval_reduced_rhs (alpha_T)", ops.n_t(), alpha_t.len())?;
    check_len("eval_reduced_rhs (alpha_u)", ops.n_u(), alpha_u.len())?;
    let mut out = vec![0.0; ops.n_t()];
    reduced_rhs_into(alpha_t, alpha_u, ops, &mut out);
    Ok(out)
}

pub(crate) fn reduced_rhs_into(alpha_t: &[f64], alpha_u: &[f64], ops: &ReducedOperators, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut v = dot(ops.l_red.row(j), alpha_t);
        for (a, &au) in ops.a_red.iter().zip(alpha_u) {
            v -= au * dot(a.row(j), alpha_t);
        }
        *o = v;
    }
}

/// Affine map `α_u = W·[α_T; S] + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityMap {
    /// `n_u` rows of `n_T + 1` weights; the last column multiplies `S`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub ridge_lambda: f64,
}

impl VelocityMap {
    pub fn n_u(&self) -> usize {
        self.b.len()
    }

    pub fn n_t(&self) -> usize {
        self.w.first().map_or(0, |r| r.len() - 1)
    }

    pub(crate) fn predict_into(&self, alpha_t: &[f64], s: f64, out: &mut [f64]) {
        let n_t = alpha_t.len();
        for ((o, row), b) in out.iter_mut().zip(&self.w).zip(&self.b) {
            *o = dot(&row[..n_t], alpha_t) + row[n_t] * s + b;
        }
    }
}

pub fn predict_velocity(map: &VelocityMap, alpha_t: &[f64], s: f64) -> Result<Vec<f64>> {
    check_len("predict_velocity", map.n_t(), alpha_t.len())?;
    let mut out = vec![0.0; map.n_u()];
    map.predict_into(alpha_t, s, &mut out);
    Ok(out)
}

/// One regression sample: reduced temperature coordinates and control value.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySample {
    pub alpha_t: Vec<f64>,
    pub s: f64,
}

impl VelocitySample {
    fn features(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha_t.iter().copied().chain(std::iter::once(self.s))
    }
}

/// Ridge regression with an unpenalized intercept.
///
/// Centers features and targets, then solves `(XcᵀXc + λI)·w = Xcᵀy`
/// per output by Cholesky; `b = ȳ − W·x̄`.
pub fn fit_velocity_map(
    features: &[VelocitySample],
    targets: &[Vec<f64>],
    ridge_lambda: f64,
) -> Result<VelocityMap> {
    let n = features.len();
    check_len("fit_velocity_map (targets)", n, targets.len())?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "fit_velocity_map needs at least 2 samples, got {n}"
        )));
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge_lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let n_t = features[0].alpha_t.len();
    let p = n_t + 1;
    let n_u = targets[0].len();
    for (f, t) in features.iter().zip(targets) {
        check_len("fit_velocity_map (feature width)", n_t, f.alpha_t.len())?;
        check_len("fit_velocity_map (target width)", n_u, t.len())?;
    }

    let mut x_mean = vec![0.0; p];
    let mut y_mean = vec![0.0; n_u];
    for (f, t) in features.iter().zip(targets) {
        for (m, v) in x_mean.iter_mut().zip(f.features()) {
            *m += v / n as f64;
        }
        for (m, v) in y_mean.iter_mut().zip(t) {
            *m += v / n as f64;
        }
    }

    let mut gram = Matrix::zeros(p, p);
    let mut rhs = Matrix::zeros(n_u, p);
    let mut xc = vec![0.0; p];
    for (f, t) in features.iter().zip(targets) {
        for ((c, v), m) in xc.iter_mut().zip(f.features()).zip(&x_mean) {
            *c = v - m;
        }
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] += xc[a] * xc[b];
            }
        }
        for k in 0..n_u {
            let yk = t[k] - y_mean[k];
            for a in 0..p {
                rhs[(k, a)] += xc[a] * yk;
            }
        }
    }
    for a in 0..p {
        gram[(a, a)] += ridge_lambda;
    }
    let chol = Cholesky::factor(&gram)?;
    let mut w = Vec::with_capacity(n_u);
    let mut b = Vec::with_capacity(n_u);
    for k in 0..n_u {
        let wk = chol.solve(rhs.row(k))?;
        b.push(y_mean[k] - dot(&wk, &x_mean));
        w.push(wk);
    }
    Ok(VelocityMap { w, b, ridge_lambda })
}

/// Sum of squared residuals of `map` over the samples.
pub fn residual_sum_of_squares(
    map: &VelocityMap,
    features: &[VelocitySample],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    for (f, t) in features.iter().zip(targets) {
        let pred = predict_velocity(map, &f.alpha_t, f.s)?;
        total += pred.iter().zip(t).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeCvReport {
    pub lambdas: Vec<f64>,
    /// Mean squared validation error per lambda.
    pub scores: Vec<f64>,
    pub selected: f64,
}

/// K-fold cross-validation over `lambdas` with contiguous folds.
/// Ties go to the first lambda in grid order.
pub fn cross_validate_ridge(
    features: &[VelocitySample],
    targets: &[Vec<f64>],
    lambdas: &[f64],
    folds: usize,
) -> Result<RidgeCvReport> {
    let n = features.len();
    check_len("cross_validate_ridge (targets)", n, targets.len())?;
    if lambdas.is_empty() || folds < 2 || n < 2 * folds {
        return Err(Error::InvalidArgument(format!(
            "cross validation needs a non-empty grid, >= 2 folds and >= 2 samples per fold \
             ({n} samples, {folds} folds, {} lambdas)",
            lambdas.len()
        )));
    }
    let mut scores = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut sse = 0.0;
        let mut count = 0usize;
        for f in 0..folds {
            let lo = f * n / folds;
            let hi = (f + 1) * n / folds;
            let train_x: Vec<VelocitySample> = features[..lo]
                .iter()
                .chain(&features[hi..])
                .cloned()
                .collect();
            let train_y: Vec<Vec<f64>> = targets[..lo].iter().chain(&targets[hi..]).cloned().collect();
            let map = fit_velocity_map(&train_x, &train_y, lambda)?;
            sse += residual_sum_of_squares(&map, &features[lo..hi], &targets[lo..hi])?;
            count += (hi - lo) * targets[0].len();
        }
        scores.push(sse / count as f64);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(RidgeCvReport {
        lambdas: lambdas.to_vec(),
        selected: lambdas[best],
        scores,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct OperatorsMeta {
    n_t: usize,
    n_u: usize,
    l_red_file: String,
    a_red_file: String,
    a_red_layout: String,
}

pub const OPERATORS_META_FILE: &str = "operators.json";
pub const L_RED_FILE: &str = "l_red.bin";
pub const A_RED_FILE: &str = "a_red.bin";
pub const VELOCITY_MAP_FILE: &str = "velocity_map.json";
pub const VELOCITY_W_FILE: &str = "velocity_w.bin";

pub fn save_operators(dir: &Path, ops: &ReducedOperators) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (n_t, n_u) = (ops.n_t(), ops.n_u());
    let meta = OperatorsMeta {
        n_t,
        n_u,
        l_red_file: L_RED_FILE.into(),
        a_red_file: A_RED_FILE.into(),
        a_red_layout: "row k*n_T + j, column i holds A_red[k, j, i]".into(),
    };
    write_json(&dir.join(OPERATORS_META_FILE), &meta)?;
    write_array(&dir.join(L_RED_FILE), &ops.l_red)?;
    let mut stacked = Vec::with_capacity(n_u * n_t * n_t);
    for a in &ops.a_red {
        stacked.extend_from_slice(a.as_slice());
    }
    write_array(&dir.join(A_RED_FILE), &Matrix::from_vec(n_u * n_t, n_t, stacked)?)
}

pub fn load_operators(dir: &Path) -> Result<ReducedOperators> {
    let meta: OperatorsMeta = read_json(&dir.join(OPERATORS_META_FILE))?;
    let l_red = read_array(&dir.join(L_RED_FILE))?;
    let stacked = read_array(&dir.join(A_RED_FILE))?;
    let (n_t, n_u) = (meta.n_t, meta.n_u);
    if l_red.rows() != n_t || l_red.cols() != n_t || stacked.rows() != n_u * n_t || stacked.cols() != n_t
    {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: format!("operator arrays do not match n_T = {n_t}, n_u = {n_u}"),
        });
    }
    let a_red = stacked
        .as_slice()
        .chunks_exact(n_t * n_t)
        .map(|c| Matrix::from_vec(n_t, n_t, c.to_vec()))
        .collect::<Result<_>>()?;
    Ok(ReducedOperators { l_red, a_red })
}

#[derive(Debug, Serialize, Deserialize)]
struct VelocityMapMeta {
    n_t: usize,
    n_u: usize,
    b: Vec<f64>,
    ridge_lambda: f64,
    w_file: String,
}

pub fn save_velocity_map(dir: &Path, map: &VelocityMap) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = VelocityMapMeta {
        n_t: map.n_t(),
        n_u: map.n_u(),
        b: map.b.clone(),
        ridge_lambda: map.ridge_lambda,
        w_file: VELOCITY_W_FILE.into(),
    };
    write_json(&dir.join(VELOCITY_MAP_FILE), &meta)?;
    write_array(&dir.join(VELOCITY_W_FILE), &Matrix::from_rows(&map.w)?)
}

pub fn load_velocity_map(dir: &Path) -> Result<VelocityMap> {
    let meta: VelocityMapMeta = read_json(&dir.join(VELOCITY_MAP_FILE))?;
    let w = read_array(&dir.join(VELOCITY_W_FILE))?;
    if w.rows() != meta.n_u || w.cols() != meta.n_t + 1 || meta.b.len() != meta.n_u {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "velocity map arrays do not match metadata".into(),
        });
    }
    Ok(VelocityMap {
        w: (0..w.rows()).map(|i| w.row(i).to_vec()).collect(),
        b: meta.b,
        ridge_lambda: meta.ridge_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{d2_matrix, linear_rhs_central};
    use crate::pod::{compute_pod, Truncation};

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

    fn zero_velocity_basis(n: usize) -> PodBasis {
        PodBasis {
            modes: Matrix::zeros(n, 1),
            ..identity_basis(1)
        }
    }

    #[test]
    fn identity_basis_reproduces_stencil() {
        let g = Grid1D::new(12).unwrap();
        let p = PhysicalParams::default();
        let ops = build_reduced_operators(&identity_basis(12), &zero_velocity_basis(12), &g, &p).unwrap();
        let d2 = d2_matrix(&g);
        for (a, b) in ops.l_red.as_slice().iter().zip(d2.as_slice()) {
            assert_eq!(*a, p.diffusivity * b);
        }
        assert!(ops.a_red[0].as_slice().iter().all(|&v| v == 0.0));
    }

    fn small_setup() -> (Grid1D, PhysicalParams, PodBasis, PodBasis) {
        let g = Grid1D::new(20).unwrap();
        let p = PhysicalParams::default();
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|k| g.x.iter().map(|&x| x * (1.0 + k as f64 * x).sin() + 0.1 * k as f64 * x * x).collect())
            .collect();
        let bt = compute_pod(&Matrix::from_columns(&cols).unwrap(), Truncation::Rank(4)).unwrap();
        let ucols: Vec<Vec<f64>> = (0..3)
            .map(|k| g.x.iter().map(|&x| 1.0 + (k as f64 + 1.0) * x.cos()).collect())
            .collect();
        let bu = compute_pod(&Matrix::from_columns(&ucols).unwrap(), Truncation::Rank(2)).unwrap();
        (g, p, bt, bu)
    }

    #[test]
    fn reduced_rhs_is_projected_full_rhs() {
        let (g, p, bt, bu) = small_setup();
        let ops = build_reduced_operators(&bt, &bu, &g, &p).unwrap();
        let at = [0.3, -1.2, 0.7, 2.0];
        let au = [1.5, -0.4];
        let t = bt.modes.matvec(&at).unwrap();
        let u = bu.modes.matvec(&au).unwrap();
        let full = linear_rhs_central(&t, &u, &g, &p).unwrap();
        let projected = bt.modes.tr_matvec(&full).unwrap();
        let reduced = eval_reduced_rhs(&at, &au, &ops).unwrap();
        for (a, b) in projected.iter().zip(&reduced) {
            assert!((a - b).abs() < 1e-11);
        }
        assert!(eval_reduced_rhs(&[0.0; 4], &au, &ops).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(
            eval_reduced_rhs(&at, &[0.0; 2], &ops).unwrap(),
            ops.l_red.matvec(&at).unwrap()
        );
        assert!(eval_reduced_rhs(&at[..3], &au, &ops).is_err());
    }

    #[test]
    fn exact_affine_targets_are_recovered() {
        let w_true = [[0.5, -1.0, 2.0], [0.0, 0.25, -0.75]];
        let b_true = [0.1, -2.0];
        let features: Vec<VelocitySample> = (0..10)
            .map(|i| {
                let f = i as f64;
                VelocitySample {
                    alpha_t: vec![f.sin(), (0.3 * f).cos()],
                    s: 1.0 + 0.1 * f * f,
                }
            })
            .collect();
        let targets: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                (0..2)
                    .map(|k| dot(&w_true[k][..2], &f.alpha_t) + w_true[k][2] * f.s + b_true[k])
                    .collect()
            })
            .collect();
        let map = fit_velocity_map(&features, &targets, 0.0).unwrap();
        for k in 0..2 {
            for i in 0..3 {
                assert!((map.w[k][i] - w_true[k][i]).abs() < 1e-10);
            }
            assert!((map.b[k] - b_true[k]).abs() < 1e-10);
        }
        for (f, t) in features.iter().zip(&targets) {
            let pred = predict_velocity(&map, &f.alpha_t, f.s).unwrap();
            for (p, y) in pred.iter().zip(t) {
                assert!((p - y).abs() < 1e-10);
            }
        }

        let heavy = fit_velocity_map(&features, &targets, 1e12).unwrap();
        for k in 0..2 {
            assert!(heavy.w[k].iter().all(|w| w.abs() < 1e-6));
            let mean = targets.iter().map(|t| t[k]).sum::<f64>() / targets.len() as f64;
            assert!((heavy.b[k] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_features_without_ridge_fail() {
        let features: Vec<VelocitySample> = (0..5)
            .map(|i| VelocitySample {
                alpha_t: vec![i as f64],
                s: 2.0 * i as f64,
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            fit_velocity_map(&features, &targets, 0.0),
            Err(Error::Singular { .. })
        ));
        assert!(fit_velocity_map(&features, &targets, 1e-3).is_ok());
        assert!(fit_velocity_map(&features[..1], &targets[..1], 1.0).is_err());
        assert!(fit_velocity_map(&features, &targets, -1.0).is_err());
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let map = VelocityMap {
            w: vec![vec![0.0; 4]],
            b: vec![3.5],
            ridge_lambda: 0.0,
        };
        assert_eq!(predict_velocity(&map, &[1.0, 2.0, 3.0], 9.0).unwrap(), vec![3.5]);
        assert!(predict_velocity(&map, &[1.0], 9.0).is_err());
    }

    #[test]
    fn operators_and_map_persist() {
        let (g, p, bt, bu) = small_setup();
        let ops = build_reduced_operators(&bt, &bu, &g, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_operators(dir.path(), &ops).unwrap();
        assert_eq!(load_operators(dir.path()).unwrap(), ops);
        let map = VelocityMap {
            w: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.25]],
            b: vec![0.1, 0.2],
            ridge_lambda: 1e-6,
        };
        save_velocity_map(dir.path(), &map).unwrap();
        assert_eq!(load_velocity_map(dir.path()).unwrap(), map);
    }

    #[test]
    fn cross_validation_picks_from_grid() {
        let features: Vec<VelocitySample> = (0..40)
            .map(|i| {
                let f = i as f64 * 0.37;
                VelocitySample {
                    alpha_t: vec![f.sin(), f.cos()],
                    s: 0.5 * f,
                }
            })
            .collect();
        let targets: Vec<Vec<f64>> = features
            .iter()
            .map(|f| vec![2.0 * f.s - f.alpha_t[0] + 0.01 * (7.0 * f.s).sin()])
            .collect();
        let grid = [1e-8, 1e-6, 1e-4, 1e-2, 1e2];
        let report = cross_validate_ridge(&features, &targets, &grid, 5).unwrap();
        assert!(grid.contains(&report.selected));
        assert_eq!(report.scores.len(), grid.len());
        assert!(report.selected < 1e2);
    }
}
