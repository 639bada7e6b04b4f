//! Proper orthogonal decomposition of snapshot matrices.
//!
//! Snapshots are the columns of an `n_c × n_s` matrix `X`. The left singular
//! vectors come from whichever Gram matrix is smaller: `XᵀX` (method of
//! snapshots, modes `X·w_i/σ_i`) when `n_s ≤ n_c`, otherwise `XXᵀ` directly.
//! Both go through the cyclic Jacobi solver in [`crate::linalg`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, read_json, write_array, write_json};
use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, symmetric_eigen, Matrix};

/// Off-diagonal tolerance of the Jacobi sweeps, relative to `‖G‖_F`.
pub const JACOBI_TOL: f64 = 1e-14;

/// Eigenvalues below this fraction of the largest are numerical rank deficiency.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Rank(usize),
    /// Smallest rank whose captured energy reaches this fraction.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `n_c × r`, orthonormal columns.
    pub modes: Matrix,
    /// Leading `r` singular values, non-increasing.
    pub singular_values: Vec<f64>,
    /// Every singular value above the rank cutoff; the tail beyond `r` is the truncation error.
    pub spectrum: Vec<f64>,
    pub energy_captured: f64,
    pub total_snapshots: usize,
    /// Temporal mean subtracted before the decomposition, when centering was requested.
    pub mean: Option<Vec<f64>>,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.cols()
    }

    pub fn n_c(&self) -> usize {
        self.modes.rows()
    }

    pub fn mode(&self, j: usize) -> Vec<f64> {
        self.modes.column(j)
    }

    /// `Σ_{i>r} σ_i²`
    pub fn tail_energy(&self) -> f64 {
        self.spectrum[self.rank()..].iter().fold(0.0, |acc, s| acc + s * s)
    }
}

pub fn compute_pod(x: &Matrix, truncation: Truncation) -> Result<PodBasis> {
    compute_pod_with(x, truncation, false)
}

pub fn compute_pod_with(x: &Matrix, truncation: Truncation, center: bool) -> Result<PodBasis> {
    let (n_c, n_s) = (x.rows(), x.cols());
    if n_c == 0 || n_s == 0 {
        return Err(Error::InvalidArgument("compute_pod: empty snapshot matrix".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument(
            "compute_pod: snapshot matrix has non-finite entries".into(),
        ));
    }
    if let Truncation::Energy(e) = truncation {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "compute_pod: energy fraction must lie in (0, 1], got {e}"
            )));
        }
    }

    let mean = center.then(|| {
        (0..n_c)
            .map(|i| x.row(i).iter().sum::<f64>() / n_s as f64)
            .collect::<Vec<f64>>()
    });
    let centered;
    let x = match &mean {
        Some(m) => {
            let mut c = x.clone();
            for (i, mi) in m.iter().enumerate() {
                c.row_mut(i).iter_mut().for_each(|v| *v -= mi);
            }
            centered = c;
            &centered
        }
        None => x,
    };

    let (eigenvalues, mut columns) = if n_s <= n_c {
        snapshot_method(x)?
    } else {
        covariance_method(x)?
    };
    let numerical_rank = eigenvalues.len();
    if numerical_rank == 0 {
        return Err(Error::RankDeficient {
            requested: 1,
            available: 0,
        });
    }
    let spectrum: Vec<f64> = eigenvalues.iter().map(|l| l.sqrt()).collect();
    let r = match truncation {
        Truncation::Rank(r) => {
            if r == 0 || r > numerical_rank {
                return Err(Error::RankDeficient {
                    requested: r,
                    available: numerical_rank,
                });
            }
            r
        }
        Truncation::Energy(e) => smallest_rank_for_energy(&spectrum, e),
    };

    columns.truncate(r);
    for c in &mut columns {
        canonicalize_sign(c);
    }
    let modes = Matrix::from_columns(&columns)?;
    Ok(PodBasis {
        modes,
        singular_values: spectrum[..r].to_vec(),
        energy_captured: energy_fraction(&spectrum, r),
        spectrum,
        total_snapshots: n_s,
        mean,
    })
}

fn kept_count(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return 0;
    }
    values.iter().take_while(|&&l| l > RANK_CUTOFF * top).count()
}

fn snapshot_method(x: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let eig = symmetric_eigen(&x.gram(), JACOBI_TOL)?;
    let kept = kept_count(&eig.values);
    let mut columns = Vec::with_capacity(kept);
    for i in 0..kept {
        let w = eig.vectors.column(i);
        let sigma = eig.values[i].sqrt();
        let mut mode = x.matvec(&w)?;
        mode.iter_mut().for_each(|v| *v /= sigma);
        columns.push(mode);
    }
    reorthonormalize(&mut columns);
    Ok((eig.values[..kept].to_vec(), columns))
}

fn covariance_method(x: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let eig = symmetric_eigen(&x.transpose().gram(), JACOBI_TOL)?;
    let kept = kept_count(&eig.values);
    let columns = (0..kept).map(|i| eig.vectors.column(i)).collect();
    Ok((eig.values[..kept].to_vec(), columns))
}

// Two passes of modified Gram-Schmidt. `X·w/σ` loses orthogonality in
// proportion to σ_max²/σ_i² for the weakest kept modes.
fn reorthonormalize(columns: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..columns.len() {
            let (done, rest) = columns.split_at_mut(i);
            let c = &mut rest[0];
            for q in done.iter() {
                let p = dot(q, c);
                axpy(-p, q, c);
            }
            let n = dot(c, c).sqrt();
            c.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Flips the mode so its largest-magnitude entry (first one on ties) is positive.
fn canonicalize_sign(mode: &mut [f64]) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &v in mode.iter() {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        mode.iter_mut().for_each(|v| *v = -*v);
    }
}

/// `Σ_{i≤r} σ_i² / Σ_i σ_i²`
pub fn energy_fraction(spectrum: &[f64], r: usize) -> f64 {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    let head: f64 = spectrum[..r.min(spectrum.len())].iter().map(|s| s * s).sum();
    head / total
}

pub fn smallest_rank_for_energy(spectrum: &[f64], fraction: f64) -> usize {
    (1..=spectrum.len())
        .find(|&r| energy_fraction(spectrum, r) >= fraction)
        .unwrap_or(spectrum.len())
}

/// `Vᵀ(field − mean)`
pub fn project(basis: &PodBasis, field: &[f64]) -> Result<Vec<f64>> {
    check_len("project", basis.n_c(), field.len())?;
    match &basis.mean {
        Some(m) => {
            let d: Vec<f64> = field.iter().zip(m).map(|(f, m)| f - m).collect();
            basis.modes.tr_matvec(&d)
        }
        None => basis.modes.tr_matvec(field),
    }
}

/// `V·coords + mean`
pub fn reconstruct(basis: &PodBasis, coords: &[f64]) -> Result<Vec<f64>> {
    check_len("reconstruct", basis.rank(), coords.len())?;
    let mut field = basis.modes.matvec(coords)?;
    if let Some(m) = &basis.mean {
        field.iter_mut().zip(m).for_each(|(f, m)| *f += m);
    }
    Ok(field)
}

/// `‖X − V·Vᵀ·X‖_F²` for the (centered, if applicable) snapshot matrix.
pub fn residual_energy(basis: &PodBasis, x: &Matrix) -> Result<f64> {
    check_len("residual_energy", basis.n_c(), x.rows())?;
    let mut total = 0.0;
    for j in 0..x.cols() {
        let col = x.column(j);
        let back = reconstruct(basis, &project(basis, &col)?)?;
        total += col.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Stacks the columns of several `n_c`-row snapshot blocks side by side.
pub fn concat_columns(blocks: &[&Matrix]) -> Result<Matrix> {
    let n_c = blocks.first().map_or(0, |b| b.rows());
    let n_s = blocks.iter().map(|b| b.cols()).sum();
    let mut x = Matrix::zeros(n_c, n_s);
    let mut offset = 0;
    for b in blocks {
        check_len("concat_columns", n_c, b.rows())?;
        for i in 0..n_c {
            x.row_mut(i)[offset..offset + b.cols()].copy_from_slice(b.row(i));
        }
        offset += b.cols();
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisMeta {
    pub r: usize,
    pub n_c: usize,
    pub singular_values: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub energy: f64,
    pub total_snapshots: usize,
    pub centered: bool,
}

pub const BASIS_META_FILE: &str = "basis_meta.json";
pub const MODES_FILE: &str = "modes.bin";
pub const MEAN_FILE: &str = "mean.bin";

pub fn save_basis(dir: &Path, basis: &PodBasis) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = BasisMeta {
        r: basis.rank(),
        n_c: basis.n_c(),
        singular_values: basis.singular_values.clone(),
        spectrum: basis.spectrum.clone(),
        energy: basis.energy_captured,
        total_snapshots: basis.total_snapshots,
        centered: basis.mean.is_some(),
    };
    write_json(&dir.join(BASIS_META_FILE), &meta)?;
    write_array(&dir.join(MODES_FILE), &basis.modes)?;
    if let Some(m) = &basis.mean {
        write_array(&dir.join(MEAN_FILE), &Matrix::from_vec(1, m.len(), m.clone())?)?;
    }
    Ok(())
}

pub fn load_basis(dir: &Path) -> Result<PodBasis> {
    let meta: BasisMeta = read_json(&dir.join(BASIS_META_FILE))?;
    let modes = read_array(&dir.join(MODES_FILE))?;
    if modes.rows() != meta.n_c || modes.cols() != meta.r {
        return Err(Error::Format {
            path: dir.join(MODES_FILE),
            reason: format!(
                "modes are {}x{}, metadata says {}x{}",
                modes.rows(),
                modes.cols(),
                meta.n_c,
                meta.r
            ),
        });
    }
    let mean = if meta.centered {
        Some(read_array(&dir.join(MEAN_FILE))?.into_vec())
    } else {
        None
    };
    Ok(PodBasis {
        modes,
        singular_values: meta.singular_values,
        spectrum: meta.spectrum,
        energy_captured: meta.energy,
        total_snapshots: meta.total_snapshots,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, mut seed: u64) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| {
                seed = seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn assert_orthonormal(b: &PodBasis) {
        let vtv = b.modes.gram();
        for i in 0..b.rank() {
            for j in 0..b.rank() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn repeated_column_is_rank_one() {
        let q = [1.0, 1.0, -1.0, 1.0];
        let x = Matrix::from_columns(&[q, q]).unwrap();
        let b = compute_pod(&x, Truncation::Rank(1)).unwrap();
        assert!((b.singular_values[0] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        for (m, qi) in b.mode(0).iter().zip(q) {
            assert!((m - qi / 2.0).abs() < 1e-12);
        }
        assert!(matches!(
            compute_pod(&x, Truncation::Rank(2)),
            Err(Error::RankDeficient { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn energy_threshold_forces_both_modes() {
        let x = Matrix::from_columns(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let b = compute_pod(&x, Truncation::Energy(0.95)).unwrap();
        assert_eq!(b.rank(), 2);
        let b = compute_pod(&x, Truncation::Energy(0.9)).unwrap();
        assert_eq!(b.rank(), 1);
        assert!((b.energy_captured - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_and_bad_energy() {
        assert!(compute_pod(&Matrix::zeros(0, 0), Truncation::Rank(1)).is_err());
        let x = Matrix::identity(3);
        assert!(compute_pod(&x, Truncation::Energy(0.0)).is_err());
        assert!(compute_pod(&x, Truncation::Energy(1.5)).is_err());
    }

    #[test]
    fn both_gram_routes_agree() {
        let x = lcg_matrix(6, 6, 17);
        let wide = concat_columns(&[&x, &x]).unwrap();
        let a = compute_pod(&x, Truncation::Rank(4)).unwrap();
        let b = compute_pod(&wide, Truncation::Rank(4)).unwrap();
        for (sa, sb) in a.singular_values.iter().zip(&b.singular_values) {
            assert!((sa * 2f64.sqrt() - sb).abs() < 1e-10);
        }
        assert!((a.modes.as_slice().iter().zip(b.modes.as_slice()))
            .all(|(p, q)| (p - q).abs() < 1e-9));
        assert_orthonormal(&b);
    }

    #[test]
    fn sign_convention_and_orthonormality() {
        let x = lcg_matrix(12, 7, 5);
        let b = compute_pod(&x, Truncation::Rank(7)).unwrap();
        assert_orthonormal(&b);
        for j in 0..b.rank() {
            let m = b.mode(j);
            let big = m.iter().cloned().fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn project_reconstruct_examples() {
        let x = lcg_matrix(10, 4, 8);
        let b = compute_pod(&x, Truncation::Rank(3)).unwrap();
        for j in 0..3 {
            let c = project(&b, &b.mode(j)).unwrap();
            for (i, v) in c.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
        assert!(reconstruct(&b, &[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
        let f: Vec<f64> = x.column(3);
        let c1 = project(&b, &f).unwrap();
        let c2 = project(&b, &reconstruct(&b, &c1).unwrap()).unwrap();
        for (p, q) in c1.iter().zip(&c2) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(project(&b, &[0.0; 9]).is_err());
        assert!(reconstruct(&b, &[0.0; 2]).is_err());
    }

    #[test]
    fn orthogonal_field_projects_to_zero() {
        let x = Matrix::from_columns(&[[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]]).unwrap();
        let b = compute_pod(&x, Truncation::Rank(2)).unwrap();
        let c = project(&b, &[0.0, 0.0, 3.0, -1.0]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn energy_identity_holds() {
        let x = lcg_matrix(15, 9, 23);
        for r in 1..=9 {
            let b = compute_pod(&x, Truncation::Rank(r)).unwrap();
            let lhs = residual_energy(&b, &x).unwrap();
            let rhs = b.tail_energy();
            assert!((lhs - rhs).abs() <= 1e-8 * x.frobenius_sq(), "r={r}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn centering_removes_mean() {
        let x = Matrix::from_columns(&[[1.0, 2.0], [3.0, 2.0], [2.0, 2.0]]).unwrap();
        let b = compute_pod_with(&x, Truncation::Rank(1), true).unwrap();
        assert_eq!(b.mean.as_deref(), Some(&[2.0, 2.0][..]));
        let back = reconstruct(&b, &project(&b, &[3.0, 2.0]).unwrap()).unwrap();
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn basis_persists() {
        let b = compute_pod(&lcg_matrix(8, 3, 2), Truncation::Rank(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_basis(dir.path(), &b).unwrap();
        assert_eq!(load_basis(dir.path()).unwrap(), b);
    }
}
