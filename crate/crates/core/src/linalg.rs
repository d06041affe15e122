//! Dense helpers shared by the reduction modules: the canonical symplectic
//! map, a reproducible thin SVD, and small matrix utilities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Applies `J = [0 I; -I 0]` to `v = (q, p)`, returning `(p, -q)`.
///
/// Panics if `v` has odd length.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    assert!(n % 2 == 0, "symplectic map needs an even dimension");
    let m = n / 2;
    DVector::from_fn(n, |i, _| if i < m { v[i + m] } else { -v[i - m] })
}

/// Applies `J` to every column of `x`.
pub fn apply_j_mat(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    assert!(n % 2 == 0, "symplectic map needs an even dimension");
    let m = n / 2;
    DMatrix::from_fn(n, x.ncols(), |i, j| {
        if i < m {
            x[(i + m, j)]
        } else {
            -x[(i - m, j)]
        }
    })
}

/// Applies `J^T = -J` to every column of `x`.
pub fn apply_jt_mat(x: &DMatrix<f64>) -> DMatrix<f64> {
    -apply_j_mat(x)
}

/// Dense canonical symplectic matrix of even order `n`.
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    assert!(n % 2 == 0, "symplectic map needs an even dimension");
    let m = n / 2;
    DMatrix::from_fn(n, n, |i, j| {
        if i < m && j == i + m {
            1.0
        } else if i >= m && j + m == i {
            -1.0
        } else {
            0.0
        }
    })
}

pub fn max_abs(x: &DMatrix<f64>) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(x: &DMatrix<f64>) -> f64 {
    max_abs(&(x - x.transpose()))
}

pub fn symmetric_part(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

pub fn skew_part(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x - x.transpose()) * 0.5
}

/// Thin SVD with descending singular values and a fixed sign convention.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl ThinSvd {
    /// Numerical rank: count of singular values above `max(rows, cols) * sigma_1 * eps`.
    pub fn rank(&self, rows: usize, cols: usize) -> usize {
        numerical_rank(&self.singular_values, rows, cols)
    }
}

pub fn numerical_rank(singular_values: &[f64], rows: usize, cols: usize) -> usize {
    let Some(&top) = singular_values.first() else {
        return 0;
    };
    let tol = rows.max(cols) as f64 * top * f64::EPSILON;
    singular_values.iter().filter(|&&s| s > tol).count()
}

/// Left singular vectors sorted by descending singular value (stable, so
/// ties keep their decomposition order), each flipped so that its
/// largest-magnitude entry is positive.
pub fn thin_svd(x: &DMatrix<f64>) -> Result<ThinSvd> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidArgument("SVD of an empty matrix".into()));
    }
    let svd = x.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Factorization("SVD did not return left vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut out = DMatrix::zeros(u.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = u.column(src).into_owned();
        fix_sign(&mut col);
        out.set_column(dst, &col);
    }
    Ok(ThinSvd {
        u: out,
        singular_values: order.iter().map(|&i| sv[i].max(0.0)).collect(),
    })
}

fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &v in col.iter() {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        col.neg_mut();
    }
}

/// Complex analogue of [`thin_svd`]; each left vector is rotated by a unit
/// phase so that its largest-modulus entry is real and positive.
pub fn thin_svd_complex(y: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::InvalidArgument("SVD of an empty matrix".into()));
    }
    let svd = y.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Factorization("SVD did not return left vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut out = DMatrix::zeros(u.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = u.column(src).into_owned();
        let mut best = 0.0_f64;
        let mut phase = Complex64::new(1.0, 0.0);
        for v in col.iter() {
            if v.norm() > best {
                best = v.norm();
                phase = v / v.norm();
            }
        }
        let rot = phase.conj();
        col.iter_mut().for_each(|v| *v *= rot);
        out.set_column(dst, &col);
    }
    Ok((out, order.iter().map(|&i| sv[i].max(0.0)).collect()))
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(x: &DMatrix<f64>) -> f64 {
    x.singular_values()
        .iter()
        .fold(f64::INFINITY, |acc, &s| acc.min(s))
}

/// Trapezoidal `sqrt(int ||v(t)||^2 dt)` over equally spaced samples.
pub fn l2_in_time(column_norms_sq: &[f64], dt: f64) -> f64 {
    match column_norms_sq.len() {
        0 | 1 => 0.0,
        k => {
            let interior: f64 = column_norms_sq[1..k - 1].iter().sum();
            let ends = 0.5 * (column_norms_sq[0] + column_norms_sq[k - 1]);
            ((interior + ends) * dt).max(0.0).sqrt()
        }
    }
}

pub fn column_norms_sq(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm_squared()).collect()
}
