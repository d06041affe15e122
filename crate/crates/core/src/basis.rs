//! Reduced bases from snapshot data.
//!
//! Four constructions are provided: ordinary POD of the full state, the
//! cotangent lift `diag(Uqp, Uqp)`, the complex SVD of `Q + iP`, and
//! independent position/momentum blocks `diag(Uqq, Upp)`. Every basis has
//! even dimension `n = 2m` and orthonormal columns; the cotangent lift and
//! complex SVD are additionally J-equivariant (`U^T J U = J_n`).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::fom::SnapshotSet;
use crate::linalg::{
    apply_j_mat, canonical_j, max_abs, numerical_rank, sigma_min, skew_part, thin_svd,
    thin_svd_complex,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisKind {
    OrdinaryPod,
    CotangentLift,
    ComplexSvd,
    BlockQp,
    /// Caller-supplied orthonormal frame.
    Custom,
}

impl BasisKind {
    pub const BUILT_IN: [BasisKind; 4] = [
        BasisKind::OrdinaryPod,
        BasisKind::CotangentLift,
        BasisKind::ComplexSvd,
        BasisKind::BlockQp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::OrdinaryPod => "ordinary_pod",
            BasisKind::CotangentLift => "cotangent_lift",
            BasisKind::ComplexSvd => "complex_svd",
            BasisKind::BlockQp => "block_qp",
            BasisKind::Custom => "custom",
        }
    }

    pub fn is_equivariant(self) -> bool {
        matches!(self, BasisKind::CotangentLift | BasisKind::ComplexSvd)
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ordinary_pod" | "pod" => Ok(BasisKind::OrdinaryPod),
            "cotangent_lift" | "cotangent" => Ok(BasisKind::CotangentLift),
            "complex_svd" | "complex" => Ok(BasisKind::ComplexSvd),
            "block_qp" | "block" => Ok(BasisKind::BlockQp),
            other => Err(Error::InvalidArgument(format!("unknown basis kind '{other}'"))),
        }
    }
}

/// Column-orthonormal reduced basis.
#[derive(Clone, Debug)]
pub struct ReducedBasis {
    u: DMatrix<f64>,
    kind: BasisKind,
    singular_values: Vec<f64>,
    /// Momentum-block spectrum of a `BlockQp` basis.
    p_singular_values: Option<Vec<f64>>,
    center: Option<DVector<f64>>,
}

impl ReducedBasis {
    /// Wraps a caller-supplied frame. Columns must be orthonormal to 1e-12
    /// and their count even.
    pub fn from_orthonormal(u: DMatrix<f64>, center: Option<DVector<f64>>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() % 2 != 0 || u.nrows() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "basis must be even-by-even, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let err = orthonormality_error(&u);
        if err > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (error {err:.3e})"
            )));
        }
        if let Some(c) = &center {
            check_dim("basis center", u.nrows(), c.len())?;
        }
        Ok(Self {
            u,
            kind: BasisKind::Custom,
            singular_values: Vec::new(),
            p_singular_values: None,
            center,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.u.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn p_singular_values(&self) -> Option<&[f64]> {
        self.p_singular_values.as_deref()
    }

    pub fn center(&self) -> Option<&DVector<f64>> {
        self.center.as_ref()
    }

    pub fn is_centered(&self) -> bool {
        self.center.is_some()
    }

    /// Number of leading singular values retained per spectrum.
    fn retained(&self) -> usize {
        match self.kind {
            BasisKind::OrdinaryPod | BasisKind::Custom => self.n(),
            _ => self.n() / 2,
        }
    }

    /// Fraction of singular-value mass captured (first powers of sigma).
    pub fn snapshot_energy(&self) -> Result<f64> {
        let r = self.retained();
        match &self.p_singular_values {
            None => snapshot_energy(&self.singular_values, r),
            Some(p) => {
                let kept: f64 = self.singular_values[..r].iter().chain(&p[..r]).sum();
                let total: f64 = self.singular_values.iter().chain(p).sum();
                if total > 0.0 {
                    Ok(kept / total)
                } else {
                    Err(Error::InvalidArgument("all singular values vanish".into()))
                }
            }
        }
    }

    /// `sum_{i > retained} sigma_i^2` over every spectrum of the basis;
    /// equals the squared projection error of the training snapshots.
    pub fn tail_energy(&self) -> f64 {
        let r = self.retained();
        let tail = |s: &[f64]| s.iter().skip(r).map(|v| v * v).sum::<f64>();
        tail(&self.singular_values) + self.p_singular_values.as_deref().map_or(0.0, tail)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.u.tr_mul(x)
    }

    pub fn lift(&self, xhat: &DVector<f64>) -> DVector<f64> {
        &self.u * xhat
    }

    /// `P_U X = U U^T X`.
    pub fn projector_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.u * self.u.tr_mul(x)
    }
}

pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let n = u.ncols();
    max_abs(&(u.tr_mul(u) - DMatrix::identity(n, n)))
}

/// `max |U^T J U - J_n|`.
pub fn equivariance_error(u: &DMatrix<f64>) -> f64 {
    max_abs(&(reduced_j_matrix(u) - canonical_j(u.ncols())))
}

/// Skew-symmetric `U^T J U` (exactly skew after symmetrization of roundoff).
pub fn reduced_j_matrix(u: &DMatrix<f64>) -> DMatrix<f64> {
    skew_part(&u.tr_mul(&apply_j_mat(u)))
}

/// `E_s = sum_{k<=n} sigma_k / sum_k sigma_k`.
pub fn snapshot_energy(singular_values: &[f64], n: usize) -> Result<f64> {
    if n > singular_values.len() {
        return Err(Error::InvalidArgument(format!(
            "snapshot energy requested for n = {n} with only {} singular values",
            singular_values.len()
        )));
    }
    let total: f64 = singular_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all singular values vanish".into()));
    }
    Ok(singular_values[..n].iter().sum::<f64>() / total)
}

/// Frobenius norm of `(X - Xbar) - P_U (X - Xbar)`, `Xbar` being the basis
/// center (zero for uncentered bases).
pub fn projection_error(snaps: &SnapshotSet, basis: &ReducedBasis) -> Result<f64> {
    check_dim("projection error rows", basis.full_dim(), snaps.dim())?;
    let w = centered_states(snaps.states(), basis.center());
    let resid = &w - basis.projector_apply(&w);
    Ok(resid.norm())
}

pub(crate) fn centered_states(x: &DMatrix<f64>, center: Option<&DVector<f64>>) -> DMatrix<f64> {
    match center {
        None => x.clone(),
        Some(c) => {
            let mut w = x.clone();
            for mut col in w.column_iter_mut() {
                col -= c;
            }
            w
        }
    }
}

/// Reduced symplectic matrix with its conditioning diagnostics.
#[derive(Clone, Debug)]
pub struct ReducedSymplectic {
    pub j_hat: DMatrix<f64>,
    pub sigma_min: f64,
    /// `lambda_max(J^-T J^-1 - I) = 1 / sigma_min^2 - 1`.
    pub canon_dev: f64,
}

/// Threshold below which `U^T J U` counts as degenerate.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

pub fn reduced_symplectic(basis: &ReducedBasis) -> Result<ReducedSymplectic> {
    let j_hat = reduced_j_matrix(basis.matrix());
    let smin = sigma_min(&j_hat);
    if !(smin > DEGENERATE_SIGMA) {
        return Err(Error::DegenerateSymplectic { sigma_min: smin });
    }
    Ok(ReducedSymplectic {
        canon_dev: 1.0 / (smin * smin) - 1.0,
        sigma_min: smin,
        j_hat,
    })
}

// ---------------------------------------------------------------------------
// Constructions

enum Modes {
    Pod(DMatrix<f64>),
    Cotangent(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
    Block(DMatrix<f64>, DMatrix<f64>),
}

/// Decomposition of one snapshot set for one basis kind. Truncating it at
/// several `n` reuses the same SVD; the leading columns of a larger basis
/// are exactly the smaller basis.
pub struct BasisFactory {
    kind: BasisKind,
    center: Option<DVector<f64>>,
    modes: Modes,
    singular_values: Vec<f64>,
    p_singular_values: Option<Vec<f64>>,
    /// Largest admissible `n`.
    max_n: usize,
}

impl BasisFactory {
    pub fn new(snaps: &SnapshotSet, kind: BasisKind, centered: bool) -> Result<Self> {
        let n_full = snaps.dim();
        if n_full % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "snapshot dimension must be even, got {n_full}"
            )));
        }
        let center = centered.then(|| snaps.center().cloned().unwrap_or_else(|| snaps.first()));
        let w = centered_states(snaps.states(), center.as_ref());
        let half = n_full / 2;
        let k = w.ncols();
        let q = w.rows(0, half).into_owned();
        let p = w.rows(half, half).into_owned();

        let (modes, sv, psv, max_n) = match kind {
            BasisKind::OrdinaryPod => {
                let svd = thin_svd(&w)?;
                let rank = svd.rank(n_full, k);
                (Modes::Pod(svd.u), svd.singular_values, None, rank - rank % 2)
            }
            BasisKind::CotangentLift => {
                let mut qp = DMatrix::zeros(half, 2 * k);
                qp.columns_mut(0, k).copy_from(&q);
                qp.columns_mut(k, k).copy_from(&p);
                let svd = thin_svd(&qp)?;
                let rank = svd.rank(half, 2 * k);
                (Modes::Cotangent(svd.u), svd.singular_values, None, 2 * rank)
            }
            BasisKind::ComplexSvd => {
                let y = DMatrix::from_fn(half, k, |i, j| Complex64::new(q[(i, j)], p[(i, j)]));
                let (phi, sv) = thin_svd_complex(&y)?;
                let rank = numerical_rank(&sv, half, k);
                (Modes::Complex(phi), sv, None, 2 * rank)
            }
            BasisKind::BlockQp => {
                let sq = thin_svd(&q)?;
                let sp = thin_svd(&p)?;
                let rank = sq.rank(half, k).min(sp.rank(half, k));
                (
                    Modes::Block(sq.u, sp.u),
                    sq.singular_values,
                    Some(sp.singular_values),
                    2 * rank,
                )
            }
            BasisKind::Custom => {
                return Err(Error::InvalidArgument(
                    "custom bases are supplied, not constructed".into(),
                ))
            }
        };
        Ok(Self {
            kind,
            center,
            modes,
            singular_values: sv,
            p_singular_values: psv,
            max_n,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn build(&self, n: usize) -> Result<ReducedBasis> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "reduced dimension must be even and positive, got {n}"
            )));
        }
        if n > self.max_n {
            return Err(Error::RankExceeded {
                requested: n,
                max: self.max_n,
            });
        }
        let m = n / 2;
        let u = match &self.modes {
            Modes::Pod(u) => u.columns(0, n).into_owned(),
            Modes::Cotangent(uqp) => block_diag(&uqp.columns(0, m).into_owned(), &uqp.columns(0, m).into_owned()),
            Modes::Block(uq, up) => block_diag(&uq.columns(0, m).into_owned(), &up.columns(0, m).into_owned()),
            Modes::Complex(phi) => {
                let half = phi.nrows();
                let mut u = DMatrix::zeros(2 * half, n);
                for j in 0..m {
                    for i in 0..half {
                        let z = phi[(i, j)];
                        u[(i, j)] = z.re;
                        u[(half + i, j)] = z.im;
                        u[(i, m + j)] = -z.im;
                        u[(half + i, m + j)] = z.re;
                    }
                }
                u
            }
        };
        Ok(ReducedBasis {
            u,
            kind: self.kind,
            singular_values: self.singular_values.clone(),
            p_singular_values: self.p_singular_values.clone(),
            center: self.center.clone(),
        })
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn build_basis(snaps: &SnapshotSet, kind: BasisKind, n: usize, centered: bool) -> Result<ReducedBasis> {
    BasisFactory::new(snaps, kind, centered)?.build(n)
}

pub fn ordinary_pod(snaps: &SnapshotSet, n: usize, centered: bool) -> Result<ReducedBasis> {
    build_basis(snaps, BasisKind::OrdinaryPod, n, centered)
}

pub fn cotangent_lift(snaps: &SnapshotSet, n: usize, centered: bool) -> Result<ReducedBasis> {
    build_basis(snaps, BasisKind::CotangentLift, n, centered)
}

pub fn complex_svd(snaps: &SnapshotSet, n: usize, centered: bool) -> Result<ReducedBasis> {
    build_basis(snaps, BasisKind::ComplexSvd, n, centered)
}

pub fn block_qp(snaps: &SnapshotSet, n: usize, centered: bool) -> Result<ReducedBasis> {
    build_basis(snaps, BasisKind::BlockQp, n, centered)
}
