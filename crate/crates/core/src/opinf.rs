//! Nonintrusive operator inference.
//!
//! Three inference problems are supported, each fitting reduced operators
//! to projected snapshot data `xhat_k = U^T (x_k - xbar)` and velocity data
//! `D_t(x)_k`:
//!
//! * [`InferenceVariant::GalerkinLs`]: unconstrained `Mhat` in
//!   `U^T D_t(x) ~ Mhat xhat + shift + U^T J grad f`;
//! * [`InferenceVariant::ChOpInf`]: symmetric `Abar` in
//!   `U^T D_t(x) ~ Jhat (Abar xhat + shift + U^T grad f)`;
//! * [`InferenceVariant::VchOpInf`]: symmetric `Abar` in
//!   `(J U)^T D_t(x) ~ Abar xhat + shift + U^T grad f`.
//!
//! The velocity matrix is always stored at full order (`N x K`); the
//! Galerkin and CH problems project it with `U^T`, the VCH problem with
//! `(J U)^T`.
//!
//! The symmetric problems reduce to Lyapunov equations `B S + S B = C`
//! with `S = Y Y^T`. They are solved from the SVD of the data matrix `Y`
//! rather than from `S` itself, which keeps the conditioning at that of
//! `Y` instead of its square.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{reduced_j_matrix, ReducedBasis, DEGENERATE_SIGMA};
use crate::error::{check_dim, Error, Result};
use crate::fom::{FlowMap, HamiltonianSystem, MidpointStepper, NonlinearPart, SnapshotSet};
use crate::linalg::{apply_j, apply_jt_mat, column_norms_sq, l2_in_time, sigma_min, symmetric_part};
use crate::rom::{Dynamics, InferenceDiagnostics, Provenance, ReducedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DifferenceScheme {
    /// Second-order central differences with second-order one-sided ends.
    Central2,
    /// First-order forward differences, backward at the last column.
    Forward1,
}

impl DifferenceScheme {
    pub fn min_columns(self) -> usize {
        match self {
            DifferenceScheme::Central2 => 3,
            DifferenceScheme::Forward1 => 2,
        }
    }
}

/// Finite-difference time derivative of a snapshot sequence, one column per
/// snapshot.
pub fn finite_difference_velocity(snaps: &SnapshotSet, scheme: DifferenceScheme) -> Result<DMatrix<f64>> {
    let k = snaps.len();
    let need = scheme.min_columns();
    if k < need {
        return Err(Error::NotEnoughSnapshots {
            required: need,
            available: k,
        });
    }
    let x = snaps.states();
    let dt = snaps.dt();
    let mut v = DMatrix::zeros(x.nrows(), k);
    match scheme {
        DifferenceScheme::Forward1 => {
            for j in 0..k - 1 {
                v.set_column(j, &((x.column(j + 1) - x.column(j)) / dt));
            }
            v.set_column(k - 1, &((x.column(k - 1) - x.column(k - 2)) / dt));
        }
        DifferenceScheme::Central2 => {
            let h2 = 2.0 * dt;
            v.set_column(
                0,
                &((x.column(0) * -3.0 + x.column(1) * 4.0 - x.column(2)) / h2),
            );
            for j in 1..k - 1 {
                v.set_column(j, &((x.column(j + 1) - x.column(j - 1)) / h2));
            }
            v.set_column(
                k - 1,
                &((x.column(k - 1) * 3.0 - x.column(k - 2) * 4.0 + x.column(k - 3)) / h2),
            );
        }
    }
    Ok(v)
}

/// Markovian training data. Uncentered: `x_0 = P x0`, `x_k = P phi(x_{k-1})`.
/// Centered: `x_0 = x0`, `x_k = x0 + P (phi(x0 + P (x_{k-1} - x0)) - x0)`,
/// whose reduced coordinates `U^T (x_k - x0)` are the centered re-projected
/// snapshots. `steps` steps produce `steps + 1` columns; exact velocities are
/// attached when the flow map can evaluate them.
pub fn reproject_states(
    flow: &dyn FlowMap,
    basis: &ReducedBasis,
    x0: &DVector<f64>,
    steps: usize,
    centered: bool,
) -> Result<SnapshotSet> {
    check_dim("initial state", basis.full_dim(), x0.len())?;
    let u = basis.matrix();
    let proj = |v: &DVector<f64>| u * u.tr_mul(v);
    let mut states = DMatrix::zeros(x0.len(), steps + 1);
    let mut x = if centered { x0.clone() } else { proj(x0) };
    states.set_column(0, &x);
    for k in 1..=steps {
        x = if centered {
            let start = x0 + proj(&(&x - x0));
            x0 + proj(&(flow.step(&start)? - x0))
        } else {
            proj(&flow.step(&x)?)
        };
        states.set_column(k, &x);
    }
    let mut velocities = DMatrix::zeros(x0.len(), steps + 1);
    let mut exact = true;
    for (k, col) in states.column_iter().enumerate() {
        match flow.velocity(&col.into_owned()) {
            Some(v) => velocities.set_column(k, &v),
            None => {
                exact = false;
                break;
            }
        }
    }
    let set = SnapshotSet::new(states, 0.0, flow.dt())?;
    let set = if centered { set.with_center(x0.clone())? } else { set };
    if exact {
        set.with_velocities(velocities)
    } else {
        Ok(set)
    }
}

/// Projects existing snapshots onto the basis, `P x` or `x0 + P (x - x0)`,
/// and attaches the exact velocities of `sys` at the projected states.
pub fn project_snapshots(
    sys: &HamiltonianSystem,
    snaps: &SnapshotSet,
    basis: &ReducedBasis,
    x0: &DVector<f64>,
    centered: bool,
) -> Result<SnapshotSet> {
    check_dim("snapshot rows", basis.full_dim(), snaps.dim())?;
    check_dim("initial state", basis.full_dim(), x0.len())?;
    let states = if centered {
        let mut shifted = snaps.states().clone();
        for mut col in shifted.column_iter_mut() {
            col -= x0;
        }
        let mut projected = basis.projector_apply(&shifted);
        for mut col in projected.column_iter_mut() {
            col += x0;
        }
        projected
    } else {
        basis.projector_apply(snaps.states())
    };
    let velocities = sys.velocity_mat(&states);
    let set = SnapshotSet::new(states, snaps.t0(), snaps.dt())?;
    let set = if centered { set.with_center(x0.clone())? } else { set };
    set.with_velocities(velocities)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InferenceVariant {
    GalerkinLs,
    ChOpInf,
    VchOpInf,
}

impl InferenceVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceVariant::GalerkinLs => "galerkin_ls",
            InferenceVariant::ChOpInf => "ch_opinf",
            InferenceVariant::VchOpInf => "vch_opinf",
        }
    }

    /// The intrusive model family an inferred operator is assembled into.
    pub fn rom_variant(self) -> crate::rom::RomVariant {
        use crate::rom::RomVariant;
        match self {
            InferenceVariant::GalerkinLs => RomVariant::Galerkin,
            InferenceVariant::ChOpInf => RomVariant::LeastSquaresHam,
            InferenceVariant::VchOpInf => RomVariant::ConsistentHam,
        }
    }

    pub fn for_rom(v: crate::rom::RomVariant) -> Self {
        use crate::rom::RomVariant;
        match v {
            RomVariant::Galerkin => InferenceVariant::GalerkinLs,
            RomVariant::LeastSquaresHam => InferenceVariant::ChOpInf,
            RomVariant::ConsistentHam => InferenceVariant::VchOpInf,
        }
    }
}

impl fmt::Display for InferenceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "galerkin_ls" | "galerkin" => Ok(InferenceVariant::GalerkinLs),
            "ch_opinf" | "ch" => Ok(InferenceVariant::ChOpInf),
            "vch_opinf" | "vch" => Ok(InferenceVariant::VchOpInf),
            other => Err(Error::InvalidArgument(format!("unknown inference variant '{other}'"))),
        }
    }
}

/// Where the velocity data came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VelocitySource {
    Exact,
    Central2,
    Forward1,
}

impl VelocitySource {
    pub fn as_str(self) -> &'static str {
        match self {
            VelocitySource::Exact => "exact",
            VelocitySource::Central2 => "central2",
            VelocitySource::Forward1 => "forward1",
        }
    }

    fn scheme(self) -> Option<DifferenceScheme> {
        match self {
            VelocitySource::Exact => None,
            VelocitySource::Central2 => Some(DifferenceScheme::Central2),
            VelocitySource::Forward1 => Some(DifferenceScheme::Forward1),
        }
    }
}

impl fmt::Display for VelocitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VelocitySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(VelocitySource::Exact),
            "central2" => Ok(VelocitySource::Central2),
            "forward1" => Ok(VelocitySource::Forward1),
            other => Err(Error::InvalidArgument(format!("unknown velocity source '{other}'"))),
        }
    }
}

/// Data of one inference problem.
#[derive(Clone, Debug)]
pub struct InferenceProblem {
    /// `n x K` reduced states `U^T (x_k - xbar)`.
    pub x_hat: DMatrix<f64>,
    /// `N x K` full-order velocity data `D_t(x)`.
    pub x_t: DMatrix<f64>,
    /// `n x K` reduced nonlinearity `U^T grad f(xbar + U xhat_k)` (zero when
    /// the Hamiltonian is quadratic).
    pub f_hat: DMatrix<f64>,
    /// Constant term of the reduced model (zero when uncentered).
    pub shift: DVector<f64>,
    pub variant: InferenceVariant,
    pub reprojected: bool,
    pub centered: bool,
    /// Sampling interval, used for the L2-in-time residual.
    pub dt: f64,
}

impl InferenceProblem {
    fn validate(&self, basis: &ReducedBasis) -> Result<()> {
        let n = basis.n();
        let k = self.x_hat.ncols();
        check_dim("reduced snapshot rows", n, self.x_hat.nrows())?;
        check_dim("velocity rows", basis.full_dim(), self.x_t.nrows())?;
        check_dim("velocity columns", k, self.x_t.ncols())?;
        check_dim("nonlinearity rows", n, self.f_hat.nrows())?;
        check_dim("nonlinearity columns", k, self.f_hat.ncols())?;
        check_dim("shift", n, self.shift.len())?;
        Ok(())
    }

    fn expect(&self, v: InferenceVariant) -> Result<()> {
        if self.variant == v {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "problem is tagged {} but {} was requested",
                self.variant, v
            )))
        }
    }

    /// `f_hat + shift 1^T`.
    fn forcing(&self) -> DMatrix<f64> {
        let mut f = self.f_hat.clone();
        for mut col in f.column_iter_mut() {
            col += &self.shift;
        }
        f
    }
}

/// An inferred operator with the L2-in-time residual of its fit.
#[derive(Clone, Debug)]
pub struct Inferred {
    pub operator: DMatrix<f64>,
    pub residual: f64,
}

struct DataSvd {
    w: DMatrix<f64>,
    sigma: DVector<f64>,
    z: DMatrix<f64>,
}

/// SVD of an `n x K` data matrix with the full-row-rank check
/// `sigma_min > K sigma_max eps 10`.
fn data_svd(y: &DMatrix<f64>) -> Result<DataSvd> {
    let n = y.nrows();
    let k = y.ncols();
    if k < n {
        return Err(Error::RankDeficientData { sigma_min: 0.0, n });
    }
    let svd = y.clone().svd(true, true);
    let w = svd.u.ok_or_else(|| Error::Factorization("SVD did not return left vectors".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Factorization("SVD did not return right vectors".into()))?;
    let sigma = svd.singular_values;
    let smax = sigma.max();
    let smin = sigma.min();
    if !(smin > k as f64 * smax * f64::EPSILON * 10.0) {
        return Err(Error::RankDeficientData { sigma_min: smin, n });
    }
    Ok(DataSvd {
        w,
        sigma,
        z: vt.transpose(),
    })
}

/// Solves `B Y Y^T + Y Y^T B = R Y^T + Y R^T` for symmetric `B`.
fn lyapunov_from_data(y: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let DataSvd { w, sigma, z } = data_svd(y)?;
    // In the left singular basis: C~ = W^T R Z Sigma + (.)^T.
    let mut m = w.tr_mul(&(r * &z));
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= sigma[j];
    }
    let n = sigma.len();
    let c = &m + m.transpose();
    let b_tilde = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (sigma[i] * sigma[i] + sigma[j] * sigma[j]));
    Ok(symmetric_part(&(&w * b_tilde * w.transpose())))
}

/// Solves `S X + X S = C` for symmetric positive definite `S` by
/// eigendecomposition.
pub fn solve_lyapunov(s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    check_dim("Lyapunov operand", n, s.ncols())?;
    check_dim("Lyapunov right-hand side", n, c.nrows())?;
    check_dim("Lyapunov right-hand side", n, c.ncols())?;
    let eig = symmetric_part(s).symmetric_eigen();
    let v = eig.eigenvectors;
    let lam = eig.eigenvalues;
    let tol = n as f64 * lam.amax() * f64::EPSILON;
    let ct = v.tr_mul(&(c * &v));
    let mut xt = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = lam[i] + lam[j];
            if !(d > tol) {
                return Err(Error::RankDeficientData {
                    sigma_min: lam.min().max(0.0).sqrt(),
                    n,
                });
            }
            xt[(i, j)] = ct[(i, j)] / d;
        }
    }
    Ok(&v * xt * v.transpose())
}

/// `A (x) B + B (x) A`, the symmetrized Kronecker sum acting on `vec(X)` as
/// `X -> B X A^T + A X B^T`.
pub fn symmetric_kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b) + b.kronecker(a)
}

/// Dense `n^2 x n^2` solve of `G X S + S X G = C` (both operands
/// symmetric), symmetrized.
pub fn kronecker_solve(g: &DMatrix<f64>, s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    check_dim("Kronecker operand", n, s.nrows())?;
    check_dim("Kronecker right-hand side", n, c.nrows())?;
    let big = symmetric_kronecker(s, g);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Factorization("singular Kronecker system".into()))?;
    Ok(symmetric_part(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Largest size for which the dense Kronecker fallback is attempted.
pub const KRONECKER_MAX_N: usize = 64;

/// Solves `G X S + S X G = C` for symmetric `X` with `G`, `S` symmetric
/// positive definite, by reducing with `G = L L^T` to a Lyapunov equation.
/// Falls back to the dense Kronecker system for `n <= 64` when `G` cannot
/// be factored.
pub fn solve_generalized_sylvester(g: &DMatrix<f64>, s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    check_dim("Sylvester operand", n, g.ncols())?;
    match Cholesky::new(symmetric_part(g)) {
        Some(chol) => {
            let l = chol.l();
            let linv = l
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
            let s1 = symmetric_part(&(&linv * s * linv.transpose()));
            let c1 = &linv * c * linv.transpose();
            let b = solve_lyapunov(&s1, &c1)?;
            Ok(symmetric_part(&(linv.transpose() * b * linv)))
        }
        None if n <= KRONECKER_MAX_N => kronecker_solve(g, s, c),
        None => Err(Error::Factorization(
            "reduced symplectic Gram matrix is not positive definite".into(),
        )),
    }
}

fn time_residual(res: &DMatrix<f64>, dt: f64) -> f64 {
    l2_in_time(&column_norms_sq(res), dt)
}

/// Symmetric `Abar` minimizing `|| (J U)^T X_t - Abar Xhat - F ||_F`.
pub fn infer_vch(problem: &InferenceProblem, basis: &ReducedBasis) -> Result<Inferred> {
    problem.expect(InferenceVariant::VchOpInf)?;
    problem.validate(basis)?;
    // (J U)^T X_t = U^T J^T X_t
    let r = basis.matrix().tr_mul(&apply_jt_mat(&problem.x_t)) - problem.forcing();
    let a = lyapunov_from_data(&problem.x_hat, &r)?;
    let residual = time_residual(&(&r - &a * &problem.x_hat), problem.dt);
    Ok(Inferred { operator: a, residual })
}

/// Symmetric `Abar` minimizing `|| U^T X_t - Jhat (Abar Xhat + F) ||_F`.
pub fn infer_ch(problem: &InferenceProblem, basis: &ReducedBasis) -> Result<Inferred> {
    problem.expect(InferenceVariant::ChOpInf)?;
    problem.validate(basis)?;
    let u = basis.matrix();
    let j_hat = reduced_j_matrix(u);
    let smin = sigma_min(&j_hat);
    if !(smin > DEGENERATE_SIGMA) {
        return Err(Error::DegenerateSymplectic { sigma_min: smin });
    }
    let xt_hat = u.tr_mul(&problem.x_t);
    let forcing = problem.forcing();
    let g = j_hat.tr_mul(&j_hat);
    // With G = L L^T and B = L^T Abar L the normal equations become
    // B Y Y^T + Y Y^T B = T Y^T + Y T^T for Y = L^-1 Xhat and
    // T = L^-1 (Jhat^T Xhat_t - G F).
    let t = j_hat.tr_mul(&xt_hat) - &g * &forcing;
    let a = match Cholesky::new(symmetric_part(&g)) {
        Some(chol) => {
            let l = chol.l();
            let y = l
                .solve_lower_triangular(&problem.x_hat)
                .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
            let tt = l
                .solve_lower_triangular(&t)
                .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
            let b = lyapunov_from_data(&y, &tt)?;
            let linv_t = l
                .transpose()
                .solve_upper_triangular(&DMatrix::identity(basis.n(), basis.n()))
                .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
            symmetric_part(&(&linv_t * b * linv_t.transpose()))
        }
        None => {
            data_svd(&problem.x_hat)?;
            let s = &problem.x_hat * problem.x_hat.transpose();
            let rhs = &t * problem.x_hat.transpose() + &problem.x_hat * t.transpose();
            if basis.n() > KRONECKER_MAX_N {
                return Err(Error::Factorization(
                    "reduced symplectic Gram matrix is not positive definite".into(),
                ));
            }
            kronecker_solve(&g, &s, &rhs)?
        }
    };
    let fit = &j_hat * (&a * &problem.x_hat + &forcing);
    let residual = time_residual(&(xt_hat - fit), problem.dt);
    Ok(Inferred { operator: a, residual })
}

/// Ridge parameter on the Galerkin normal equations.
pub const GALERKIN_RIDGE: f64 = 1e-12;

/// Unconstrained `Mhat` minimizing `|| U^T X_t - Mhat Xhat - F ||_F`, from
/// the normal equations with ridge `1e-12` on the Gram matrix. Here the
/// nonlinear snapshots are `U^T J grad f`.
pub fn infer_galerkin(problem: &InferenceProblem, basis: &ReducedBasis) -> Result<Inferred> {
    problem.expect(InferenceVariant::GalerkinLs)?;
    problem.validate(basis)?;
    let r = basis.matrix().tr_mul(&problem.x_t) - problem.forcing();
    let DataSvd { w, sigma, z } = data_svd(&problem.x_hat)?;
    // R Xhat^T (Xhat Xhat^T + eps I)^-1 = R Z diag(s / (s^2 + eps)) W^T
    let mut rz = &r * z;
    for (j, mut col) in rz.column_iter_mut().enumerate() {
        col *= sigma[j] / (sigma[j] * sigma[j] + GALERKIN_RIDGE);
    }
    let m = rz * w.transpose();
    let residual = time_residual(&(&r - &m * &problem.x_hat), problem.dt);
    Ok(Inferred { operator: m, residual })
}

pub fn infer(problem: &InferenceProblem, basis: &ReducedBasis) -> Result<Inferred> {
    match problem.variant {
        InferenceVariant::GalerkinLs => infer_galerkin(problem, basis),
        InferenceVariant::ChOpInf => infer_ch(problem, basis),
        InferenceVariant::VchOpInf => infer_vch(problem, basis),
    }
}

/// Constant term of a centered model from the initial velocity `v0`.
///
/// Hamiltonian variants: `(J U)^T (v0 - J grad f(x0)) = U^T A x0`.
/// Galerkin: `U^T (v0 - J grad f(x0)) = U^T J A x0`.
pub fn centered_shift_nonintrusive(
    v0: &DVector<f64>,
    x0: &DVector<f64>,
    basis: &ReducedBasis,
    variant: InferenceVariant,
    nonlinear: Option<&dyn NonlinearPart>,
) -> Result<DVector<f64>> {
    check_dim("initial velocity", basis.full_dim(), v0.len())?;
    check_dim("initial state", basis.full_dim(), x0.len())?;
    let mut v = v0.clone();
    if let Some(f) = nonlinear {
        v -= apply_j(&f.gradient(x0));
    }
    let u = basis.matrix();
    Ok(match variant {
        InferenceVariant::GalerkinLs => u.tr_mul(&v),
        _ => u.tr_mul(&(-apply_j(&v))),
    })
}

/// Packages an inferred operator into a reduced model that
/// [`crate::rom::integrate_rom`] runs like an intrusive one.
#[allow(clippy::too_many_arguments)]
pub fn assemble_opinf_rom(
    operator: DMatrix<f64>,
    shift: DVector<f64>,
    basis: Arc<ReducedBasis>,
    variant: InferenceVariant,
    center: Option<DVector<f64>>,
    x0: &DVector<f64>,
    nonlinear: Option<Arc<dyn NonlinearPart>>,
    reprojected: bool,
) -> Result<ReducedModel> {
    if center.is_none() && shift.iter().any(|&s| s != 0.0) {
        return Err(Error::InvalidArgument(
            "uncentered inferred model cannot carry a constant shift".into(),
        ));
    }
    let dynamics = match variant {
        InferenceVariant::GalerkinLs => Dynamics::Galerkin { op: operator, shift },
        InferenceVariant::ChOpInf => Dynamics::LeastSquares {
            j_hat: reduced_j_matrix(basis.matrix()),
            a_hat: operator,
            shift,
        },
        InferenceVariant::VchOpInf => {
            let j_hat = reduced_j_matrix(basis.matrix());
            let smin = sigma_min(&j_hat);
            if !(smin > DEGENERATE_SIGMA) {
                return Err(Error::DegenerateSymplectic { sigma_min: smin });
            }
            Dynamics::Consistent {
                j_hat,
                a_hat: operator,
                shift,
            }
        }
    };
    let provenance = if reprojected {
        Provenance::OpInfReprojected
    } else {
        Provenance::OpInf
    };
    ReducedModel::from_parts(dynamics, basis, center, x0, None, nonlinear, provenance)
}

/// Options of the end-to-end inference pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpInfOptions {
    pub variant: InferenceVariant,
    pub reprojected: bool,
    pub centered: bool,
    /// Requested velocity source. `Exact` falls back to `Central2` when the
    /// data carry no velocities.
    pub velocity: VelocitySource,
}

/// Result of [`learn_rom`].
#[derive(Clone, Debug)]
pub struct LearnedRom {
    pub model: ReducedModel,
    pub inferred: Inferred,
    pub velocity_source: VelocitySource,
}

/// Builds the training problem from `data` (already re-projected or a plain
/// trajectory) and the chosen velocity source.
pub fn build_problem(
    data: &SnapshotSet,
    basis: &ReducedBasis,
    x0: &DVector<f64>,
    nonlinear: Option<&dyn NonlinearPart>,
    opts: &OpInfOptions,
) -> Result<(InferenceProblem, VelocitySource)> {
    check_dim("snapshot rows", basis.full_dim(), data.dim())?;
    let (x_t, source) = match (opts.velocity, data.velocities()) {
        (VelocitySource::Exact, Some(v)) => (v.clone(), VelocitySource::Exact),
        (VelocitySource::Exact, None) => (
            finite_difference_velocity(data, DifferenceScheme::Central2)?,
            VelocitySource::Central2,
        ),
        (other, _) => (
            finite_difference_velocity(data, other.scheme().expect("difference scheme"))?,
            other,
        ),
    };
    let u = basis.matrix();
    let mut shifted = data.states().clone();
    if opts.centered {
        for mut col in shifted.column_iter_mut() {
            col -= x0;
        }
    }
    let x_hat = u.tr_mul(&shifted);
    let k = data.len();
    let mut f_hat = DMatrix::zeros(basis.n(), k);
    if let Some(f) = nonlinear {
        let lifted = if opts.centered {
            let mut l = u * &x_hat;
            for mut col in l.column_iter_mut() {
                col += x0;
            }
            l
        } else {
            u * &x_hat
        };
        for (j, col) in lifted.column_iter().enumerate() {
            let g = f.gradient(&col.into_owned());
            let proj = match opts.variant {
                InferenceVariant::GalerkinLs => u.tr_mul(&apply_j(&g)),
                _ => u.tr_mul(&g),
            };
            f_hat.set_column(j, &proj);
        }
    }
    let shift = if opts.centered {
        let v0 = x_t.column(0).into_owned();
        centered_shift_nonintrusive(&v0, x0, basis, opts.variant, nonlinear)?
    } else {
        DVector::zeros(basis.n())
    };
    Ok((
        InferenceProblem {
            x_hat,
            x_t,
            f_hat,
            shift,
            variant: opts.variant,
            reprojected: opts.reprojected,
            centered: opts.centered,
            dt: data.dt(),
        },
        source,
    ))
}

/// End-to-end inference on a linear system: velocity selection, optional
/// re-projection, inference, assembly, and the `eps_dt` / `eps_a`
/// diagnostics. Re-projection with exact velocities projects the given
/// snapshots; with finite differences it generates a new Markovian
/// trajectory with the implicit midpoint map at the snapshot spacing.
///
/// `eps_dt` compares the velocities used against the system's true
/// velocity at the training states; it is zero for exact velocities.
pub fn learn_rom(
    sys: &HamiltonianSystem,
    snaps: &SnapshotSet,
    basis: Arc<ReducedBasis>,
    opts: &OpInfOptions,
) -> Result<LearnedRom> {
    let x0 = snaps.first();
    let data = if opts.reprojected && opts.velocity == VelocitySource::Exact {
        // With the exact velocity map available no new trajectory is needed.
        project_snapshots(sys, snaps, &basis, &x0, opts.centered)?
    } else if opts.reprojected {
        let stepper = MidpointStepper::new(sys, snaps.dt())?;
        let mut data = reproject_states(&stepper, &basis, &x0, snaps.len() - 1, opts.centered)?;
        if opts.velocity != VelocitySource::Exact {
            // Differences are taken along the re-projected trajectory itself.
            let (states, _) = data.into_parts();
            data = SnapshotSet::new(states, snaps.t0(), snaps.dt())?;
        }
        data
    } else {
        snaps.clone()
    };
    let nonlinear = sys.nonlinear().map(|f| f.as_ref());
    let (problem, source) = build_problem(&data, &basis, &x0, nonlinear, opts)?;
    let eps_dt = match source {
        VelocitySource::Exact => 0.0,
        _ => time_residual(&(&problem.x_t - sys.velocity_mat(data.states())), data.dt()),
    };
    let inferred = infer(&problem, &basis)?;
    let model = assemble_opinf_rom(
        inferred.operator.clone(),
        problem.shift.clone(),
        basis,
        opts.variant,
        opts.centered.then(|| x0.clone()),
        &x0,
        sys.nonlinear().cloned(),
        opts.reprojected,
    )?
    .with_diagnostics(InferenceDiagnostics {
        eps_dt,
        eps_a: inferred.residual,
        velocity_source: source,
    });
    Ok(LearnedRom {
        model,
        inferred,
        velocity_source: source,
    })
}
