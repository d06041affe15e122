//! Intrusive reduced models and their time integration.
//!
//! All three variants approximate `x ~ xbar + U xhat` (`xbar = x0` when
//! centered, zero otherwise):
//!
//! * Galerkin: `xhat' = U^T J grad H(xbar + U xhat)`;
//! * least-squares Hamiltonian: `xhat' = Jhat U^T grad H(xbar + U xhat)`;
//! * variationally consistent Hamiltonian:
//!   `Jhat^T xhat' = U^T grad H(xbar + U xhat)`,
//!
//! with `Jhat = U^T J U`. Every variant is advanced with the implicit
//! midpoint rule, written in the common form
//! `E (y - x) / dt = L (y + x) / 2 + c + B W^T grad f(xbar + U (y + x) / 2)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::basis::{reduced_j_matrix, ReducedBasis, DEGENERATE_SIGMA};
use crate::error::{check_dim, Error, Result};
use crate::fom::{HamiltonianSystem, NonlinearPart, SnapshotSet, TimeGrid};
use crate::linalg::{apply_j_mat, apply_jt_mat, sigma_min, symmetric_part};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RomVariant {
    Galerkin,
    LeastSquaresHam,
    ConsistentHam,
}

impl RomVariant {
    pub const ALL: [RomVariant; 3] = [
        RomVariant::Galerkin,
        RomVariant::LeastSquaresHam,
        RomVariant::ConsistentHam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RomVariant::Galerkin => "galerkin",
            RomVariant::LeastSquaresHam => "lsq_ham",
            RomVariant::ConsistentHam => "consistent_ham",
        }
    }

    pub fn is_hamiltonian(self) -> bool {
        !matches!(self, RomVariant::Galerkin)
    }
}

impl fmt::Display for RomVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RomVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "galerkin" | "g" => Ok(RomVariant::Galerkin),
            "lsq_ham" | "least_squares_ham" | "leastsquaresham" => Ok(RomVariant::LeastSquaresHam),
            "consistent_ham" | "consistent" | "consistentham" => Ok(RomVariant::ConsistentHam),
            other => Err(Error::InvalidArgument(format!("unknown ROM variant '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Intrusive,
    OpInf,
    OpInfReprojected,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Intrusive => "intrusive",
            Provenance::OpInf => "opinf",
            Provenance::OpInfReprojected => "opinf_reprojected",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reduced operators of one model.
#[derive(Clone, Debug)]
pub enum Dynamics {
    /// `xhat' = op xhat + shift`, `op = U^T J A U`, `shift = U^T J A xbar`.
    Galerkin {
        op: DMatrix<f64>,
        shift: DVector<f64>,
    },
    /// `xhat' = Jhat (Ahat xhat + shift)`, `shift = U^T A xbar`.
    LeastSquares {
        j_hat: DMatrix<f64>,
        a_hat: DMatrix<f64>,
        shift: DVector<f64>,
    },
    /// `Jhat^T xhat' = Ahat xhat + shift`, `shift = U^T A xbar`.
    Consistent {
        j_hat: DMatrix<f64>,
        a_hat: DMatrix<f64>,
        shift: DVector<f64>,
    },
}

/// Residual diagnostics attached to inferred models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceDiagnostics {
    /// L2-in-time norm of `xdot - D_t(x)` on the training snapshots.
    pub eps_dt: f64,
    /// L2-in-time norm of the inference residual on the training data.
    pub eps_a: f64,
    pub velocity_source: crate::opinf::VelocitySource,
}

#[derive(Clone)]
pub struct ReducedModel {
    dynamics: Dynamics,
    basis: Arc<ReducedBasis>,
    center: Option<DVector<f64>>,
    x0_hat: DVector<f64>,
    /// `1/2 xbar^T A xbar` when known.
    energy_offset: Option<f64>,
    nonlinear: Option<Arc<dyn NonlinearPart>>,
    provenance: Provenance,
    diagnostics: Option<InferenceDiagnostics>,
    warnings: Vec<String>,
}

impl fmt::Debug for ReducedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedModel")
            .field("variant", &self.variant())
            .field("n", &self.n())
            .field("centered", &self.is_centered())
            .field("provenance", &self.provenance)
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl ReducedModel {
    /// Packages reduced operators. Used by the intrusive builders below and
    /// by operator inference.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dynamics: Dynamics,
        basis: Arc<ReducedBasis>,
        center: Option<DVector<f64>>,
        x0: &DVector<f64>,
        energy_offset: Option<f64>,
        nonlinear: Option<Arc<dyn NonlinearPart>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = basis.n();
        let (dim_op, shift_len) = match &dynamics {
            Dynamics::Galerkin { op, shift } => (op.nrows().max(op.ncols()), shift.len()),
            Dynamics::LeastSquares { a_hat, shift, .. } | Dynamics::Consistent { a_hat, shift, .. } => {
                (a_hat.nrows().max(a_hat.ncols()), shift.len())
            }
        };
        check_dim("reduced operator", n, dim_op)?;
        check_dim("reduced shift", n, shift_len)?;
        check_dim("initial state", basis.full_dim(), x0.len())?;
        let x0_hat = match &center {
            Some(c) => {
                check_dim("center", basis.full_dim(), c.len())?;
                DVector::zeros(n)
            }
            None => basis.project(x0),
        };
        Ok(Self {
            dynamics,
            basis,
            center,
            x0_hat,
            energy_offset,
            nonlinear,
            provenance,
            diagnostics: None,
            warnings: Vec::new(),
        })
    }

    pub fn with_diagnostics(mut self, d: InferenceDiagnostics) -> Self {
        self.diagnostics = Some(d);
        self
    }

    pub fn variant(&self) -> RomVariant {
        match self.dynamics {
            Dynamics::Galerkin { .. } => RomVariant::Galerkin,
            Dynamics::LeastSquares { .. } => RomVariant::LeastSquaresHam,
            Dynamics::Consistent { .. } => RomVariant::ConsistentHam,
        }
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn basis(&self) -> &ReducedBasis {
        &self.basis
    }

    pub fn basis_arc(&self) -> &Arc<ReducedBasis> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn is_centered(&self) -> bool {
        self.center.is_some()
    }

    pub fn center(&self) -> Option<&DVector<f64>> {
        self.center.as_ref()
    }

    pub fn x0_hat(&self) -> &DVector<f64> {
        &self.x0_hat
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn diagnostics(&self) -> Option<&InferenceDiagnostics> {
        self.diagnostics.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn a_hat(&self) -> Option<&DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Galerkin { .. } => None,
            Dynamics::LeastSquares { a_hat, .. } | Dynamics::Consistent { a_hat, .. } => Some(a_hat),
        }
    }

    pub fn j_hat(&self) -> Option<&DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Galerkin { .. } => None,
            Dynamics::LeastSquares { j_hat, .. } | Dynamics::Consistent { j_hat, .. } => Some(j_hat),
        }
    }

    pub fn shift(&self) -> &DVector<f64> {
        match &self.dynamics {
            Dynamics::Galerkin { shift, .. }
            | Dynamics::LeastSquares { shift, .. }
            | Dynamics::Consistent { shift, .. } => shift,
        }
    }

    /// Reduced Hamiltonian `1/2 xbar^T A xbar + shift^T xhat + 1/2 xhat^T Ahat xhat
    /// (+ f(xbar + U xhat))`; `None` for Galerkin models. The constant term
    /// is omitted when it is not known (inferred models).
    pub fn reduced_energy(&self, xhat: &DVector<f64>) -> Option<f64> {
        let (a_hat, shift) = match &self.dynamics {
            Dynamics::Galerkin { .. } => return None,
            Dynamics::LeastSquares { a_hat, shift, .. } | Dynamics::Consistent { a_hat, shift, .. } => {
                (a_hat, shift)
            }
        };
        let mut e = self.energy_offset.unwrap_or(0.0) + shift.dot(xhat) + 0.5 * xhat.dot(&(a_hat * xhat));
        if let Some(f) = &self.nonlinear {
            e += f.value(&self.lift(xhat));
        }
        Some(e)
    }

    /// `xbar + U xhat`.
    pub fn lift(&self, xhat: &DVector<f64>) -> DVector<f64> {
        let mut x = self.basis.lift(xhat);
        if let Some(c) = &self.center {
            x += c;
        }
        x
    }

    pub(crate) fn push_warning(&mut self, w: String) {
        self.warnings.push(w);
    }
}

struct Projected {
    a_hat: DMatrix<f64>,
    shift: DVector<f64>,
    center: Option<DVector<f64>>,
    offset: f64,
}

fn project_operator(sys: &HamiltonianSystem, basis: &ReducedBasis, centered: bool) -> Result<Projected> {
    check_dim("basis rows", sys.dim(), basis.full_dim())?;
    let u = basis.matrix();
    let a_hat = symmetric_part(&u.tr_mul(&sys.apply_a_mat(u)));
    let center = centered.then(|| sys.x0().clone());
    let (shift, offset) = match &center {
        Some(c) => {
            let ac = sys.apply_a(c);
            (u.tr_mul(&ac), 0.5 * c.dot(&ac))
        }
        None => (DVector::zeros(basis.n()), 0.0),
    };
    Ok(Projected {
        a_hat,
        shift,
        center,
        offset,
    })
}

/// Galerkin ROM `xhat' = U^T J A (xbar + U xhat)`.
pub fn build_galerkin(sys: &HamiltonianSystem, basis: Arc<ReducedBasis>, centered: bool) -> Result<ReducedModel> {
    check_dim("basis rows", sys.dim(), basis.full_dim())?;
    let u = basis.matrix();
    let op = u.tr_mul(&apply_j_mat(&sys.apply_a_mat(u)));
    let center = centered.then(|| sys.x0().clone());
    let shift = match &center {
        Some(c) => {
            let jac = apply_j_mat(&DMatrix::from_column_slice(c.len(), 1, sys.apply_a(c).as_slice()));
            DVector::from_column_slice(u.tr_mul(&jac).as_slice())
        }
        None => DVector::zeros(basis.n()),
    };
    ReducedModel::from_parts(
        Dynamics::Galerkin { op, shift },
        basis,
        center,
        sys.x0(),
        None,
        sys.nonlinear().cloned(),
        Provenance::Intrusive,
    )
}

/// Least-squares Hamiltonian ROM `xhat' = Jhat (Ahat xhat + shift)`.
pub fn build_lsq_ham(sys: &HamiltonianSystem, basis: Arc<ReducedBasis>, centered: bool) -> Result<ReducedModel> {
    let p = project_operator(sys, &basis, centered)?;
    let j_hat = reduced_j_matrix(basis.matrix());
    let smin = sigma_min(&j_hat);
    let mut model = ReducedModel::from_parts(
        Dynamics::LeastSquares {
            j_hat,
            a_hat: p.a_hat,
            shift: p.shift,
        },
        basis,
        p.center,
        sys.x0(),
        Some(p.offset),
        sys.nonlinear().cloned(),
        Provenance::Intrusive,
    )?;
    if smin <= DEGENERATE_SIGMA {
        model.push_warning(format!("reduced symplectic matrix is near-degenerate (sigma_min = {smin:.3e})"));
    }
    Ok(model)
}

/// Variationally consistent Hamiltonian ROM `Jhat^T xhat' = Ahat xhat + shift`.
pub fn build_consistent_ham(
    sys: &HamiltonianSystem,
    basis: Arc<ReducedBasis>,
    centered: bool,
) -> Result<ReducedModel> {
    let p = project_operator(sys, &basis, centered)?;
    let j_hat = reduced_j_matrix(basis.matrix());
    let smin = sigma_min(&j_hat);
    if !(smin > DEGENERATE_SIGMA) {
        return Err(Error::DegenerateSymplectic { sigma_min: smin });
    }
    ReducedModel::from_parts(
        Dynamics::Consistent {
            j_hat,
            a_hat: p.a_hat,
            shift: p.shift,
        },
        basis,
        p.center,
        sys.x0(),
        Some(p.offset),
        sys.nonlinear().cloned(),
        Provenance::Intrusive,
    )
}

pub fn build_rom(
    sys: &HamiltonianSystem,
    basis: Arc<ReducedBasis>,
    variant: RomVariant,
    centered: bool,
) -> Result<ReducedModel> {
    match variant {
        RomVariant::Galerkin => build_galerkin(sys, basis, centered),
        RomVariant::LeastSquaresHam => build_lsq_ham(sys, basis, centered),
        RomVariant::ConsistentHam => build_consistent_ham(sys, basis, centered),
    }
}

// ---------------------------------------------------------------------------
// Integration

const NEWTON_MAX_ITERS: usize = 50;

/// Implicit midpoint map for a reduced model, with the linear step matrix
/// factored once per `(model, dt)`.
pub struct ReducedStepper<'a> {
    model: &'a ReducedModel,
    dt: f64,
    lhs: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    rhs: DMatrix<f64>,
    forcing: DVector<f64>,
    /// `E / dt` and `L`, kept for the nonlinear residual.
    e_over_dt: DMatrix<f64>,
    l: DMatrix<f64>,
    /// `B` and `W` of the nonlinear term.
    nl: Option<(Option<DMatrix<f64>>, DMatrix<f64>)>,
}

impl<'a> ReducedStepper<'a> {
    pub fn new(model: &'a ReducedModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let n = model.n();
        let id = DMatrix::<f64>::identity(n, n);
        let u = model.basis.matrix();
        let (e, l, c, b, w) = match &model.dynamics {
            Dynamics::Galerkin { op, shift } => (id.clone(), op.clone(), shift.clone(), None, apply_jt_mat(u)),
            Dynamics::LeastSquares { j_hat, a_hat, shift } => (
                id.clone(),
                j_hat * a_hat,
                j_hat * shift,
                Some(j_hat.clone()),
                u.clone(),
            ),
            Dynamics::Consistent { j_hat, a_hat, shift } => {
                (j_hat.transpose(), a_hat.clone(), shift.clone(), None, u.clone())
            }
        };
        let e_over_dt = e / dt;
        let lhs = &e_over_dt - &l * 0.5;
        let rhs = &e_over_dt + &l * 0.5;
        let lu = lhs.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Factorization(
                "reduced midpoint step matrix is singular".into(),
            ));
        }
        Ok(Self {
            model,
            dt,
            lhs,
            lu,
            rhs,
            forcing: c,
            e_over_dt,
            l,
            nl: model.nonlinear.as_ref().map(|_| (b, w)),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let base = &self.rhs * x + &self.forcing;
        let y = self
            .lu
            .solve(&base)
            .ok_or_else(|| Error::Factorization("singular reduced solve".into()))?;
        match (&self.nl, &self.model.nonlinear) {
            (Some((b, w)), Some(f)) => self.newton(x, y, b.as_ref(), w, f.as_ref()),
            _ => Ok(y),
        }
    }

    fn nonlinear_term(&self, mid: &DVector<f64>, b: Option<&DMatrix<f64>>, w: &DMatrix<f64>, f: &dyn NonlinearPart) -> DVector<f64> {
        let g = w.tr_mul(&f.gradient(&self.model.lift(mid)));
        match b {
            Some(b) => b * g,
            None => g,
        }
    }

    fn newton(
        &self,
        x: &DVector<f64>,
        mut y: DVector<f64>,
        b: Option<&DMatrix<f64>>,
        w: &DMatrix<f64>,
        f: &dyn NonlinearPart,
    ) -> Result<DVector<f64>> {
        let u = self.model.basis.matrix();
        let mut res_norm = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITERS {
            let mid = (&y + x) * 0.5;
            let resid = &self.e_over_dt * (&y - x) - &self.l * &mid - &self.forcing - self.nonlinear_term(&mid, b, w, f);
            res_norm = resid.norm();
            let scale = 1.0 + (&self.e_over_dt * x).norm() + self.forcing.norm();
            if res_norm <= 1e-13 * scale {
                return Ok(y);
            }
            let delta = match f.hessian(&self.model.lift(&mid)) {
                Some(hess) => {
                    let mut jn = w.tr_mul(&(hess * u)) * 0.5;
                    if let Some(b) = b {
                        jn = b * jn;
                    }
                    (&self.lhs - jn)
                        .lu()
                        .solve(&resid)
                        .ok_or_else(|| Error::Factorization("singular Newton matrix".into()))?
                }
                None => self
                    .lu
                    .solve(&resid)
                    .ok_or_else(|| Error::Factorization("singular chord solve".into()))?,
            };
            y -= delta;
        }
        Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITERS,
            residual: res_norm,
        })
    }
}

/// Integrates a reduced model from its reduced initial state, returning
/// reduced snapshots (`n` rows).
pub fn integrate_rom(model: &ReducedModel, grid: &TimeGrid) -> Result<SnapshotSet> {
    let stepper = ReducedStepper::new(model, grid.dt)?;
    let mut out = DMatrix::zeros(model.n(), grid.samples());
    out.set_column(0, &model.x0_hat);
    let mut x = model.x0_hat.clone();
    for k in 1..=grid.steps() {
        x = stepper.step(&x)?;
        if k % grid.sample_every == 0 {
            out.set_column(k / grid.sample_every, &x);
        }
    }
    SnapshotSet::new(out, 0.0, grid.sample_dt())
}

/// `xtilde_k = xbar + U xhat_k` column-wise.
pub fn reconstruct(
    basis: &ReducedBasis,
    reduced: &SnapshotSet,
    center: Option<&DVector<f64>>,
) -> Result<SnapshotSet> {
    check_dim("reduced snapshot rows", basis.n(), reduced.dim())?;
    let mut x = basis.matrix() * reduced.states();
    if let Some(c) = center {
        check_dim("center", basis.full_dim(), c.len())?;
        for mut col in x.column_iter_mut() {
            col += c;
        }
    }
    SnapshotSet::new(x, reduced.t0(), reduced.dt())
}

/// Runs a model on `grid` and lifts the result to full order.
pub fn simulate(model: &ReducedModel, grid: &TimeGrid) -> Result<(SnapshotSet, SnapshotSet)> {
    let reduced = integrate_rom(model, grid)?;
    let full = reconstruct(model.basis(), &reduced, model.center())?;
    Ok((reduced, full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{cotangent_lift, ordinary_pod, ReducedBasis};
    use crate::fom::{build_wave_fom, integrate_midpoint, QuadOperator};

    fn wave_data(m: usize) -> (HamiltonianSystem, SnapshotSet) {
        let sys = build_wave_fom(m, 0.1, 1.0).unwrap();
        let snaps = integrate_midpoint(&sys, &TimeGrid::new(2.0, 0.02, 1).unwrap()).unwrap();
        (sys, snaps)
    }

    fn energy_drift(model: &ReducedModel, reduced: &SnapshotSet) -> f64 {
        let e0 = model.reduced_energy(&reduced.first()).unwrap();
        (0..reduced.len())
            .map(|k| (model.reduced_energy(&reduced.column(k)).unwrap() - e0).abs())
            .fold(0.0, f64::max)
            / e0.abs().max(1.0)
    }

    #[test]
    fn full_basis_reproduces_fom() {
        let (sys, snaps) = wave_data(8);
        let basis = Arc::new(ReducedBasis::from_orthonormal(DMatrix::identity(16, 16), None).unwrap());
        let grid = TimeGrid::new(2.0, 0.02, 1).unwrap();
        for variant in RomVariant::ALL {
            for centered in [false, true] {
                let model = build_rom(&sys, basis.clone(), variant, centered).unwrap();
                let (_, full) = simulate(&model, &grid).unwrap();
                let err = (full.states() - snaps.states()).amax();
                assert!(err < 1e-10, "{variant} centered={centered}: {err}");
            }
        }
    }

    #[test]
    fn galerkin_uncentered_has_zero_shift() {
        let (sys, snaps) = wave_data(10);
        let basis = Arc::new(ordinary_pod(&snaps, 4, false).unwrap());
        let model = build_galerkin(&sys, basis, false).unwrap();
        assert_eq!(model.shift().amax(), 0.0);
        assert!(model.reduced_energy(model.x0_hat()).is_none());
    }

    #[test]
    fn hamiltonian_variants_conserve_energy() {
        let (sys, snaps) = wave_data(20);
        let basis = Arc::new(ordinary_pod(&snaps, 8, true).unwrap());
        let grid = TimeGrid::new(4.0, 0.05, 1).unwrap();
        for variant in [RomVariant::LeastSquaresHam, RomVariant::ConsistentHam] {
            let model = build_rom(&sys, basis.clone(), variant, true).unwrap();
            let reduced = integrate_rom(&model, &grid).unwrap();
            assert!(energy_drift(&model, &reduced) < 1e-10);
            // Centering pins the energy level to the FOM's.
            let h0 = sys.hamiltonian(sys.x0()).unwrap();
            assert!((model.reduced_energy(&reduced.first()).unwrap() - h0).abs() <= 1e-14 * h0.abs());
            assert_eq!(model.x0_hat().amax(), 0.0);
        }
    }

    #[test]
    fn equivariant_basis_collapses_variants() {
        let (sys, snaps) = wave_data(16);
        let basis = Arc::new(cotangent_lift(&snaps, 8, true).unwrap());
        let grid = TimeGrid::new(2.0, 0.02, 1).unwrap();
        let runs: Vec<_> = RomVariant::ALL
            .iter()
            .map(|&v| integrate_rom(&build_rom(&sys, basis.clone(), v, true).unwrap(), &grid).unwrap())
            .collect();
        assert!((runs[0].states() - runs[1].states()).amax() < 1e-9);
        assert!((runs[1].states() - runs[2].states()).amax() < 1e-9);

        let g = build_galerkin(&sys, basis.clone(), true).unwrap();
        let c = build_consistent_ham(&sys, basis, true).unwrap();
        let Dynamics::Galerkin { op, .. } = g.dynamics() else { unreachable!() };
        let jn = crate::linalg::canonical_j(8);
        assert!((op - &jn * c.a_hat().unwrap()).amax() < 1e-10);
    }

    #[test]
    fn degenerate_basis_rejected_for_consistent_only() {
        let sys = HamiltonianSystem::new(
            QuadOperator::General(DMatrix::identity(4, 4)),
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let mut u = DMatrix::zeros(4, 2);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        let basis = Arc::new(ReducedBasis::from_orthonormal(u, None).unwrap());
        assert!(matches!(
            build_consistent_ham(&sys, basis.clone(), false),
            Err(Error::DegenerateSymplectic { .. })
        ));
        let lsq = build_lsq_ham(&sys, basis, false).unwrap();
        assert_eq!(lsq.warnings().len(), 1);
    }

    #[test]
    fn reconstruct_examples() {
        let (sys, snaps) = wave_data(10);
        let basis = ordinary_pod(&snaps, 6, true).unwrap();
        let zero = SnapshotSet::new(DMatrix::zeros(6, 1), 0.0, 0.1).unwrap();
        let x = reconstruct(&basis, &zero, Some(sys.x0())).unwrap();
        assert_eq!(x.first(), *sys.x0());

        let un = ordinary_pod(&snaps, 6, false).unwrap();
        let v = un.lift(&DVector::from_fn(6, |i, _| i as f64 - 2.5));
        let xhat = SnapshotSet::new(DMatrix::from_column_slice(6, 1, un.project(&v).as_slice()), 0.0, 0.1).unwrap();
        let back = reconstruct(&un, &xhat, None).unwrap();
        assert!((back.first() - v).amax() < 1e-14);
        assert!(reconstruct(&un, &snaps, None).is_err());
    }

    #[test]
    fn zero_time_run_is_initial_state() {
        let (sys, snaps) = wave_data(10);
        let basis = Arc::new(ordinary_pod(&snaps, 4, false).unwrap());
        let model = build_consistent_ham(&sys, basis, false).unwrap();
        let out = integrate_rom(&model, &TimeGrid::new(0.0, 0.1, 1).unwrap()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.first(), *model.x0_hat());
    }

    struct Quartic(f64);

    impl NonlinearPart for Quartic {
        fn value(&self, x: &DVector<f64>) -> f64 {
            self.0 * x.iter().map(|v| v.powi(4)).sum::<f64>() / 4.0
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x.map(|v| self.0 * v.powi(3))
        }
        fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_diagonal(&x.map(|v| 3.0 * self.0 * v * v)))
        }
    }

    #[test]
    fn nonlinear_rom_energy_error_is_second_order() {
        let sys = build_wave_fom(8, 0.5, 1.0)
            .unwrap()
            .with_nonlinear(Arc::new(Quartic(0.3)));
        let mut u = DMatrix::zeros(16, 4);
        for (j, i) in [0, 3, 8, 11].into_iter().enumerate() {
            u[(i, j)] = 1.0;
        }
        let basis = Arc::new(ReducedBasis::from_orthonormal(u, None).unwrap());
        for variant in [RomVariant::LeastSquaresHam, RomVariant::ConsistentHam] {
            for centered in [false, true] {
                let model = build_rom(&sys, basis.clone(), variant, centered).unwrap();
                // Midpoint conserves non-quadratic energies only up to
                // O(dt^2), so halving the step should cut the drift by ~4.
                let drift = |dt: f64| {
                    let grid = TimeGrid::new(1.0, dt, 1).unwrap();
                    energy_drift(&model, &integrate_rom(&model, &grid).unwrap())
                };
                let (coarse, fine) = (drift(0.02), drift(0.01));
                let ratio = coarse / fine;
                assert!(fine < 5e-3, "{variant} centered={centered}: {fine}");
                assert!((3.0..5.0).contains(&ratio), "{variant} centered={centered}: ratio {ratio}");
            }
        }
    }
}
