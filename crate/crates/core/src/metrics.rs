//! Error measures and the terms of the a-priori error bound.

use nalgebra::DMatrix;

use crate::basis::{reduced_j_matrix, BasisKind, ReducedBasis};
use crate::error::{check_dim, Error, Result};
use crate::fom::{HamiltonianSystem, SnapshotSet};
use crate::linalg::{column_norms_sq, l2_in_time};
use crate::opinf::VelocitySource;
use crate::rom::{Provenance, ReducedModel, RomVariant};

/// `||X - Xt||_F / ||X||_F`.
pub fn relative_l2(x: &DMatrix<f64>, x_tilde: &DMatrix<f64>) -> Result<f64> {
    check_dim("compared rows", x.nrows(), x_tilde.nrows())?;
    check_dim("compared columns", x.ncols(), x_tilde.ncols())?;
    let denom = x.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("relative error of a zero reference".into()));
    }
    Ok((x - x_tilde).norm() / denom)
}

/// Signed energy errors `(t_k, H(x_k) - H(x0))`, with `x0` the system's
/// initial state.
pub fn hamiltonian_trace(sys: &HamiltonianSystem, snaps: &SnapshotSet) -> Result<Vec<(f64, f64)>> {
    check_dim("trajectory rows", sys.dim(), snaps.dim())?;
    let h_ref = sys.hamiltonian(sys.x0())?;
    snaps
        .times()
        .into_iter()
        .enumerate()
        .map(|(k, t)| Ok((t, sys.hamiltonian(&snaps.column(k))? - h_ref)))
        .collect()
}

/// Largest absolute entry of a trace.
pub fn max_abs_error(trace: &[(f64, f64)]) -> f64 {
    trace.iter().fold(0.0, |m, &(_, e)| m.max(e.abs()))
}

/// `lambda_max(Jhat^-T Jhat^-1 - I) = 1 / sigma_min(Jhat)^2 - 1`.
pub fn canonicity_deviation(j_hat: &DMatrix<f64>) -> Result<f64> {
    check_dim("reduced symplectic matrix", j_hat.nrows(), j_hat.ncols())?;
    // The eigenvalues of Jhat^T Jhat are the squared singular values of
    // Jhat. Working with them keeps the canonical case exact (the Gram
    // matrix of an orthogonal symplectic Jhat is the identity to the bit).
    let lam_min = j_hat.tr_mul(j_hat).symmetric_eigenvalues().min();
    let smin = j_hat.singular_values().min();
    if !(lam_min > 0.0) || !(smin > 0.0) {
        return Err(Error::DegenerateSymplectic { sigma_min: smin.max(0.0) });
    }
    Ok(1.0 / lam_min - 1.0)
}

/// Raw terms of the error bound. Lipschitz and Gronwall constants are not
/// estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundTerms {
    /// `sqrt(sum_{i>n} sigma_i^2)`.
    pub proj_tail: f64,
    /// `1 / sigma_min(Jhat)^2 - 1`; infinite for a degenerate basis.
    pub canon_dev: f64,
    /// L2-in-time norm of `grad H` along the reference trajectory.
    pub grad_norm: f64,
    pub eps_dt: f64,
    pub eps_a: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunProvenance {
    pub variant: RomVariant,
    pub basis_kind: BasisKind,
    pub n: usize,
    pub centered: bool,
    pub provenance: Provenance,
    pub velocity_source: Option<VelocitySource>,
    pub dt: f64,
    pub t_final: f64,
}

impl RunProvenance {
    pub fn reprojected(&self) -> bool {
        self.provenance == Provenance::OpInfReprojected
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub rel_l2: f64,
    pub ham_trace: Vec<(f64, f64)>,
    pub bound_terms: BoundTerms,
    pub provenance: RunProvenance,
}

impl RunReport {
    pub fn max_ham_error(&self) -> f64 {
        max_abs_error(&self.ham_trace)
    }
}

/// Assembles the report of one run. `fom` and `rom` are full-order
/// trajectories on the same grid; `rom` is typically the reconstruction
/// `xbar + U xhat`.
pub fn bound_report(
    sys: &HamiltonianSystem,
    basis: &ReducedBasis,
    model: &ReducedModel,
    fom: &SnapshotSet,
    rom: &SnapshotSet,
) -> Result<RunReport> {
    check_dim("basis rows", sys.dim(), basis.full_dim())?;
    let rel_l2 = relative_l2(fom.states(), rom.states())?;
    let ham_trace = hamiltonian_trace(sys, rom)?;
    let canon_dev = match canonicity_deviation(&reduced_j_matrix(basis.matrix())) {
        Ok(c) => c,
        Err(Error::DegenerateSymplectic { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let grad_norm = l2_in_time(&column_norms_sq(&sys.gradient_mat(fom.states())), fom.dt());
    let (eps_dt, eps_a, source) = match model.diagnostics() {
        Some(d) => (
            d.eps_dt,
            d.eps_a,
            Some(d.velocity_source),
        ),
        None => (0.0, 0.0, None),
    };
    let t_final = fom.t0() + fom.dt() * (fom.len().saturating_sub(1)) as f64;
    Ok(RunReport {
        rel_l2,
        ham_trace,
        bound_terms: BoundTerms {
            proj_tail: basis.tail_energy().max(0.0).sqrt(),
            canon_dev,
            grad_norm,
            eps_dt,
            eps_a,
        },
        provenance: RunProvenance {
            variant: model.variant(),
            basis_kind: basis.kind(),
            n: basis.n(),
            centered: model.is_centered(),
            provenance: model.provenance(),
            velocity_source: source,
            dt: fom.dt(),
            t_final,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{cotangent_lift, ordinary_pod};
    use crate::fom::{build_wave_fom, integrate_midpoint, TimeGrid};
    use crate::linalg::canonical_j;
    use crate::rom::{build_consistent_ham, build_lsq_ham, simulate};
    use std::sync::Arc;

    #[test]
    fn relative_l2_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(relative_l2(&x, &x).unwrap(), 0.0);
        assert_eq!(relative_l2(&x, &DMatrix::zeros(2, 1)).unwrap(), 1.0);
        let xt = DMatrix::from_column_slice(2, 1, &[0.0, 4.0]);
        assert!((relative_l2(&x, &xt).unwrap() - 0.6).abs() < 1e-15);
        assert!(relative_l2(&DMatrix::zeros(2, 1), &x).is_err());
        assert!(relative_l2(&x, &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn canonicity_examples() {
        assert_eq!(canonicity_deviation(&canonical_j(6)).unwrap(), 0.0);
        let half = canonical_j(2) * 0.5;
        assert!((canonicity_deviation(&half).unwrap() - 3.0).abs() < 1e-14);
        assert!(canonicity_deviation(&DMatrix::zeros(2, 2)).is_err());
    }

    fn wave() -> (HamiltonianSystem, SnapshotSet) {
        let sys = build_wave_fom(40, 0.1, 1.0).unwrap();
        let snaps = integrate_midpoint(&sys, &TimeGrid::new(4.0, 0.02, 1).unwrap()).unwrap();
        (sys, snaps)
    }

    #[test]
    fn fom_trace_is_flat() {
        let (sys, snaps) = wave();
        let h0 = sys.hamiltonian(sys.x0()).unwrap();
        let trace = hamiltonian_trace(&sys, &snaps).unwrap();
        assert_eq!(trace.len(), snaps.len());
        assert!(max_abs_error(&trace) <= 1e-10 * h0.abs().max(1.0));
    }

    #[test]
    fn trace_start_depends_on_centering() {
        let (sys, snaps) = wave();
        let grid = TimeGrid::new(4.0, 0.02, 1).unwrap();
        let h0 = sys.hamiltonian(sys.x0()).unwrap();
        let basis = Arc::new(ordinary_pod(&snaps, 20, false).unwrap());
        let model = build_lsq_ham(&sys, basis.clone(), false).unwrap();
        let (_, full) = simulate(&model, &grid).unwrap();
        let e0 = hamiltonian_trace(&sys, &full).unwrap()[0].1;
        let px0 = basis.lift(&basis.project(sys.x0()));
        let expected = sys.hamiltonian(&px0).unwrap() - h0;
        assert!(expected != 0.0);
        assert!((e0 - expected).abs() <= 1e-12);

        let cbasis = Arc::new(ordinary_pod(&snaps, 20, true).unwrap());
        let cmodel = build_consistent_ham(&sys, cbasis, true).unwrap();
        let (_, cfull) = simulate(&cmodel, &grid).unwrap();
        assert_eq!(hamiltonian_trace(&sys, &cfull).unwrap()[0].1, 0.0);
    }

    #[test]
    fn report_terms_for_equivariant_and_full_bases() {
        let (sys, snaps) = wave();
        let grid = TimeGrid::new(4.0, 0.02, 1).unwrap();
        let basis = Arc::new(cotangent_lift(&snaps, 20, true).unwrap());
        let model = build_consistent_ham(&sys, basis.clone(), true).unwrap();
        let (_, full) = simulate(&model, &grid).unwrap();
        let report = bound_report(&sys, &basis, &model, &snaps, &full).unwrap();
        assert!(report.bound_terms.canon_dev.abs() <= 1e-10);
        assert!(report.bound_terms.proj_tail > 0.0);
        assert!(report.bound_terms.grad_norm > 0.0);
        assert_eq!(report.provenance.provenance, Provenance::Intrusive);
        assert!((report.provenance.t_final - 4.0).abs() < 1e-12);

        let id = Arc::new(ReducedBasis::from_orthonormal(DMatrix::identity(80, 80), None).unwrap());
        let model = build_consistent_ham(&sys, id.clone(), false).unwrap();
        let (_, full) = simulate(&model, &grid).unwrap();
        let report = bound_report(&sys, &id, &model, &snaps, &full).unwrap();
        assert_eq!(report.bound_terms.proj_tail, 0.0);
        assert!(report.rel_l2 <= 1e-9);
    }
}
