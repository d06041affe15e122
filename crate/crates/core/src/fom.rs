//! Canonical Hamiltonian full-order models `x' = J grad H(x)` with
//! `H(x) = 1/2 x^T A x + f(x)`, the built-in benchmark systems, and the
//! symplectic integrators that produce snapshot data.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{apply_j, apply_j_mat, asymmetry, max_abs};

/// Nonquadratic part `f` of a Hamiltonian, with its gradient and optionally
/// its Hessian.
pub trait NonlinearPart: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Inverse mass map acting on momenta. `M^-1` is only ever applied through
/// a stored factorization.
#[derive(Clone)]
pub enum MassInverse {
    Identity,
    /// Lumped mass: the diagonal of `M`.
    Diagonal(DVector<f64>),
    Factored {
        mass: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

impl MassInverse {
    pub fn from_mass(mass: &DMatrix<f64>) -> Result<Self> {
        if !mass.is_square() {
            return Err(Error::DimensionMismatch {
                context: "mass matrix columns",
                expected: mass.nrows(),
                actual: mass.ncols(),
            });
        }
        check_symmetric(mass)?;
        let m = mass.nrows();
        let off_diag = (0..m).any(|i| (0..m).any(|j| i != j && mass[(i, j)] != 0.0));
        if !off_diag {
            let diag = mass.diagonal();
            if diag.iter().any(|&d| d <= 0.0) {
                return Err(Error::MassNotSpd);
            }
            return Ok(MassInverse::Diagonal(diag));
        }
        let chol = Cholesky::new(mass.clone()).ok_or(Error::MassNotSpd)?;
        Ok(MassInverse::Factored {
            mass: mass.clone(),
            chol,
        })
    }

    pub fn apply(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            MassInverse::Identity => p.clone(),
            MassInverse::Diagonal(d) => {
                DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] / d[i])
            }
            MassInverse::Factored { chol, .. } => chol.solve(p),
        }
    }

    pub fn mass_matrix(&self, m: usize) -> DMatrix<f64> {
        match self {
            MassInverse::Identity => DMatrix::identity(m, m),
            MassInverse::Diagonal(d) => DMatrix::from_diagonal(d),
            MassInverse::Factored { mass, .. } => mass.clone(),
        }
    }
}

impl fmt::Debug for MassInverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MassInverse::Identity => write!(f, "Identity"),
            MassInverse::Diagonal(d) => write!(f, "Diagonal({})", d.len()),
            MassInverse::Factored { mass, .. } => write!(f, "Factored({})", mass.nrows()),
        }
    }
}

/// Symmetric quadratic operator `A`.
#[derive(Clone, Debug)]
pub enum QuadOperator {
    /// `A = diag(K, M^-1)` acting on `(q, p)`.
    Block {
        stiffness: DMatrix<f64>,
        mass: MassInverse,
    },
    General(DMatrix<f64>),
}

impl QuadOperator {
    pub fn dim(&self) -> usize {
        match self {
            QuadOperator::Block { stiffness, .. } => 2 * stiffness.nrows(),
            QuadOperator::General(a) => a.nrows(),
        }
    }

    /// `A X` for a block of column vectors.
    pub fn apply_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            QuadOperator::Block { stiffness, mass } => {
                let m = stiffness.nrows();
                let q = x.rows(0, m);
                let p = x.rows(m, m).into_owned();
                let mut out = DMatrix::zeros(2 * m, x.ncols());
                out.rows_mut(0, m).copy_from(&(stiffness * q));
                out.rows_mut(m, m).copy_from(&mass.apply(&p));
                out
            }
            QuadOperator::General(a) => a * x,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let col = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        DVector::from_column_slice(self.apply_mat(&col).as_slice())
    }

    /// Dense `A`. Forms `M^-1` explicitly for factored mass blocks, so this
    /// is meant for small systems and diagnostics.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.apply_mat(&DMatrix::identity(n, n))
    }
}

/// Canonical Hamiltonian system of even dimension `N = 2M`.
#[derive(Clone)]
pub struct HamiltonianSystem {
    quad: QuadOperator,
    nonlinear: Option<Arc<dyn NonlinearPart>>,
    x0: DVector<f64>,
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("dim", &self.dim())
            .field("quad", &self.quad)
            .field("nonlinear", &self.nonlinear.is_some())
            .finish()
    }
}

impl HamiltonianSystem {
    pub fn new(quad: QuadOperator, x0: DVector<f64>) -> Result<Self> {
        let n = quad.dim();
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "state dimension must be even and positive, got {n}"
            )));
        }
        match &quad {
            QuadOperator::Block { stiffness, .. } => check_symmetric(stiffness)?,
            QuadOperator::General(a) => {
                if !a.is_square() {
                    return Err(Error::DimensionMismatch {
                        context: "quadratic operator columns",
                        expected: a.nrows(),
                        actual: a.ncols(),
                    });
                }
                check_symmetric(a)?
            }
        }
        check_dim("initial state", n, x0.len())?;
        Ok(Self {
            quad,
            nonlinear: None,
            x0,
        })
    }

    pub fn with_nonlinear(mut self, f: Arc<dyn NonlinearPart>) -> Self {
        self.nonlinear = Some(f);
        self
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Result<Self> {
        check_dim("initial state", self.dim(), x0.len())?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.quad.dim()
    }

    pub fn half_dim(&self) -> usize {
        self.dim() / 2
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn quad(&self) -> &QuadOperator {
        &self.quad
    }

    pub fn nonlinear(&self) -> Option<&Arc<dyn NonlinearPart>> {
        self.nonlinear.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinear.is_none()
    }

    pub fn apply_a(&self, x: &DVector<f64>) -> DVector<f64> {
        self.quad.apply(x)
    }

    pub fn apply_a_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.quad.apply_mat(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.apply_a(x);
        if let Some(f) = &self.nonlinear {
            g += f.gradient(x);
        }
        g
    }

    /// Column-wise `grad H`.
    pub fn gradient_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = self.apply_a_mat(x);
        if let Some(f) = &self.nonlinear {
            for (j, col) in x.column_iter().enumerate() {
                let mut gc = g.column_mut(j);
                gc += f.gradient(&col.into_owned());
            }
        }
        g
    }

    /// Exact velocity `J grad H(x)`.
    pub fn velocity(&self, x: &DVector<f64>) -> DVector<f64> {
        apply_j(&self.gradient(x))
    }

    pub fn velocity_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        apply_j_mat(&self.gradient_mat(x))
    }

    /// `H(x) = 1/2 x^T A x + f(x)`.
    pub fn hamiltonian(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("hamiltonian state", self.dim(), x.len())?;
        let mut h = 0.5 * x.dot(&self.apply_a(x));
        if let Some(f) = &self.nonlinear {
            h += f.value(x);
        }
        Ok(h)
    }

    /// Mass matrix when `A` is block structured.
    pub fn mass_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.quad {
            QuadOperator::Block { stiffness, mass } => Some(mass.mass_matrix(stiffness.nrows())),
            QuadOperator::General(_) => None,
        }
    }

    pub fn stiffness_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.quad {
            QuadOperator::Block { stiffness, .. } => Some(stiffness),
            QuadOperator::General(_) => None,
        }
    }
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let asym = asymmetry(a);
    if asym > 1e-12 * scale {
        Err(Error::NotSymmetric { asymmetry: asym })
    } else {
        Ok(())
    }
}

/// Uniformly spaced state snapshots `X = [x(t_0) ... x(t_K)]`.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    states: DMatrix<f64>,
    t0: f64,
    dt: f64,
    velocities: Option<DMatrix<f64>>,
    center: Option<DVector<f64>>,
}

impl SnapshotSet {
    pub fn new(states: DMatrix<f64>, t0: f64, dt: f64) -> Result<Self> {
        if states.ncols() == 0 {
            return Err(Error::NotEnoughSnapshots {
                required: 1,
                available: 0,
            });
        }
        if !(dt > 0.0) && states.ncols() > 1 {
            return Err(Error::InvalidArgument(format!(
                "snapshot spacing must be positive, got {dt}"
            )));
        }
        Ok(Self {
            states,
            t0,
            dt,
            velocities: None,
            center: None,
        })
    }

    /// Builds from explicit sample times, which must be strictly increasing
    /// with constant spacing.
    pub fn from_times(states: DMatrix<f64>, times: &[f64]) -> Result<Self> {
        check_dim("snapshot times", states.ncols(), times.len())?;
        let (t0, dt) = match times {
            [] => (0.0, 0.0),
            [t] => (*t, 0.0),
            [a, b, ..] => (*a, b - a),
        };
        for (k, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "snapshot times must be strictly increasing (index {k})"
                )));
            }
            if (step - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(Error::InvalidArgument(format!(
                    "snapshot times must be uniformly spaced (index {k})"
                )));
            }
        }
        Self::new(states, t0, dt)
    }

    pub fn with_velocities(mut self, velocities: DMatrix<f64>) -> Result<Self> {
        check_dim("velocity rows", self.states.nrows(), velocities.nrows())?;
        check_dim("velocity columns", self.states.ncols(), velocities.ncols())?;
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn with_center(mut self, center: DVector<f64>) -> Result<Self> {
        check_dim("snapshot center", self.states.nrows(), center.len())?;
        self.center = Some(center);
        Ok(self)
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn velocities(&self) -> Option<&DMatrix<f64>> {
        self.velocities.as_ref()
    }

    pub fn center(&self) -> Option<&DVector<f64>> {
        self.center.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t0 + k as f64 * self.dt).collect()
    }

    pub fn column(&self, k: usize) -> DVector<f64> {
        self.states.column(k).into_owned()
    }

    pub fn first(&self) -> DVector<f64> {
        self.column(0)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        (self.states, self.velocities)
    }
}

/// Uniform integration grid: `steps = t_final / dt` steps, sampled every
/// `sample_every` steps starting at step 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub dt: f64,
    pub sample_every: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, dt: f64, sample_every: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if !(t_final >= 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "final time must be non-negative, got {t_final}"
            )));
        }
        if sample_every == 0 {
            return Err(Error::InvalidArgument("sample_every must be positive".into()));
        }
        let grid = Self {
            t_final,
            dt,
            sample_every,
        };
        let steps = grid.steps();
        if (steps as f64 * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "final time {t_final} is not a multiple of the time step {dt}"
            )));
        }
        Ok(grid)
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn samples(&self) -> usize {
        self.steps() / self.sample_every + 1
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.sample_every as f64
    }
}

// ---------------------------------------------------------------------------
// Benchmark builders

/// Cubic spline initial profile of the periodic wave benchmark.
pub fn wave_profile(y: f64) -> f64 {
    if y <= 1.0 {
        1.0 - 1.5 * y * y + 0.75 * y * y * y
    } else if y <= 2.0 {
        0.25 * (2.0 - y).powi(3)
    } else {
        0.0
    }
}

/// Periodic 1D linear wave equation discretized on `num_cells` points.
///
/// The discrete energy is `1/2 sum_i (p_i^2 + c^2 ((q_{i+1}-q_i)^2 +
/// (q_i-q_{i-1})^2) / (4 ds^2))` with `ds = length / num_cells`; every edge
/// difference appears twice in the periodic sum, so the stiffness block is
/// `c^2 / (2 ds^2) * circ(2, -1, -1)`, i.e. half the usual three-point
/// Laplacian scaling.
pub fn build_wave_fom(num_cells: usize, wave_speed: f64, length: f64) -> Result<HamiltonianSystem> {
    if num_cells < 3 {
        return Err(Error::InvalidArgument(format!(
            "wave FOM needs at least 3 cells, got {num_cells}"
        )));
    }
    if !(wave_speed > 0.0) || !(length > 0.0) {
        return Err(Error::InvalidArgument(
            "wave speed and length must be positive".into(),
        ));
    }
    let m = num_cells;
    let ds = length / m as f64;
    let scale = wave_speed * wave_speed / (2.0 * ds * ds);
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 2.0 * scale;
        k[(i, (i + 1) % m)] -= scale;
        k[(i, (i + m - 1) % m)] -= scale;
    }
    let mut x0 = DVector::zeros(2 * m);
    for i in 0..m {
        let s = i as f64 * ds;
        x0[i] = wave_profile((s - 0.5).abs());
    }
    HamiltonianSystem::new(
        QuadOperator::Block {
            stiffness: k,
            mass: MassInverse::Identity,
        },
        x0,
    )
}

/// Face of a box-shaped lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    fn contains(self, idx: [usize; 3], dims: [usize; 3]) -> bool {
        let a = self.axis();
        match self {
            Face::XMin | Face::YMin | Face::ZMin => idx[a] == 0,
            _ => idx[a] == dims[a] - 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Face::XMin => "x-min",
            Face::XMax => "x-max",
            Face::YMin => "y-min",
            Face::YMax => "y-max",
            Face::ZMin => "z-min",
            Face::ZMax => "z-max",
        }
    }
}

impl FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "x-min" | "xmin" => Ok(Face::XMin),
            "x-max" | "xmax" => Ok(Face::XMax),
            "y-min" | "ymin" => Ok(Face::YMin),
            "y-max" | "ymax" => Ok(Face::YMax),
            "z-min" | "zmin" => Ok(Face::ZMin),
            "z-max" | "zmax" => Ok(Face::ZMax),
            other => Err(Error::InvalidArgument(format!("unknown face '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub stiffness: f64,
    pub mass: f64,
    pub clamped_face: Face,
    pub kick_face: Face,
    pub kick_speed: f64,
}

/// Nearest-neighbour mass-spring lattice with linearized unit-rest-length
/// axial springs along grid edges. Nodes on the clamped face are removed;
/// the remaining nodes carry three displacement components each, ordered
/// node-major with nodes enumerated x fastest.
pub fn build_lattice_fom(spec: &LatticeSpec) -> Result<HamiltonianSystem> {
    let dims = [spec.nx, spec.ny, spec.nz];
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidArgument(format!(
            "lattice needs at least 2 nodes per axis, got {dims:?}"
        )));
    }
    if !(spec.stiffness > 0.0) || !(spec.mass > 0.0) {
        return Err(Error::InvalidArgument(
            "lattice stiffness and mass must be positive".into(),
        ));
    }
    if spec.clamped_face == spec.kick_face {
        return Err(Error::InvalidArgument(
            "clamped and kicked faces must differ".into(),
        ));
    }

    let node_id = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let total = dims[0] * dims[1] * dims[2];
    let mut free_index = vec![None; total];
    let mut free_nodes = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if !spec.clamped_face.contains([i, j, k], dims) {
                    free_index[node_id(i, j, k)] = Some(free_nodes.len());
                    free_nodes.push([i, j, k]);
                }
            }
        }
    }
    let m = 3 * free_nodes.len();
    let mut kmat = DMatrix::zeros(m, m);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let here = [i, j, k];
                for axis in 0..3 {
                    let mut there = here;
                    there[axis] += 1;
                    if there[axis] >= dims[axis] {
                        continue;
                    }
                    let a = free_index[node_id(here[0], here[1], here[2])].map(|n| 3 * n + axis);
                    let b = free_index[node_id(there[0], there[1], there[2])].map(|n| 3 * n + axis);
                    if let Some(a) = a {
                        kmat[(a, a)] += spec.stiffness;
                    }
                    if let Some(b) = b {
                        kmat[(b, b)] += spec.stiffness;
                    }
                    if let (Some(a), Some(b)) = (a, b) {
                        kmat[(a, b)] -= spec.stiffness;
                        kmat[(b, a)] -= spec.stiffness;
                    }
                }
            }
        }
    }

    let mut x0 = DVector::zeros(2 * m);
    let normal = spec.kick_face.axis();
    for (n, &idx) in free_nodes.iter().enumerate() {
        if spec.kick_face.contains(idx, dims) {
            x0[m + 3 * n + normal] = spec.mass * spec.kick_speed;
        }
    }
    HamiltonianSystem::new(
        QuadOperator::Block {
            stiffness: kmat,
            mass: MassInverse::Diagonal(DVector::from_element(m, spec.mass)),
        },
        x0,
    )
}

/// First-order form of `M q'' + K q = 0` with momentum `p = M q'`.
pub fn build_from_matrices(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    q0: &DVector<f64>,
    qdot0: &DVector<f64>,
) -> Result<HamiltonianSystem> {
    let m = mass.nrows();
    check_dim("stiffness rows", m, stiffness.nrows())?;
    check_dim("stiffness columns", m, stiffness.ncols())?;
    check_dim("initial displacement", m, q0.len())?;
    check_dim("initial velocity", m, qdot0.len())?;
    check_symmetric(stiffness)?;
    let mass_inv = MassInverse::from_mass(mass)?;
    let p0 = mass * qdot0;
    let mut x0 = DVector::zeros(2 * m);
    x0.rows_mut(0, m).copy_from(q0);
    x0.rows_mut(m, m).copy_from(&p0);
    HamiltonianSystem::new(
        QuadOperator::Block {
            stiffness: stiffness.clone(),
            mass: mass_inv,
        },
        x0,
    )
}

pub fn hamiltonian_value(sys: &HamiltonianSystem, x: &DVector<f64>) -> Result<f64> {
    sys.hamiltonian(x)
}

// ---------------------------------------------------------------------------
// Time integration

/// One-step flow map of a full-order model.
pub trait FlowMap {
    fn dt(&self) -> f64;
    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// Exact velocity at `x`, when the model can evaluate it.
    fn velocity(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

enum SpdOrLu {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl SpdOrLu {
    fn new(a: DMatrix<f64>, what: &str) -> Result<Self> {
        if let Some(c) = Cholesky::new(a.clone()) {
            return Ok(SpdOrLu::Chol(c));
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Factorization(format!("{what} is singular")));
        }
        Ok(SpdOrLu::Lu(lu))
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            SpdOrLu::Chol(c) => Ok(c.solve(b)),
            SpdOrLu::Lu(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::Factorization("singular solve".into())),
        }
    }
}

enum MidpointKind {
    /// `(M + dt^2/4 K) q+ = (M - dt^2/4 K) q + dt p`, then
    /// `p+ = p - dt/2 K (q+ + q)`; the Schur complement of
    /// `I - dt/2 J A` for `A = diag(K, M^-1)`.
    Block {
        rhs_q: DMatrix<f64>,
        factor: SpdOrLu,
    },
    General {
        rhs: DMatrix<f64>,
        lu: LU<f64, Dyn, Dyn>,
    },
}

/// Implicit midpoint map `x+ = x + dt J A (x+ + x)/2` with the step matrix
/// factored once. Negative `dt` runs the map backwards.
pub struct MidpointStepper<'a> {
    sys: &'a HamiltonianSystem,
    dt: f64,
    kind: MidpointKind,
}

impl<'a> MidpointStepper<'a> {
    pub fn new(sys: &'a HamiltonianSystem, dt: f64) -> Result<Self> {
        if !sys.is_linear() {
            return Err(Error::NonlinearUnsupported("implicit midpoint FOM integration"));
        }
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid time step {dt}")));
        }
        let kind = match sys.quad() {
            QuadOperator::Block { stiffness, mass } => {
                let mmat = mass.mass_matrix(stiffness.nrows());
                let c = dt * dt / 4.0;
                let lhs = &mmat + stiffness * c;
                let rhs_q = &mmat - stiffness * c;
                MidpointKind::Block {
                    rhs_q,
                    factor: SpdOrLu::new(lhs, "midpoint step matrix")?,
                }
            }
            QuadOperator::General(a) => {
                let n = a.nrows();
                let ja = apply_j_mat(a) * (0.5 * dt);
                let lhs = DMatrix::identity(n, n) - &ja;
                let rhs = DMatrix::identity(n, n) + &ja;
                let lu = lhs.lu();
                if !lu.is_invertible() {
                    return Err(Error::Factorization("midpoint step matrix is singular".into()));
                }
                MidpointKind::General { rhs, lu }
            }
        };
        Ok(Self { sys, dt, kind })
    }
}

impl FlowMap for MidpointStepper<'_> {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("midpoint state", self.sys.dim(), x.len())?;
        match &self.kind {
            MidpointKind::Block { rhs_q, factor } => {
                let m = self.sys.half_dim();
                let k = self.sys.stiffness_matrix().expect("block operator");
                let q = x.rows(0, m);
                let p = x.rows(m, m);
                let rhs = rhs_q * q + p * self.dt;
                let q_next = factor.solve(&rhs)?;
                let p_next = p - k * (&q_next + q) * (0.5 * self.dt);
                let mut out = DVector::zeros(2 * m);
                out.rows_mut(0, m).copy_from(&q_next);
                out.rows_mut(m, m).copy_from(&p_next);
                Ok(out)
            }
            MidpointKind::General { rhs, lu } => lu
                .solve(&(rhs * x))
                .ok_or_else(|| Error::Factorization("singular midpoint solve".into())),
        }
    }

    fn velocity(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.sys.velocity(x))
    }
}

/// Runs `flow` from `x0` over `grid`, sampling every `grid.sample_every` steps.
pub fn run_flow(flow: &dyn FlowMap, x0: &DVector<f64>, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let steps = grid.steps();
    let mut out = DMatrix::zeros(x0.len(), grid.samples());
    out.set_column(0, x0);
    let mut x = x0.clone();
    for k in 1..=steps {
        x = flow.step(&x)?;
        if k % grid.sample_every == 0 {
            out.set_column(k / grid.sample_every, &x);
        }
    }
    Ok(out)
}

/// Integrates a linear system with the implicit midpoint rule and records
/// the exact velocities `J A x` at the sampled states.
pub fn integrate_midpoint(sys: &HamiltonianSystem, grid: &TimeGrid) -> Result<SnapshotSet> {
    let stepper = MidpointStepper::new(sys, grid.dt)?;
    let states = run_flow(&stepper, sys.x0(), grid)?;
    let velocities = sys.velocity_mat(&states);
    SnapshotSet::new(states, 0.0, grid.sample_dt())?.with_velocities(velocities)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewmarkParams {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for NewmarkParams {
    fn default() -> Self {
        Self {
            beta: 0.25,
            gamma: 0.5,
        }
    }
}

/// Newmark-beta integration of `M q'' + K q = 0`, emitted in first-order
/// form `x = (q, M q')` with exact velocities `(q', -K q)`.
pub fn integrate_newmark(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    q0: &DVector<f64>,
    qdot0: &DVector<f64>,
    grid: &TimeGrid,
    params: NewmarkParams,
) -> Result<SnapshotSet> {
    let NewmarkParams { beta, gamma } = params;
    if !(beta > 0.0) || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Newmark parameters out of range: beta = {beta}, gamma = {gamma}"
        )));
    }
    let m = mass.nrows();
    check_dim("stiffness rows", m, stiffness.nrows())?;
    check_dim("initial displacement", m, q0.len())?;
    check_dim("initial velocity", m, qdot0.len())?;
    let mass_chol = Cholesky::new(mass.clone()).ok_or(Error::MassNotSpd)?;
    let dt = grid.dt;
    let effective = SpdOrLu::new(mass + stiffness * (beta * dt * dt), "Newmark effective stiffness")?;

    let mut q = q0.clone();
    let mut v = qdot0.clone();
    let mut a = mass_chol.solve(&(-(stiffness * &q)));

    let first_order = |q: &DVector<f64>, v: &DVector<f64>| {
        let mut x = DVector::zeros(2 * m);
        x.rows_mut(0, m).copy_from(q);
        x.rows_mut(m, m).copy_from(&(mass * v));
        x
    };
    let velocity = |q: &DVector<f64>, v: &DVector<f64>| {
        let mut xd = DVector::zeros(2 * m);
        xd.rows_mut(0, m).copy_from(v);
        xd.rows_mut(m, m).copy_from(&(-(stiffness * q)));
        xd
    };

    let samples = grid.samples();
    let mut states = DMatrix::zeros(2 * m, samples);
    let mut vels = DMatrix::zeros(2 * m, samples);
    states.set_column(0, &first_order(&q, &v));
    vels.set_column(0, &velocity(&q, &v));
    for k in 1..=grid.steps() {
        let predictor = &q + &v * dt + &a * ((0.5 - beta) * dt * dt);
        let a_next = effective.solve(&(-(stiffness * &predictor)))?;
        q = predictor + &a_next * (beta * dt * dt);
        v += (&a * (1.0 - gamma) + &a_next * gamma) * dt;
        a = a_next;
        if k % grid.sample_every == 0 {
            let col = k / grid.sample_every;
            states.set_column(col, &first_order(&q, &v));
            vels.set_column(col, &velocity(&q, &v));
        }
    }
    SnapshotSet::new(states, 0.0, grid.sample_dt())?.with_velocities(vels)
}

/// Discrete energy `1/2 (q^T K q + q'^T M q')`.
pub fn second_order_energy(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> f64 {
    0.5 * (q.dot(&(stiffness * q)) + qdot.dot(&(mass * qdot)))
}
