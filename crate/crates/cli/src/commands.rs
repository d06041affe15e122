use std::path::{Path, PathBuf};
use std::sync::Arc;

use hamred_core::basis::{reduced_j_matrix, reduced_symplectic, BasisFactory, BasisKind, ReducedBasis};
use hamred_core::fom::{
    build_from_matrices, build_lattice_fom, build_wave_fom, integrate_midpoint, integrate_newmark, HamiltonianSystem,
    LatticeSpec, SnapshotSet, TimeGrid,
};
use hamred_core::io::{read_matrix_market_file, read_snapshot_file, write_snapshot_file};
use hamred_core::linalg::{asymmetry, sigma_min};
use hamred_core::metrics::{bound_report, canonicity_deviation, hamiltonian_trace, max_abs_error, RunReport};
use hamred_core::opinf::{learn_rom, InferenceVariant, OpInfOptions};
use hamred_core::rom::{build_rom, simulate, Provenance, ReducedModel, RomVariant};
use hamred_core::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, FomConfig, FomKind, Integrator};
use crate::csv::{Cell, Table};

pub const SNAPSHOT_FILE: &str = "snapshots.hsnp";
pub const SNAPSHOT_META: &str = "snapshots.json";

pub fn build_system(cfg: &FomConfig) -> Result<HamiltonianSystem> {
    match &cfg.kind {
        FomKind::Wave {
            cells,
            wave_speed,
            length,
        } => build_wave_fom(*cells, *wave_speed, *length),
        FomKind::Lattice {
            nx,
            ny,
            nz,
            stiffness,
            mass,
            clamped_face,
            kick_face,
            kick_speed,
        } => build_lattice_fom(&LatticeSpec {
            nx: *nx,
            ny: *ny,
            nz: *nz,
            stiffness: *stiffness,
            mass: *mass,
            clamped_face: *clamped_face,
            kick_face: *kick_face,
            kick_speed: *kick_speed,
        }),
        FomKind::Matrices {
            mass,
            stiffness,
            q0,
            qdot0,
        } => {
            let m = read_matrix_market_file(mass)?;
            let k = read_matrix_market_file(stiffness)?;
            let vector = |p: &Option<PathBuf>| -> Result<DVector<f64>> {
                match p {
                    Some(p) => {
                        let v = read_matrix_market_file(p)?;
                        if v.ncols() != 1 {
                            return Err(Error::InvalidArgument(format!("{} is not a column vector", p.display())));
                        }
                        Ok(DVector::from_column_slice(v.as_slice()))
                    }
                    None => Ok(DVector::zeros(m.nrows())),
                }
            };
            build_from_matrices(&m, &k, &vector(q0)?, &vector(qdot0)?)
        }
    }
}

pub fn training_grid(cfg: &FomConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.t_final, cfg.dt, cfg.sample_every)
}

/// Integrates the FOM on `grid` with the configured integrator. Newmark runs
/// return first-order states `(q, M q')`.
pub fn integrate(sys: &HamiltonianSystem, integrator: Integrator, grid: &TimeGrid) -> Result<SnapshotSet> {
    match integrator {
        Integrator::Midpoint => integrate_midpoint(sys, grid),
        Integrator::Newmark(params) => {
            let mass = sys
                .mass_matrix()
                .ok_or_else(|| Error::InvalidArgument("Newmark needs a second-order model".into()))?;
            let stiffness = sys.stiffness_matrix().expect("block operator has a stiffness");
            let m = sys.half_dim();
            let q0 = sys.x0().rows(0, m).into_owned();
            let v0 = mass
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?
                .solve(&sys.x0().rows(m, m).into_owned());
            integrate_newmark(&mass, stiffness, &q0, &v0, grid, params)
        }
    }
}

fn to_json_err(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

pub struct FomOutput {
    pub system: HamiltonianSystem,
    pub snapshots: SnapshotSet,
    pub snapshot_path: PathBuf,
}

/// Builds and integrates the FOM, writing the snapshot file and its JSON
/// sidecar into `out`.
pub fn cmd_fom(cfg: &ExperimentConfig, out: &Path) -> Result<FomOutput> {
    std::fs::create_dir_all(out)?;
    let system = build_system(&cfg.fom)?;
    let grid = training_grid(&cfg.fom)?;
    let snapshots = integrate(&system, cfg.fom.integrator, &grid)?;
    let snapshot_path = out.join(SNAPSHOT_FILE);
    write_snapshot_file(&snapshot_path, snapshots.states(), snapshots.velocities())?;
    let energy: Vec<f64> = (0..snapshots.len())
        .map(|k| system.hamiltonian(&snapshots.column(k)))
        .collect::<Result<_>>()?;
    let meta = json!({
        "fom": cfg.fom.kind.name(),
        "rows": snapshots.dim(),
        "cols": snapshots.len(),
        "t0": snapshots.t0(),
        "dt": snapshots.dt(),
        "t_final": cfg.fom.t_final,
        "integrator_dt": cfg.fom.dt,
        "sample_every": cfg.fom.sample_every,
        "velocities": snapshots.velocities().is_some(),
        "energy": energy,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(to_json_err)?;
    std::fs::write(out.join(SNAPSHOT_META), text + "\n")?;
    Ok(FomOutput {
        system,
        snapshots,
        snapshot_path,
    })
}

/// Reads a snapshot file and the sampling data from its JSON sidecar
/// (`<stem>.json` next to it).
pub fn load_snapshots(path: &Path) -> Result<SnapshotSet> {
    let (states, velocities) = read_snapshot_file(path)?;
    let meta_path = path.with_extension("json");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&meta_path)?).map_err(to_json_err)?;
    let field = |k: &str| {
        meta.get(k)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::InvalidArgument(format!("{} lacks '{k}'", meta_path.display())))
    };
    let set = SnapshotSet::new(states, field("t0")?, field("dt")?)?;
    match velocities {
        Some(v) => set.with_velocities(v),
        None => Ok(set),
    }
}

/// Snapshots from `path` if given, otherwise a fresh FOM run into `out`.
pub fn obtain_snapshots(cfg: &ExperimentConfig, out: &Path, path: Option<&Path>) -> Result<(HamiltonianSystem, SnapshotSet)> {
    match path {
        Some(p) => {
            let sys = build_system(&cfg.fom)?;
            let snaps = load_snapshots(p)?;
            if snaps.dim() != sys.dim() {
                return Err(Error::DimensionMismatch {
                    context: "snapshot rows vs FOM dimension",
                    expected: sys.dim(),
                    actual: snaps.dim(),
                });
            }
            Ok((sys, snaps))
        }
        None => {
            let f = cmd_fom(cfg, out)?;
            Ok((f.system, f.snapshots))
        }
    }
}

fn nan_cells(count: usize) -> impl Iterator<Item = Cell> {
    (0..count).map(|_| Cell::Float(f64::NAN))
}

fn status_text(e: &Error) -> String {
    format!("error: {e}").replace(['\n', ','], " ")
}

pub const BASIS_HEADER: [&str; 7] = [
    "kind",
    "n",
    "snapshot_energy",
    "projection_error",
    "sigma_min_Jhat",
    "canon_dev",
    "status",
];

/// Builds every configured basis, writes `basis_<kind>_<n>.hsnp` files and
/// returns the summary table (also written to `basis.csv`).
pub fn cmd_basis(cfg: &ExperimentConfig, snaps: &SnapshotSet, out: &Path) -> Result<Table> {
    std::fs::create_dir_all(out)?;
    let mut table = Table::new(&BASIS_HEADER);
    for &kind in &cfg.basis.kinds {
        let factory = BasisFactory::new(snaps, kind, cfg.basis.centered)?;
        for &n in &cfg.basis.sizes {
            let row_head = vec![Cell::from(kind.as_str()), Cell::from(n)];
            let result = factory.build(n).and_then(|b| {
                let energy = b.snapshot_energy()?;
                let proj = hamred_core::basis::projection_error(snaps, &b)?;
                let rs = reduced_symplectic(&b);
                let (smin, canon) = match rs {
                    Ok(r) => (r.sigma_min, canonicity_deviation(&r.j_hat).unwrap_or(f64::INFINITY)),
                    Err(Error::DegenerateSymplectic { sigma_min }) => (sigma_min, f64::INFINITY),
                    Err(e) => return Err(e),
                };
                write_snapshot_file(&out.join(format!("basis_{}_{n}.hsnp", kind.as_str())), b.matrix(), None)?;
                Ok((energy, proj, smin, canon))
            });
            let mut row = row_head;
            match result {
                Ok((energy, proj, smin, canon)) => {
                    row.extend([energy.into(), proj.into(), smin.into(), canon.into(), "ok".into()]);
                }
                Err(e) => {
                    eprintln!("warning: basis {kind} n={n}: {e}");
                    row.extend(nan_cells(4));
                    row.push(status_text(&e).into());
                }
            }
            table.push(row);
        }
    }
    table.write(&out.join("basis.csv"))?;
    Ok(table)
}

pub const RUN_HEADER: [&str; 18] = [
    "kind",
    "n",
    "variant",
    "provenance",
    "grid",
    "centered",
    "velocity_source",
    "dt",
    "t_final",
    "rel_l2",
    "ham_error_initial",
    "ham_error_max",
    "proj_tail",
    "canon_dev",
    "grad_norm",
    "eps_dt",
    "eps_a",
    "status",
];

#[derive(Clone, Copy, Debug, Default)]
pub struct RunFlags {
    pub emit_trajectory: bool,
    pub emit_ham_trace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct WorkItem {
    kind: BasisKind,
    n: usize,
    variant: RomVariant,
    provenance: Provenance,
}

impl WorkItem {
    fn sort_key(&self) -> (&'static str, usize, &'static str, &'static str) {
        (self.kind.as_str(), self.n, self.variant.as_str(), self.provenance.as_str())
    }

    fn tag(&self, grid: &str) -> String {
        format!(
            "{}_{}_{}_{}_{grid}",
            self.kind.as_str(),
            self.n,
            self.variant.as_str(),
            self.provenance.as_str()
        )
    }
}

/// One evaluated (item, grid) pair.
pub struct RunRow {
    pub kind: BasisKind,
    pub n: usize,
    pub variant: RomVariant,
    pub provenance: Provenance,
    pub grid: &'static str,
    pub report: std::result::Result<RunReport, String>,
}

impl RunRow {
    fn cells(&self, cfg: &ExperimentConfig) -> Vec<Cell> {
        let mut row: Vec<Cell> = vec![
            self.kind.as_str().into(),
            self.n.into(),
            self.variant.as_str().into(),
            self.provenance.as_str().into(),
            self.grid.into(),
            cfg.rom.centered.into(),
        ];
        match &self.report {
            Ok(r) => {
                let p = &r.provenance;
                let t = &r.bound_terms;
                row.extend([
                    Cell::from(p.velocity_source.map_or("none", |v| v.as_str())),
                    p.dt.into(),
                    p.t_final.into(),
                    r.rel_l2.into(),
                    r.ham_trace.first().map_or(f64::NAN, |e| e.1).into(),
                    r.max_ham_error().into(),
                    t.proj_tail.into(),
                    t.canon_dev.into(),
                    t.grad_norm.into(),
                    t.eps_dt.into(),
                    t.eps_a.into(),
                    "ok".into(),
                ]);
            }
            Err(msg) => {
                row.push("none".into());
                row.extend(nan_cells(10));
                row.push(msg.clone().into());
            }
        }
        row
    }
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    sys: &'a HamiltonianSystem,
    train: &'a SnapshotSet,
    train_grid: TimeGrid,
    test: Option<(SnapshotSet, TimeGrid)>,
    out: &'a Path,
    flags: RunFlags,
}

fn plan(cfg: &ExperimentConfig) -> Vec<WorkItem> {
    let mut provenances = vec![Provenance::Intrusive];
    if cfg.opinf.enabled {
        provenances.push(if cfg.opinf.reprojected {
            Provenance::OpInfReprojected
        } else {
            Provenance::OpInf
        });
    }
    let mut items = Vec::new();
    for &kind in &cfg.basis.kinds {
        for &n in &cfg.basis.sizes {
            for &variant in &cfg.rom.variants {
                for &provenance in &provenances {
                    items.push(WorkItem {
                        kind,
                        n,
                        variant,
                        provenance,
                    });
                }
            }
        }
    }
    items.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    items.dedup();
    items
}

fn build_model(sh: &Shared<'_>, basis: Arc<ReducedBasis>, item: &WorkItem) -> Result<ReducedModel> {
    match item.provenance {
        Provenance::Intrusive => build_rom(sh.sys, basis, item.variant, sh.cfg.rom.centered),
        Provenance::OpInf | Provenance::OpInfReprojected => {
            let opts = OpInfOptions {
                variant: InferenceVariant::for_rom(item.variant),
                reprojected: item.provenance == Provenance::OpInfReprojected,
                centered: sh.cfg.rom.centered,
                velocity: sh.cfg.opinf.velocity_source,
            };
            Ok(learn_rom(sh.sys, sh.train, basis, &opts)?.model)
        }
    }
}

fn evaluate(sh: &Shared<'_>, basis: Arc<ReducedBasis>, model: &ReducedModel, item: &WorkItem, grid_name: &'static str) -> Result<RunReport> {
    let (reference, grid) = match grid_name {
        "train" => (sh.train, &sh.train_grid),
        _ => {
            let (s, g) = sh.test.as_ref().expect("test grid configured");
            (s, g)
        }
    };
    let (_, full) = simulate(model, grid)?;
    let report = bound_report(sh.sys, &basis, model, reference, &full)?;
    if sh.flags.emit_trajectory {
        write_snapshot_file(&sh.out.join(format!("trajectory_{}.hsnp", item.tag(grid_name))), full.states(), None)?;
    }
    if sh.flags.emit_ham_trace {
        let mut t = Table::new(&["t", "ham_error"]);
        for &(time, e) in &report.ham_trace {
            t.push(vec![time.into(), e.into()]);
        }
        t.write(&sh.out.join(format!("ham_trace_{}.csv", item.tag(grid_name))))?;
    }
    Ok(report)
}

fn run_item(sh: &Shared<'_>, factories: &[(BasisKind, std::result::Result<BasisFactory, String>)], item: &WorkItem) -> Vec<RunRow> {
    let grids: Vec<&'static str> = if sh.test.is_some() { vec!["train", "test"] } else { vec!["train"] };
    let row = |grid, report| RunRow {
        kind: item.kind,
        n: item.n,
        variant: item.variant,
        provenance: item.provenance,
        grid,
        report,
    };
    let factory = factories.iter().find(|(k, _)| *k == item.kind).map(|(_, f)| f);
    let built = match factory {
        Some(Ok(f)) => f.build(item.n).map_err(|e| status_text(&e)),
        Some(Err(msg)) => Err(msg.clone()),
        None => Err("error: basis kind not prepared".to_string()),
    }
    .map(Arc::new)
    .and_then(|basis| {
        build_model(sh, basis.clone(), item)
            .map(|m| (basis, m))
            .map_err(|e| status_text(&e))
    });
    match built {
        Ok((basis, model)) => grids
            .into_iter()
            .map(|g| row(g, evaluate(sh, basis.clone(), &model, item, g).map_err(|e| status_text(&e))))
            .collect(),
        Err(msg) => grids.into_iter().map(|g| row(g, Err(msg.clone()))).collect(),
    }
}

/// Runs every (basis kind, n, variant, provenance) combination. With
/// `threads = None` work runs serially; otherwise it is spread over a rayon
/// pool. Rows come back in the same sorted order either way.
pub fn execute(
    cfg: &ExperimentConfig,
    sys: &HamiltonianSystem,
    train: &SnapshotSet,
    out: &Path,
    flags: RunFlags,
    threads: Option<usize>,
) -> Result<Vec<RunRow>> {
    std::fs::create_dir_all(out)?;
    let items = plan(cfg);
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let test = match cfg.test {
        Some(t) => {
            let grid = TimeGrid::new(t.t_final, t.dt, 1)?;
            Some((integrate(sys, cfg.fom.integrator, &grid)?, grid))
        }
        None => None,
    };
    let train_grid = TimeGrid::new(
        train.dt() * (train.len() - 1) as f64,
        train.dt(),
        1,
    )?;
    let sh = Shared {
        cfg,
        sys,
        train,
        train_grid,
        test,
        out,
        flags,
    };

    let prepare = |kind: BasisKind| {
        (
            kind,
            BasisFactory::new(train, kind, cfg.basis.centered).map_err(|e| status_text(&e)),
        )
    };
    let rows: Vec<Vec<RunRow>> = match threads {
        None => {
            let factories: Vec<_> = cfg.basis.kinds.iter().map(|&k| prepare(k)).collect();
            items.iter().map(|it| run_item(&sh, &factories, it)).collect()
        }
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| {
                let factories: Vec<_> = cfg.basis.kinds.par_iter().map(|&k| prepare(k)).collect();
                items.par_iter().map(|it| run_item(&sh, &factories, it)).collect()
            })
        }
    };
    Ok(rows.into_iter().flatten().collect())
}

pub fn rows_to_table(cfg: &ExperimentConfig, rows: &[RunRow]) -> Table {
    let mut table = Table::new(&RUN_HEADER);
    for r in rows {
        table.push(r.cells(cfg));
    }
    table
}

/// Serial evaluation of the configured runs; writes `runs.csv`.
pub fn cmd_run(cfg: &ExperimentConfig, sys: &HamiltonianSystem, train: &SnapshotSet, out: &Path, flags: RunFlags) -> Result<Table> {
    let rows = execute(cfg, sys, train, out, flags, None)?;
    let table = rows_to_table(cfg, &rows);
    table.write(&out.join("runs.csv"))?;
    Ok(table)
}

/// Parallel sweep over the full cross product; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, threads: usize, snapshots: Option<&Path>) -> Result<Table> {
    let (sys, train) = obtain_snapshots(cfg, out, snapshots)?;
    let rows = execute(cfg, &sys, &train, out, RunFlags::default(), Some(threads.max(1)))?;
    let table = rows_to_table(cfg, &rows);
    table.write(&out.join("sweep.csv"))?;
    Ok(table)
}

/// Haar-random orthonormal `rows x cols` matrix.
fn haar_basis(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Structural diagnostics of the FOM, the snapshot data and the configured
/// bases, plus a Monte Carlo check that random bases give invertible
/// reduced symplectic matrices. Written to `diagnose.json`.
pub fn cmd_diagnose(cfg: &ExperimentConfig, sys: &HamiltonianSystem, snaps: &SnapshotSet, out: &Path) -> Result<serde_json::Value> {
    std::fs::create_dir_all(out)?;
    let a = sys.quad().to_dense();
    let trace = hamiltonian_trace(sys, snaps)?;
    let mut bases = Vec::new();
    for &kind in &cfg.basis.kinds {
        let factory = BasisFactory::new(snaps, kind, cfg.basis.centered)?;
        let leading: Vec<f64> = factory.singular_values().iter().take(10).copied().collect();
        let mut sizes = Vec::new();
        for &n in &cfg.basis.sizes {
            let entry = match factory.build(n) {
                Ok(b) => {
                    let jhat = reduced_j_matrix(b.matrix());
                    json!({
                        "n": n,
                        "sigma_min_jhat": sigma_min(&jhat),
                        "canon_dev": canonicity_deviation(&jhat).unwrap_or(f64::INFINITY),
                        "orthonormality_error": hamred_core::basis::orthonormality_error(b.matrix()),
                        "equivariance_error": hamred_core::basis::equivariance_error(b.matrix()),
                    })
                }
                Err(e) => json!({ "n": n, "error": e.to_string() }),
            };
            sizes.push(entry);
        }
        bases.push(json!({
            "kind": kind.as_str(),
            "max_n": factory.max_n(),
            "leading_singular_values": leading,
            "sizes": sizes,
        }));
    }

    let trials = 100;
    let n = cfg.basis.sizes.first().copied().unwrap_or(2).min(sys.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut min_sigma = f64::INFINITY;
    let mut nondegenerate = 0;
    for _ in 0..trials {
        let u = haar_basis(&mut rng, sys.dim(), n);
        let s = sigma_min(&reduced_j_matrix(&u));
        min_sigma = min_sigma.min(s);
        if s > 1e-8 {
            nondegenerate += 1;
        }
    }

    let report = json!({
        "fom": {
            "kind": cfg.fom.kind.name(),
            "dim": sys.dim(),
            "operator_asymmetry": asymmetry(&a),
            "initial_energy": sys.hamiltonian(sys.x0())?,
            "max_energy_error": max_abs_error(&trace),
        },
        "snapshots": { "rows": snaps.dim(), "cols": snaps.len(), "dt": snaps.dt() },
        "bases": bases,
        "random_bases": {
            "seed": cfg.seed,
            "trials": trials,
            "dim": sys.dim(),
            "n": n,
            "min_sigma_min_jhat": min_sigma,
            "nondegenerate": nondegenerate,
        },
    });
    let text = serde_json::to_string_pretty(&report).map_err(to_json_err)?;
    std::fs::write(out.join("diagnose.json"), text + "\n")?;
    Ok(report)
}
