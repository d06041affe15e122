//! Structure-preserving reduced-order models for canonical Hamiltonian
//! systems `x' = J grad H(x)`.
//!
//! The crate covers the full pipeline: full-order models and their
//! symplectic integration ([`fom`]), reduced bases from snapshot data
//! ([`basis`]), intrusive reduced models ([`rom`]), nonintrusive operator
//! inference ([`opinf`]), and error measures ([`metrics`]).

pub mod basis;
pub mod error;
pub mod fom;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod opinf;
pub mod rom;

pub use basis::{BasisFactory, BasisKind, ReducedBasis};
pub use error::{Error, Result};
pub use fom::{FlowMap, HamiltonianSystem, NonlinearPart, SnapshotSet, TimeGrid};
pub use metrics::RunReport;
pub use opinf::{InferenceVariant, OpInfOptions, VelocitySource};
pub use rom::{Provenance, ReducedModel, RomVariant};
