//! Guaranteed two-sided bounds on the principal eigenvalue of symmetric
//! second-order elliptic operators on 2D polygonal domains, and the resulting
//! brackets on Friedrichs, Poincare and trace inequality constants.
//!
//! The upper bound on the eigenvalue comes from a P1 Galerkin solve; the lower
//! bound from a Raviart-Thomas flux reconstruction that certifies the
//! residual. An adaptive loop refines the mesh until the bracket on the
//! constant is tight enough.

pub mod adapt;
pub mod assembly;
pub mod bounds;
pub mod eigensolve;
pub mod error;
pub mod flux;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod sparse;

pub use adapt::{run_adaptive, run_adaptive_outcome, AdaptHistory, AdaptOutcome, AdaptStatus, IterationRecord};
pub use assembly::{Coefficients, Parameters, ProblemKind, ProblemSpec};
pub use bounds::{BoundsResult, ResidualNorms};
pub use eigensolve::EigenApprox;
pub use error::{Error, Result};
pub use flux::{Eigenpair, FluxField, FluxSpace};
pub use mesh::{BoundaryLabel, Mesh, SideLabels};
pub use sparse::SparseSymMatrix;
