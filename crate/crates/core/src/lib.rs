//! Sparse identification of nonlinear dynamics.
//!
//! The crate covers the numerical side of equation discovery: benchmark
//! systems and trajectory generation ([`dynamics`]), feature libraries and the
//! custom term language ([`features`]), sparse regression solvers
//! ([`sparse_opt`]), model fitting and scoring ([`model`]) and the declarative
//! candidate configuration language proposed by a language model
//! ([`specdsl`]).

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod features;
pub mod fmt;
pub mod model;
pub mod sparse_opt;
pub mod specdsl;

pub use dynamics::{Dataset, SystemDefinition, Trajectory};
pub use features::{DesignMatrix, FeatureLibrarySpec, LibraryPart, TermExpr};
pub use model::{Score, SindyModel};
pub use sparse_opt::{Coefficients, OptimizerSpec};
pub use specdsl::CandidateSpec;
