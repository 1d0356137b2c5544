//! Berwald metrizability toolkit for spherically symmetric affine connections.
//!
//! The crate classifies a 12-function spherically symmetric torsion-free
//! connection on a 4-manifold by whether it is the canonical connection of a
//! non-quadratic pseudo-Finsler function, constructs the compatible Finsler
//! function for each admissible class, and numerically verifies every
//! construction against the defining first-order PDE system.
//!
//! Module map:
//! - [`exprlang`]: arithmetic expression trees in `(t, r)` with symbolic
//!   differentiation (the source of exact connection-coefficient derivatives).
//! - [`jets`]: truncated multivariate Taylor arithmetic in the four velocity
//!   slots, up to total order 5.
//! - [`connection`]: the 12-function connection, its curvature coefficients
//!   and the derived scalar fields.
//! - [`model`] / [`geom`]: evaluatable pseudo-Finsler functions and their
//!   canonical geometric objects (metric, spray, nonlinear connection,
//!   Berwald curvature, symmetry residuals).
//! - [`classifier`]: the decision tree over the curvature conditions.
//! - [`constructor`]: builds a model realizing each classification label.
//! - [`verifier`]: residual sweeps, geodesic integration, conservation checks.
//! - [`config`] / [`corpus`]: config-file loading and named test profiles.

pub mod classifier;
pub mod config;
pub mod connection;
pub mod constructor;
pub mod corpus;
pub mod exprlang;
pub mod geom;
pub mod jets;
pub mod model;
pub mod quad;
pub mod verifier;

pub use classifier::{classify, ClassificationReport, ClassifySettings, Label};
pub use config::{load_config, load_config_file, Config};
pub use connection::{ConnectionProfile, CurvatureTable, DerivedCoeffs, DomainRect};
pub use constructor::{construct, FreeFunctions};
pub use exprlang::Expr;
pub use jets::VJet;
pub use model::{FinslerModel, SamplePoint};
