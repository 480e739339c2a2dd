//! Chern character forms of superconnections on cotangent bundles, and the
//! meromorphic zeta functions whose residues recover them.
//!
//! Module map:
//! - [`exprkit`]: exact symbolic scalars (parse, simplify, differentiate, evaluate).
//! - [`graded`]: the graded algebra `Ω*(chart) ⊗ End(E)` with `E = E⁺ ⊕ E⁻`.
//! - [`superconn`]: superconnections `∇ + L`, their curvature and radial splitting.
//! - [`chern`]: Chern character forms, transgressions and currents.
//! - [`zeta`]: complex powers of the curvature, zeta extensions and residues.
//! - [`quadrature`]: deterministic quadrature rules and Cauchy residues.
//! - [`fiber`]: numeric evaluation of curvature words on the polar chart.
//! - [`models`]: built-in test models and characteristic-class oracles.
//! - [`config`]: acceptance tolerances.

pub mod exprkit;
pub mod graded;
pub mod superconn;
pub mod quadrature;
pub mod fiber;
pub mod models;
pub mod chern;
pub mod verify;
pub mod zeta;
pub mod config;
