//! Numerical laboratory for entire solutions of the Allen-Cahn equation
//! `Δu = F'(u)` in the plane.
//!
//! The crate computes the 1D transition layer, solves the 2D problem on
//! truncated rectangles with far-field data that selects planar, half-plane
//! or multi-end solutions, and measures the quantities that such solutions
//! are known to conserve or obey: the Hamiltonian and moment identities, the
//! gradient bound `|∇u|² ≤ 2F(u)`, monotonicity and quantization of `E_R/R`,
//! exponential decay away from the nodal set, and the asymptotic geometry of
//! the nodal set (end rays, balance, contact angles, even symmetry).
//!
//! Module map:
//!
//! * [`potential`]: the balanced double well `F`, its antiderivative `G` and
//!   the interface energy `β`.
//! * [`profile`]: the heteroclinic layer `g`.
//! * [`field`], [`boundary`], [`solver`]: grids, far-field data, relaxation.
//! * [`fourend`]: four-end solutions at a prescribed angle by continuation.
//! * [`identities`]: conserved quantities and inequalities on solved fields.
//! * [`levelset`]: zero-set extraction, end fitting and symmetry diagnostics.
//! * [`scenario`]: config-driven pipelines used by the `aclab` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod error;
pub mod exec;
pub mod field;
pub mod fourend;
pub mod identities;
pub mod levelset;
pub mod linalg;
pub mod potential;
pub mod profile;
pub mod quadrature;
pub mod scenario;
pub mod solver;

pub use boundary::{build_boundary, BoundarySpec, EndLine};
pub use error::{Error, Result};
pub use exec::Exec;
pub use field::{Field2D, Grid};
pub use fourend::{solve_four_end, FourEnd, FourEndOptions};
pub use identities::{
    canonical_center, decay_fit, energy_curve, hamiltonian_profile, modica_check, moment_profile, moment_profile_about,
    CanonicalCenter, DecayFit, DecayOptions, EnergyCurve, HamiltonianReport, ModicaReport, MomentReport,
};
pub use levelset::{
    angle_relations, balance_defect, extract_zero_set, fit_ends, sine_identity_defect, symmetry_report, AngleRelations,
    EndRay, Polyline, SymmetryReport, ZeroSet,
};
pub use potential::Potential;
pub use profile::{energy_1d, solve_profile, Profile1D};
pub use solver::{perturb_interior, relax, residual, residual_with, SolveConfig, SolveStats, Solved};

/// Tool version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
