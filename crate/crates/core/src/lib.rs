//! Charge-conserving electromagnetic particle-in-cell simulation on unstructured
//! triangular meshes.
//!
//! Fields, currents and charges are carried as discrete differential forms:
//! electric field and current on edges, magnetic flux on faces, charge on
//! vertices. Whitney forms interpolate between the mesh degrees of freedom and
//! particle positions, which makes the scatter of charge (0-forms) and current
//! (1-forms) satisfy the discrete continuity equation identically.
//!
//! Module map:
//!
//! - [`mesh`]: triangle mesh, incidence matrices, point location.
//! - [`whitney`]: Whitney 0/1/2-forms and the closed-form 1-form line integral.
//! - [`hodge`]: Galerkin Hodge star matrices.
//! - [`maxwell`]: leap-frog field stepper and Courant estimate.
//! - [`pusher`]: implicit Lorentz velocity update and position push.
//! - [`deposit`]: gather, trajectory splitting, charge and current scatter.
//! - [`diagnostics`]: continuity, Gauss and energy checks.
//! - [`engine`]: scenario setup and the per-step update sequence.

// NaN must fail validation, hence `!(x > 0.0)` over `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod deposit;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod geom;
pub mod hodge;
pub mod maxwell;
pub mod mesh;
pub mod output;
pub mod pusher;
pub mod sparse;
pub mod whitney;

pub use error::{Error, Result};

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Vacuum permeability (H/m).
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;
