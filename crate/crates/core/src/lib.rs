//! Direct Trefftz boundary capacitance matrices (BCMs) for 2D Laplace
//! problems, their `1/s` scaling law, a shape-keyed BCM cache, and a
//! hierarchical extractor for per-unit-length capacitance of multilayer
//! planar conductor systems.
//!
//! Lengths are in millimetres; capacitances are F/m internally and reported
//! in pF/m.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod basis;
pub mod decomposition;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod merge;
pub mod oracle;
pub mod pipeline;
pub mod quadrature;
pub mod scaling_cache;
pub mod verify;

pub use error::{Error, Result};
