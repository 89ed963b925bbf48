//! Finite-dimensional dilation theory for operator-valued quantum measures.
//!
//! The library works over algebras of the form `M = M_{n_1}(C) ⊕ ... ⊕ M_{n_K}(C)`.
//! A quantum measure assigns a `d × d` complex matrix to each projection of `M`
//! and is additive on orthogonal pairs. The crate provides:
//!
//! * [`algebra`]: block-diagonal elements, norms, Haar sampling and a certified
//!   lower-bound evaluator for suprema over the unit ball;
//! * [`projection`]: projections, their lattice operations and orthogonal families;
//! * [`measure`]: linear-map and tabulated measures, additivity checks and the
//!   Gleason extension solver;
//! * [`dilation`]: the elementary dilation space, the maps `S`, `T`, `V(P)` and
//!   the dilation norms built on it;
//! * [`pvariation`]: orthogonal trees and p-variation estimators with an exact
//!   oracle for abelian algebras;
//! * [`cpmaps`]: Kraus/Choi/Stinespring machinery and Schatten norms;
//! * [`cli`]: report generation behind the `qmdil` binary.

// `!(a <= b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod algebra;
pub mod cli;
pub mod cpmaps;
pub mod dilation;
mod error;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod projection;
pub mod pvariation;
pub mod tol;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
