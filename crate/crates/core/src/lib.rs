//! Nitsche contact solver with equilibrated-stress a posteriori error estimation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptive;
pub mod equilibration;
pub mod estimators;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod nitsche;
pub mod problem;
pub mod quadrature;
pub mod verification;
