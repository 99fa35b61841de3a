//! Configuration parsing and run orchestration behind the `contact-equilibrate` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod run;
