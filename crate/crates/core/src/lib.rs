// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod sketch;
pub mod solvers;
