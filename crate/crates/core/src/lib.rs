// negated comparisons below are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod control;
pub mod error;
pub mod expr;
pub mod io;
pub mod linalg;
pub mod mp;
pub mod ode;
pub mod problem;
pub mod set;
pub mod sweep;

pub use error::{Error, Result};
