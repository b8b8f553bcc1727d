// `!(x > 0.0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod data;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod prox;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use operators::{assemble_operators, gaussian_width_heuristic, OperatorSet};
