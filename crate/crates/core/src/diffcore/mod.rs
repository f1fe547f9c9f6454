//! Dense arrays with reverse-mode differentiation.

mod array;
mod gradcheck;
mod graph;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Activation, Graph, Reduction, Var};
