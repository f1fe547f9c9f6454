//! Distillation of time-series forecasters from replayable teacher traces.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod fta;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod students;
pub mod teacher;
pub mod trainer;

pub use diffcore::{Activation, Array, Graph, Var};
pub use error::{Error, Result, TraceError};
