pub mod cq;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod operators;
pub mod quadrature;
pub mod solver;
pub mod trace_spaces;
pub mod verification;

pub use error::{Error, Result};
