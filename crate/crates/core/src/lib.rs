pub mod discretization;
pub mod error;
pub mod operator;
pub mod pipeline;
pub mod quadrature;
pub mod reaction;
pub mod solver;

pub use error::{Error, Result};
