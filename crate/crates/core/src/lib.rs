pub mod chem;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;

pub use error::{Error, Result};
