pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod test_oracles;

pub use error::{Error, Result};
