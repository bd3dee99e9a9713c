pub mod bisep;
pub mod distributions;
pub mod error;
pub mod io;
pub mod moments;
pub mod quantum;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
