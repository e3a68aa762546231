pub mod cli;
pub mod corrector;
pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod operator;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod twoscale;

pub use error::{Error, Result};
