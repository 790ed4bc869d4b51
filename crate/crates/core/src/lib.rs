pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod math;
pub mod memory;
pub mod network;
pub mod parallel;
pub mod real;
pub mod train;

pub use error::{Error, Result};
pub use math::{Activation, Matrix};
pub use real::Real;
