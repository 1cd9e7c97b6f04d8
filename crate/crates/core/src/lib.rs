pub mod checkpoint;
pub mod error;
pub mod data;
pub mod distributions;
pub mod dropout;
pub mod eval;
pub mod math;
pub mod network;
pub mod params;
pub mod pruning;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
