pub mod config;
pub mod data;
pub mod energy;
pub mod experiments;
pub mod layers;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;
pub mod verify;

pub use tensor::{Tensor, TensorError};
