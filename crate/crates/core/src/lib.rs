pub mod compression;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod sim;
pub mod tensor;

pub use error::{CometError, Result};
