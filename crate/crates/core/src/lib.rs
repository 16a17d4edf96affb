pub mod cgwt;
pub mod cli;
pub mod decoder;
pub mod eigen;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod gram;
pub mod image_io;
pub mod lbfgs;
pub mod loss;
pub mod synthesize;
pub mod tensor;
pub mod wct;

pub use error::{Error, Result};
