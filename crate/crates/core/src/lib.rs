pub mod alignment;
pub mod avcorpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod features;
pub mod model;

pub use error::{Error, Result};
