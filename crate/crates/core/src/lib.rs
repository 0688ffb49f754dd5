pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod serve;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
