pub mod aliasdata;
pub mod checkpoint;
pub mod classic;
pub mod cli;
pub mod coref;
pub mod diffmath;
pub mod encoder;
mod error;
pub mod evalrank;
pub mod otalign;
pub mod scorer;
pub mod training;

pub use error::{Error, Result};
