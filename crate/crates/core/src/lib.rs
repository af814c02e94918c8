pub mod cli;
pub mod covstruct;
pub mod error;
pub mod family;
pub mod formula;
pub mod inference;
pub mod laplace;
pub mod optimize;

pub use error::{Error, Result};
