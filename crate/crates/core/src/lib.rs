pub mod audiofeat;
pub mod error;
pub mod evosearch;
pub mod hypernet;
pub mod pipeline;
pub mod searchspace;
pub mod tensorcore;
pub mod verifier;

pub use error::{Error, Result};
