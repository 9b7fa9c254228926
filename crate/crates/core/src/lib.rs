pub mod config;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod kinetic;
pub mod mesh;
pub mod output;
pub mod run;
pub mod scenario;

pub use error::{Error, Result};
