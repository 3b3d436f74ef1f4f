pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod eskf;
pub mod geometry;
pub mod linalg;
pub mod linear_align;
pub mod pipeline;
pub mod preintegration;
pub mod refine;
pub mod simulate;

pub use error::{Error, Result};
