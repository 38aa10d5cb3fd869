pub mod cocycle;
pub mod cohomology;
pub mod diagram;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod ordering;

pub use error::{Error, Result};
