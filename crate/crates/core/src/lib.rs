//! Temporal accessories for skeleton-based action recognition.

pub mod dct;
pub mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
