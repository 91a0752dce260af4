pub mod analyze;
pub mod datagen;
pub mod error;
pub mod jive;
pub mod linalg;
pub mod network;
pub mod rank;

pub use error::{Error, Result};
