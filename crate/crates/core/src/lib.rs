pub mod error;
pub mod features;
pub mod fitting;
pub mod flow;
pub mod material;
pub mod nmr;
pub mod scan;
pub mod setup;
pub mod texture;

pub use error::{Error, Result};
