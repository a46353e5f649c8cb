pub mod counterparts;
pub mod data;
pub mod diff;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
