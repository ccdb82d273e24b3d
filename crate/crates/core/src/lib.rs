pub mod error;
pub mod freq;
pub mod kv;
pub mod net;
pub mod pipeline;
pub mod train;
pub mod verify;
pub mod rawio;

pub use error::{Error, Result};
