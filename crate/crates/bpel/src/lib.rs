//! File formats, run configuration and the simulation studies built on
//! [`bpel_core`].

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;

pub use bpel_core as core;
pub use config::Config;
pub use error::{Error, Result};
