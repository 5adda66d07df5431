//! IO, rendering, run storage and the command-line driver for
//! [`kernelviz_core`].

pub mod adapters;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod pipeline;
pub mod render;
pub mod runstore;

pub use error::{Error, Result};
pub use kernelviz_core as core;
