//! Command-line entry points and the HTTP service for the speed-conditioned
//! trajectory GAN in `csg-core`.

pub mod catalog;
pub mod commands;
pub mod config;
mod error;
pub mod model;
pub mod server;
pub mod simulate;

pub use error::CliError;
