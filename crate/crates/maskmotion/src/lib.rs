//! File formats, configuration and command pipelines for `maskmotion-core`.
//!
//! The `maskmotion` binary is a thin clap front end over [`commands`]; tests
//! and other programs can call the same functions in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod gif_export;
pub mod report;

pub use maskmotion_core as core;
