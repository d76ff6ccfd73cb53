//! Command-line front end: TOML configs, CSV ingestion and atomic output files.

pub mod app;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;
