//! Command-line driver and HTTP service for the covergraph engine.

pub mod commands;
pub mod config;
pub mod server;
