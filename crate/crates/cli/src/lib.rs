//! Configuration loading and experiment runners behind the `lstmhra` binary.

pub mod config;
pub mod experiments;
