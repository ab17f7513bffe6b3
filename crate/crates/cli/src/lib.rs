//! Experiment pipeline for bi-flow video models.

pub mod commands;
pub mod config;
pub mod plot;
