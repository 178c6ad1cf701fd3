//! Experiment orchestration for the domain-aware rescoring pipeline.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
