//! Experiment harness around `drs-core`: benchmark environments, JSON
//! configs, the end-to-end pipeline, and result emission. The `drs` binary
//! is a thin CLI over these modules.

pub mod config;
pub mod envs;
pub mod pipeline;
pub mod records;
