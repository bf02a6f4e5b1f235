//! Harness around `qkd-core`: flat config files, Monte-Carlo batches with
//! CSV output, and the impersonation demonstration.

pub mod batch;
pub mod cli;
pub mod config;
pub mod demo;
