//! Configuration loading and experiment orchestration for `dqtraj`.

pub mod config;
pub mod output;
pub mod run;
