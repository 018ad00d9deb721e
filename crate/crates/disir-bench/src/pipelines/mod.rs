//! Experiment pipelines behind the CLI commands.

pub mod bias;
pub mod data;
pub mod fit;
pub mod meeting;
pub mod toy;
