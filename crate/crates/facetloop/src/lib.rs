//! File formats, serving, and the command line around `facetloop-core`.

pub use facetloop_core as core;

pub mod cli;
pub mod config;
pub mod http;
pub mod io;
pub mod llm;
pub mod provider;
pub mod service;
pub mod workflow;
