//! Command-line tools and the annotation HTTP service.

pub mod cli;
pub mod service;
pub mod store;
