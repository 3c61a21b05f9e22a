//! Run configuration, persistence, batch commands and the HTTP service.

pub mod config;
pub mod persist;
pub mod pipeline;
pub mod service;
