//! Memory-anchored multi-agent opinion dynamics.

pub mod cognition;
pub mod dynamics;
pub mod engine;
pub mod memory;
pub mod metrics;
pub mod profiles;
pub mod sampling;
pub mod scenario;
pub mod socialnet;
pub mod text;
