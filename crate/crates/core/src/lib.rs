//! Core engine for feed-based social-media experiments: configuration,
//! assignment, feed construction, telemetry, per-world aggregates, metrics,
//! exports and the durable platform state.

pub mod assignment;
pub mod entity_csv;
pub mod experiment;
pub mod export;
pub mod feed;
pub mod journal;
pub mod metrics;
pub mod platform;
pub mod rng;
pub mod survey;
pub mod telemetry;
pub mod token;
pub mod world;

pub use platform::{Platform, PlatformConfig, PlatformError, SessionBootstrap};
