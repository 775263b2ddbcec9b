//! Multi-layer trace analysis for event-loop runtimes.

pub mod bcta;
pub mod cli;
pub mod export;
pub mod lifecycle;
pub mod metrics;
pub mod nbca;
pub mod pipeline;
pub mod sht;
pub mod simgen;
pub mod trace;
