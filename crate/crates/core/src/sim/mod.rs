//! Event-driven network simulation.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod world;

pub use config::{ConfigError, ScenarioConfig, Traffic};
pub use metrics::{aggregate, summarize, Aggregate, FlowMetrics, RunMetrics, Summary};
pub use world::{reception_decision, Medium, RunOutput, World, TRACE_HEADER};

/// Validate `cfg` and run it to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    Ok(World::new(cfg.clone()).run())
}
