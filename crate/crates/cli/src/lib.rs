//! Library backing the `keymotion` binary: configuration loading,
//! JSON artifact schemas, and the command implementations. Everything
//! the binary does is callable in-process, which is how the
//! integration tests drive full pipelines without shelling out.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod schema;

pub use config::PipelineConfig;
