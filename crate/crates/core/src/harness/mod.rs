//! End-to-end plumbing: bundles, configuration, the query pipeline, output
//! artifacts and the synthetic benchmark.

pub mod bench;
pub mod bundle;
pub mod config;
pub mod output;
pub mod pipeline;

pub use bundle::{BundleHeader, FeatureBundle};
pub use config::DetectiveConfig;
pub use pipeline::{run_query, MockScript, ProviderMode, QueryRun, RunRequest};
