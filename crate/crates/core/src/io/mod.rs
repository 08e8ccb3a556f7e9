//! Data, configuration and report formats, and the analysis pipeline.

pub mod analysis;
pub mod config;
pub mod data;
pub mod report;

pub use analysis::{analyze, AnalysisOptions, PostHocSettings};
pub use config::{content_hash, LoadedConfig, StudyConfig, FORMAT_VERSION};
pub use data::{read_records, read_records_from_path, write_records, Ingest};
pub use report::{AnalysisReport, BoundaryReport, PowerReport, Provenance, SimulationReport};
