//! Config-driven pipeline stages with hashed artifact manifests.

pub mod artifact;
pub mod config;
pub mod error;
pub mod run;

pub use artifact::{load_artifact, Artifact, ArtifactManifest};
pub use config::{parse_config, Command, RunConfig};
pub use error::{CliError, CliResult};
pub use run::{run, Summary};

/// Worker-count override read at startup.
pub const THREADS_ENV: &str = "LATENTCTL_THREADS";
