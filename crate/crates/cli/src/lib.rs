//! Scenario files, pipelines and bit-stable reports for the `efco` command.

pub mod error;
pub mod overrides;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod shipped;

use std::path::{Path, PathBuf};

pub use error::CliError;
pub use pipeline::{read_manifest, replay, run_scenario, RunManifest, RunOutcome, RunStatus, MANIFEST_NAME};
pub use scenario::{Pipeline, ScenarioFile};

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "EFCO_OUT";
pub const DEFAULT_OUT_ROOT: &str = "efco-out";

/// Load a scenario from a file path or, failing that, by shipped name.
pub fn load_scenario(spec: &str, overrides: &[String]) -> Result<ScenarioFile, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
        return ScenarioFile::parse_with(&text, overrides);
    }
    match shipped::shipped_text(spec) {
        Some(text) => ScenarioFile::parse_with(text, overrides),
        None => Err(CliError::Invalid(format!("`{spec}` is neither a file nor a shipped scenario"))),
    }
}

/// Where a run writes: `out` if given, else `<root>/<output or name>`.
pub fn output_dir(file: &ScenarioFile, out: Option<&Path>, root: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let root = root.map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), Path::to_path_buf);
    root.join(file.metadata.output.as_deref().unwrap_or(&file.metadata.name))
}
