use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one run, enough to reproduce it with `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub artifact_version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Every option after defaults and environment fallbacks were applied.
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads input files and remembers their digests.
#[derive(Debug, Default)]
pub struct InputLog {
    pub inputs: Vec<InputDigest>,
}

impl InputLog {
    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: line {}: {e}", path.display(), e.line())))
    }

    /// Fails if any recorded input is missing or has changed.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let bytes = fs::read(&input.path)
                .map_err(|e| CliError::Input(format!("{}: {e}", input.path.display())))?;
            if sha256_hex(&bytes) != input.sha256 {
                return Err(CliError::Input(format!(
                    "{}: contents changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// `--manifest` if given, else `<output>.manifest.json`, else one named after
/// the subcommand in the working directory.
pub fn manifest_path(explicit: Option<&Path>, primary_output: &Path, subcommand: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if primary_output != Path::new("-") {
        let mut s = primary_output.as_os_str().to_owned();
        s.push(".manifest.json");
        return PathBuf::from(s);
    }
    PathBuf::from(format!("permatch-{subcommand}.manifest.json"))
}
