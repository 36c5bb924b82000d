//! Resumable run state: a JSON envelope holding the payload text and its
//! SHA-256.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("cannot access snapshot {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("snapshot is not valid JSON: {0}")]
    Format(String),
    #[error("snapshot format version {found}, this build reads {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("snapshot was written by `{found}`, cannot restore into `{expected}`")]
    Command { found: String, expected: String },
    #[error("snapshot checksum mismatch: the file is corrupted")]
    Checksum,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    command: String,
    sha256: String,
    payload: String,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn save<T: Serialize>(path: &Path, command: &str, payload: &T) -> Result<(), SnapshotError> {
    let payload = serde_json::to_string(payload).map_err(|e| SnapshotError::Format(e.to_string()))?;
    let env = Envelope {
        version: FORMAT_VERSION,
        command: command.to_string(),
        sha256: digest(&payload),
        payload,
    };
    let text = serde_json::to_string_pretty(&env).map_err(|e| SnapshotError::Format(e.to_string()))?;
    fs::write(path, text).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })
}

pub fn load<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, SnapshotError> {
    let text = fs::read_to_string(path).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    let env: Envelope = serde_json::from_str(&text).map_err(|e| SnapshotError::Format(e.to_string()))?;
    if env.version != FORMAT_VERSION {
        return Err(SnapshotError::Version { found: env.version });
    }
    if env.command != command {
        return Err(SnapshotError::Command { found: env.command, expected: command.to_string() });
    }
    if digest(&env.payload) != env.sha256 {
        return Err(SnapshotError::Checksum);
    }
    serde_json::from_str(&env.payload).map_err(|e| SnapshotError::Format(e.to_string()))
}
