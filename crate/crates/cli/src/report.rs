use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Envelope written by every command. Only `elapsed_ms` varies between runs
/// with the same inputs and seed.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// sha256 of the instance file bytes, when a file was read.
    pub instance_digest: Option<String>,
    pub protocol: Option<String>,
    pub seed: Option<u64>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Value>,
    pub result: Value,
    pub elapsed_ms: f64,
}

impl RunReport {
    pub fn new(command: &'static str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            instance_digest: None,
            protocol: None,
            seed: None,
            passed: true,
            oracle: None,
            certificate: None,
            result: Value::Null,
            elapsed_ms: 0.0,
        }
    }

    pub fn write(&self, out: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        match out {
            Some(p) => write_text(p, &(text + "\n")),
            None => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{text}").map_err(|e| CliError::io("writing stdout", e))
            }
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report payload serializes")
}
