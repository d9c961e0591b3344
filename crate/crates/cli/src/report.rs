use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// The JSON document every command emits.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Inputs,
    pub results: Value,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Inputs {
    /// Input files keyed by the flag that named them.
    pub files: BTreeMap<String, FileDigest>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl Report {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            args: args.to_vec(),
            inputs: Inputs::default(),
            results: Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn record_file(&mut self, flag: &str, path: &Path, bytes: &[u8]) {
        self.inputs.files.insert(
            flag.to_string(),
            FileDigest {
                path: path.display().to_string(),
                sha256: hex(&Sha256::digest(bytes)),
            },
        );
    }

    pub fn set_results(&mut self, results: impl Serialize) -> Result<()> {
        let value = serde_json::to_value(results)?;
        check_finite(&value, "results")?;
        self.results = value;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// serde_json turns NaN and infinities into `null`; results must not
/// contain any.
fn check_finite(value: &Value, path: &str) -> Result<()> {
    match value {
        Value::Null => bail!("non-finite or missing number at {path}"),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| check_finite(v, &format!("{path}[{i}]"))),
        Value::Object(map) => map
            .iter()
            .try_for_each(|(k, v)| check_finite(v, &format!("{path}.{k}"))),
        _ => Ok(()),
    }
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rejects_non_finite_results() {
        let mut r = Report::new("x", &[]);
        assert!(r.set_results(json!({"a": [1.0, 2.0]})).is_ok());
        assert!(r.set_results(json!({"a": [1.0, f64::NAN]})).is_err());
        assert!(r.set_results(json!({"a": {"b": null}})).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}
