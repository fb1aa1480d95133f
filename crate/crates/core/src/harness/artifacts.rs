//! Versioned CSV and JSON artifacts and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version stamped on every artifact.
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// CSV text with a leading `# format_version=N` comment line.
pub fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    Ok(format!("# format_version={FORMAT_VERSION}\n{body}"))
}

/// Split a versioned CSV into its version and body; rejects other versions.
pub fn read_versioned_csv(text: &str) -> Result<(u32, &str)> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let version = first
        .strip_prefix("# format_version=")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Parse("missing format_version line".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported format_version {version}")));
    }
    Ok((version, body))
}

/// Pretty JSON with `format_version` inserted at the top level.
pub fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("format_version".into(), Value::from(FORMAT_VERSION));
        }
        other => {
            let inner = other.take();
            let mut map = serde_json::Map::new();
            map.insert("format_version".into(), Value::from(FORMAT_VERSION));
            map.insert("data".into(), inner);
            v = Value::Object(map);
        }
    }
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Format a float so it round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub crate_version: String,
    pub config: Value,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported manifest format_version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Collects artifacts in memory and writes them out together with the manifest.
#[derive(Debug, Default)]
pub struct ArtifactSet {
    files: Vec<(String, String)>,
}

impl ArtifactSet {
    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn entries(&self) -> Vec<ArtifactEntry> {
        self.files.iter().map(|(n, c)| ArtifactEntry { path: n.clone(), sha256: sha256_hex(c.as_bytes()) }).collect()
    }

    pub fn write_to(&self, dir: &Path, manifest: &Manifest) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let p = dir.join(name);
            fs::write(&p, contents)?;
            written.push(p);
        }
        let p = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        fs::write(&p, text)?;
        written.push(p);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_carries_version() {
        let t = csv_text(&["a".into(), "b".into()], &[vec!["1".into(), "2".into()]]).unwrap();
        assert!(t.starts_with("# format_version=1\n"));
        let (v, body) = read_versioned_csv(&t).unwrap();
        assert_eq!(v, 1);
        assert_eq!(body, "a,b\n1,2\n");
        assert!(read_versioned_csv("# format_version=9\na\n").is_err());
        assert!(read_versioned_csv("a,b\n").is_err());
    }

    #[test]
    fn json_carries_version() {
        let t = json_text(&serde_json::json!({"x": 1})).unwrap();
        let v: Value = serde_json::from_str(&t).unwrap();
        assert_eq!(v["format_version"], 1);
        let t = json_text(&vec![1, 2]).unwrap();
        let v: Value = serde_json::from_str(&t).unwrap();
        assert_eq!(v["data"][1], 2);
    }

    #[test]
    fn float_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
