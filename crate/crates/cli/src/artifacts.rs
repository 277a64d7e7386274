//! Output files of a run and the manifest that lists them with content hashes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl Artifacts {
    pub fn text(&mut self, name: &str, body: impl Into<String>) {
        self.files.push((name.to_string(), body.into().into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut body = serde_json::to_string_pretty(value).expect("reports serialize");
        body.push('\n');
        self.text(name, body);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every file under `dir` and return the manifest entries.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<ManifestEntry>> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.files.len());
        for (name, body) in &self.files {
            let path: PathBuf = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, body)?;
            entries.push(ManifestEntry {
                path: name.clone(),
                sha256: hex::encode(Sha256::digest(body)),
                bytes: body.len(),
            });
        }
        Ok(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_match_file_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::default();
        a.text("x.csv", "a,b\n1,2\n");
        a.json("sub/r.json", &serde_json::json!({"k": 1}));
        let m = a.write(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        let body = std::fs::read(dir.path().join("x.csv")).unwrap();
        assert_eq!(m[0].sha256, hex::encode(Sha256::digest(&body)));
        assert!(dir.path().join("sub/r.json").exists());
    }
}
