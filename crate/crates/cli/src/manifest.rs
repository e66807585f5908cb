use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `key=value` record written as `manifest.txt` in every run directory.
///
/// Holds no timestamps, so identical runs give identical manifests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("config.sha256", sha256_hex(config_text.as_bytes()));
        m.set("seed", seed.to_string());
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Records the hash of every file under `dir` except the manifest itself.
    pub fn add_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n != "manifest.txt") {
                    let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
                    self.set(&format!("file.{rel}"), file_hash(&path)?);
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let mut m = Self::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                m.set(k.trim(), v.trim());
            }
        }
        m
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self::parse(&text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("rgb")).unwrap();
        fs::write(dir.path().join("rgb/0000.png"), b"abc").unwrap();
        let mut m = RunManifest::new("render", "seed = 1\n", 1);
        m.add_outputs(dir.path()).unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("file.rgb/0000.png"), Some(sha256_hex(b"abc").as_str()));
        assert_eq!(back.get("seed"), Some("1"));
    }
}
