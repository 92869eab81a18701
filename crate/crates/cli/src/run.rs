//! Run manifests: what a command read, what it wrote, and content hashes of
//! both.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use siamte::models::sha256_hex;
use walkdir::WalkDir;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started: String,
    pub finished: String,
}

/// SHA-256 of a file, or for a directory a hash over the sorted
/// `relative-path / file-hash` listing of everything below it.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut listing = String::new();
        let mut files: Vec<PathBuf> = WalkDir::new(path)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file() && e.file_name() != "run_manifest.json")
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            listing.push_str(&format!("{}\0{}\n", rel.display(), sha256_hex(&fs::read(&f)?)));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}

pub struct Recorder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Recorder {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Recorder {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes everything recorded and writes the manifest to `dest`.
    pub fn finish(self, dest: &Path) -> Result<()> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<Artifact>> {
            paths
                .iter()
                .map(|p| {
                    Ok(Artifact {
                        path: p.display().to_string(),
                        sha256: hash_path(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            started: self.started,
            finished: now(),
        };
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(dest, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// `<dir>/run_manifest.json` for directory outputs, `<file>.run.json` for
/// file outputs.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run_manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        out.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/x.txt"), "one").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        assert_eq!(h1, hash_path(dir.path()).unwrap());
        fs::write(dir.path().join("a/x.txt"), "two").unwrap();
        let h2 = hash_path(dir.path()).unwrap();
        assert_ne!(h1, h2);
        fs::rename(dir.path().join("a/x.txt"), dir.path().join("a/y.txt")).unwrap();
        assert_ne!(h2, hash_path(dir.path()).unwrap());
        assert_eq!(manifest_path(dir.path()), dir.path().join("run_manifest.json"));
        assert_eq!(manifest_path(Path::new("r/t.csv")), Path::new("r/t.csv.run.json"));
    }
}
