//! Stage manifests: content hashes of what a stage read and wrote.
//!
//! Manifests carry no timestamps or absolute paths, so re-running a stage on
//! identical inputs reproduces its manifest byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use exemvad_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    /// Hash over all input file hashes, in path order.
    pub inputs_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// Collects the inputs of one stage run, keyed by a logical name.
#[derive(Debug, Default)]
pub struct InputSet {
    files: BTreeMap<String, PathBuf>,
}

impl InputSet {
    pub fn add(&mut self, name: impl Into<String>, path: impl Into<PathBuf>) {
        self.files.insert(name.into(), path.into());
    }

    pub fn hashes(&self) -> Result<BTreeMap<String, String>, CliError> {
        self.files
            .iter()
            .map(|(name, path)| {
                let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
                Ok((name.clone(), sha256_hex(&bytes)))
            })
            .collect()
    }
}

/// Every regular file below `dir` except manifests, keyed by its path
/// relative to `dir` with `/` separators.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&d, e))?;
            let path = entry.path();
            let ty = entry.file_type().map_err(|e| CliError::io(&path, e))?;
            if ty.is_dir() {
                stack.push(path);
            } else if ty.is_file() && entry.file_name() != MANIFEST_FILE {
                let rel: Vec<String> = path
                    .strip_prefix(dir)
                    .expect("walk stays below its root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect();
                let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                out.insert(rel.join("/"), sha256_hex(&bytes));
            }
        }
    }
    Ok(out)
}

/// Writes `<out_dir>/manifest.json` for a finished stage.
pub fn write_manifest(
    out_dir: &Path,
    stage: &str,
    config_hash: &str,
    inputs: &InputSet,
    versions: BTreeMap<String, String>,
) -> Result<StageManifest, CliError> {
    let inputs = inputs.hashes()?;
    let joined: String = inputs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let manifest = StageManifest {
        stage: stage.to_string(),
        config_hash: config_hash.to_string(),
        inputs_hash: sha256_hex(joined.as_bytes()),
        inputs,
        outputs: hash_tree(out_dir)?,
        versions,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_hash_is_relative_and_skips_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("v/sub")).unwrap();
        fs::write(dir.path().join("v/sub/a.txt"), b"a").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), b"{}").unwrap();
        let tree = hash_tree(dir.path()).unwrap();
        assert_eq!(tree.keys().collect::<Vec<_>>(), vec!["v/sub/a.txt"]);
        assert_eq!(tree["v/sub/a.txt"], sha256_hex(b"a"));
    }

    #[test]
    fn manifest_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, b"x").unwrap();
        let out = dir.path().join("out");
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join("o.txt"), b"y").unwrap();
        let mut inputs = InputSet::default();
        inputs.add("in.txt", &input);
        write_manifest(&out, "s", "c", &inputs, BTreeMap::new()).unwrap();
        let first = fs::read(out.join(MANIFEST_FILE)).unwrap();
        write_manifest(&out, "s", "c", &inputs, BTreeMap::new()).unwrap();
        assert_eq!(first, fs::read(out.join(MANIFEST_FILE)).unwrap());
    }
}
