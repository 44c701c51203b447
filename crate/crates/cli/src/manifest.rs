use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::args::Common;
use crate::Failure;

pub const TOOL: &str = "selkd";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a stage: its resolved flags and the checksums
/// of what it read and wrote. Output paths are relative to `common.out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub common: Common,
    pub args: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let bytes = read_input(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Missing(path.to_owned()),
        _ => Failure::Internal(format!("{}: {e}", path.display())),
    })
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Failure::Internal(format!("{}: {e}", path.display()))
        })
}

/// Manifests sitting next to `path` that list it as an output must agree
/// with its current contents.
fn check_against_neighbours(path: &Path, sha: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
        _ => PathBuf::from("."),
    };
    let Some(name) = path.file_name() else {
        return Ok(());
    };
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(());
    };
    let mut manifests: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("manifest.") && n.ends_with(".json"))
        })
        .collect();
    manifests.sort();
    for m in manifests {
        let Ok(manifest) = Manifest::read(&m) else {
            continue;
        };
        if let Some(d) = manifest.outputs.iter().find(|d| d.path.as_os_str() == name) {
            if d.sha256 != sha {
                return Err(Failure::Checksum {
                    path: path.to_owned(),
                    manifest: m,
                });
            }
        }
    }
    Ok(())
}

/// Bookkeeping for one stage run: inputs are checksummed as they are read,
/// outputs as they are written, and a failed run removes its outputs.
pub struct StageRun {
    pub stage: String,
    pub tag: String,
    pub common: Common,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl StageRun {
    pub fn new(stage: &str, tag: &str, common: &Common) -> Result<Self, Failure> {
        fs::create_dir_all(&common.out)
            .map_err(|e| Failure::Internal(format!("{}: {e}", common.out.display())))?;
        Ok(StageRun {
            stage: stage.to_owned(),
            tag: tag.to_owned(),
            common: common.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.common.out
    }

    /// Records an input, checking it against any manifest that produced it.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = read_input(path)?;
        let sha = sha256_hex(&bytes);
        check_against_neighbours(path, &sha)?;
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(FileDigest {
                path: path.to_owned(),
                sha256: sha,
            });
        }
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.common.out.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.retain(|d| d.path.as_os_str() != name);
        self.outputs.push(FileDigest {
            path: PathBuf::from(name),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn outputs(&self) -> &[FileDigest] {
        &self.outputs
    }

    /// Adopts the outputs of a nested stage (used by `full`).
    pub fn absorb(&mut self, other: &[FileDigest]) {
        for d in other {
            self.outputs.retain(|o| o.path != d.path);
            self.outputs.push(d.clone());
        }
    }

    pub fn manifest_name(&self) -> String {
        if self.tag == self.stage {
            format!("manifest.{}.json", self.stage)
        } else {
            format!("manifest.{}.{}.json", self.stage, self.tag)
        }
    }

    pub fn finish<A: Serialize>(mut self, args: &A) -> Result<Vec<FileDigest>, Failure> {
        let manifest = Manifest {
            tool: TOOL.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            stage: self.stage.clone(),
            common: self.common.clone(),
            args: serde_json::to_value(args).map_err(|e| Failure::Internal(e.to_string()))?,
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.outputs.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Internal(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&self.common.out.join(self.manifest_name()), &bytes)?;
        Ok(self.outputs)
    }

    /// Removes everything this run wrote.
    pub fn abandon(self) {
        for d in &self.outputs {
            let _ = fs::remove_file(self.common.out.join(&d.path));
        }
    }
}
