//! Run manifests and staged output directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Absolute paths of every file read.
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory; the manifest itself is not listed.
    pub outputs: Vec<FileDigest>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }

    pub fn input_digest(&self, path: &Path) -> Option<&str> {
        self.inputs.iter().find(|f| f.path == path).map(|f| f.sha256.as_str())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Absolute form of a user-supplied path; the file need not exist.
pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("cannot resolve {}", path.display()))
}

/// Output directory under construction. Files land in a hidden sibling
/// directory and are moved into place only by [`Staging::commit`], so a
/// failed run leaves the destination untouched.
pub struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        let out = absolute(out)?;
        let parent = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("/"));
        fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".qikt-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("cannot write to {}", parent.display()))?;
        Ok(Self {
            dir,
            out,
            files: Vec::new(),
        })
    }

    /// Path for a new output file, creating its parent directories.
    pub fn file(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let path = self.dir.path().join(&rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        Ok(path)
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = self.file(rel)?;
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    /// Hashes the staged files, writes the manifest and moves everything
    /// into the output directory. Existing files of the same name are replaced.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        self.files.sort();
        manifest.outputs = self
            .files
            .iter()
            .map(|rel| {
                Ok(FileDigest {
                    path: rel.clone(),
                    sha256: sha256_file(&self.dir.path().join(rel))?,
                })
            })
            .collect::<Result<_>>()?;
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.dir.path().join(MANIFEST), json + "\n")?;
        self.files.push(PathBuf::from(MANIFEST));

        if self.out.exists() && !self.out.is_dir() {
            bail!("{} exists and is not a directory", self.out.display());
        }
        for rel in &self.files {
            let dest = self.out.join(rel);
            if let Some(p) = dest.parent() {
                fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))?;
            }
            fs::rename(self.dir.path().join(rel), &dest)
                .with_context(|| format!("cannot move output into {}", dest.display()))?;
        }
        Ok(manifest)
    }
}
