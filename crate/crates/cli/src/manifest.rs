//! Per-artifact manifests: enough to tell which config, seed and inputs
//! produced a file, and to detect later tampering.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use domain_rescore::io::hex;

pub const SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub sha256: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    /// Model this artifact was derived from (fine-tune lineage).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<InputHash>,
    /// Stage settings, recorded verbatim.
    #[serde(default)]
    pub settings: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex(&Sha256::digest(bytes)))
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().expect("artifact has a file name").to_os_string();
    name.push(SUFFIX);
    artifact.with_file_name(name)
}

/// Path of `path` relative to `root`, with forward slashes.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn input_hash(root: &Path, path: &Path) -> Result<InputHash> {
    Ok(InputHash {
        path: relative(root, path),
        sha256: sha256_file(path)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Problem {
    MissingArtifact(String),
    ArtifactChanged(String),
    MissingInput { artifact: String, input: String },
    InputChanged { artifact: String, input: String },
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Problem::MissingArtifact(a) => write!(f, "{a}: artifact missing"),
            Problem::ArtifactChanged(a) => write!(f, "{a}: hash does not match manifest"),
            Problem::MissingInput { artifact, input } => write!(f, "{artifact}: input {input} missing"),
            Problem::InputChanged { artifact, input } => {
                write!(f, "{artifact}: input {input} changed since the artifact was written")
            }
        }
    }
}

fn collect_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_manifests(&path, out)?;
        } else if path.to_string_lossy().ends_with(SUFFIX) {
            out.push(path);
        }
    }
    Ok(())
}

/// Recomputes every hash recorded under `root`. Returns the number of
/// manifests checked and the problems found.
pub fn verify_all(root: &Path) -> Result<(usize, Vec<Problem>)> {
    let mut manifests = Vec::new();
    collect_manifests(root, &mut manifests)?;
    let mut problems = Vec::new();
    for path in &manifests {
        let bytes = std::fs::read(path)?;
        let m: Manifest =
            serde_json::from_slice(&bytes).with_context(|| format!("malformed manifest {}", path.display()))?;
        let artifact = root.join(&m.artifact);
        if !artifact.exists() {
            problems.push(Problem::MissingArtifact(m.artifact.clone()));
        } else if sha256_file(&artifact)? != m.sha256 {
            problems.push(Problem::ArtifactChanged(m.artifact.clone()));
        }
        for input in m.inputs.iter().chain(m.parent.iter()) {
            let p = root.join(&input.path);
            if !p.exists() {
                problems.push(Problem::MissingInput {
                    artifact: m.artifact.clone(),
                    input: input.path.clone(),
                });
            } else if sha256_file(&p)? != input.sha256 {
                problems.push(Problem::InputChanged {
                    artifact: m.artifact.clone(),
                    input: input.path.clone(),
                });
            }
        }
    }
    Ok((manifests.len(), problems))
}
