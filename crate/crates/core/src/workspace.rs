//! Content-addressed artifact store and incremental rebuild planning.
//!
//! Artifacts live at `<root>/<kind>/<sha256>.json`. A key hashes the
//! canonical JSON of the artifact's inputs, and each pipeline stage's inputs
//! include the key of the stage before it, so a change anywhere invalidates
//! exactly the stages downstream of it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Manifest,
    Hierarchy,
    Mapping,
    ProbePlan,
    Allocation,
    Trace,
    Report,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 7] = [
        ArtifactKind::Manifest,
        ArtifactKind::Hierarchy,
        ArtifactKind::Mapping,
        ArtifactKind::ProbePlan,
        ArtifactKind::Allocation,
        ArtifactKind::Trace,
        ArtifactKind::Report,
    ];

    /// Stages covered by incremental planning.
    pub const PIPELINE: [ArtifactKind; 5] = [
        ArtifactKind::Manifest,
        ArtifactKind::Hierarchy,
        ArtifactKind::Mapping,
        ArtifactKind::ProbePlan,
        ArtifactKind::Allocation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArtifactKind::Manifest => "manifest",
            ArtifactKind::Hierarchy => "hierarchy",
            ArtifactKind::Mapping => "mapping",
            ArtifactKind::ProbePlan => "probe_plan",
            ArtifactKind::Allocation => "allocation",
            ArtifactKind::Trace => "trace",
            ArtifactKind::Report => "report",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactKey {
    pub kind: ArtifactKind,
    pub hash: String,
}

impl fmt::Display for ArtifactKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.hash)
    }
}

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("no previous run recorded in this workspace")]
    NoPreviousRun,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lookup<T> {
    Hit(T),
    Miss,
}

impl<T> Lookup<T> {
    pub fn hit(self) -> Option<T> {
        match self {
            Lookup::Hit(v) => Some(v),
            Lookup::Miss => None,
        }
    }
}

/// Compact JSON with object keys sorted.
pub fn canonical_json(v: &Value) -> String {
    // serde_json's default map is ordered by key
    serde_json::to_string(v).expect("Value always serializes")
}

pub fn key_for(kind: ArtifactKind, inputs: &Value) -> ArtifactKey {
    let text = canonical_json(&json!({"kind": kind.as_str(), "inputs": inputs}));
    ArtifactKey {
        kind,
        hash: hex::encode(Sha256::digest(text.as_bytes())),
    }
}

/// Bytes written for an artifact: sorted-key pretty JSON plus newline.
pub fn artifact_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("Value always serializes");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let dir = path.parent().expect("artifact paths have a parent");
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| WorkspaceError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(ArtifactStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, key: &ArtifactKey) -> PathBuf {
        self.root
            .join(key.kind.as_str())
            .join(format!("{}.json", key.hash))
    }

    pub fn contains(&self, key: &ArtifactKey) -> bool {
        self.path_of(key).is_file()
    }

    /// Writes `artifact` under the key of `inputs`. An existing entry is kept
    /// as is.
    pub fn store(
        &self,
        kind: ArtifactKind,
        inputs: &Value,
        artifact: &Value,
    ) -> Result<ArtifactKey, WorkspaceError> {
        let key = key_for(kind, inputs);
        self.put(&key, artifact)?;
        Ok(key)
    }

    pub fn put(&self, key: &ArtifactKey, artifact: &Value) -> Result<(), WorkspaceError> {
        let path = self.path_of(key);
        if !path.is_file() {
            write_atomic(&path, &artifact_bytes(artifact))?;
        }
        Ok(())
    }

    pub fn load_bytes(&self, key: &ArtifactKey) -> Result<Lookup<Vec<u8>>, WorkspaceError> {
        let path = self.path_of(key);
        match std::fs::read(&path) {
            Ok(b) => Ok(Lookup::Hit(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Lookup::Miss),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn load(&self, key: &ArtifactKey) -> Result<Lookup<Value>, WorkspaceError> {
        match self.load_bytes(key)? {
            Lookup::Miss => Ok(Lookup::Miss),
            Lookup::Hit(b) => serde_json::from_slice(&b)
                .map(Lookup::Hit)
                .map_err(|source| WorkspaceError::Json {
                    path: self.path_of(key),
                    source,
                }),
        }
    }

    pub fn load_as<T: serde::de::DeserializeOwned>(
        &self,
        key: &ArtifactKey,
    ) -> Result<Lookup<T>, WorkspaceError> {
        match self.load(key)? {
            Lookup::Miss => Ok(Lookup::Miss),
            Lookup::Hit(v) => serde_json::from_value(v)
                .map(Lookup::Hit)
                .map_err(|source| WorkspaceError::Json {
                    path: self.path_of(key),
                    source,
                }),
        }
    }

    /// Every stored key, sorted by kind then hash.
    pub fn list(&self) -> Result<Vec<ArtifactKey>, WorkspaceError> {
        let mut out = Vec::new();
        for kind in ArtifactKind::ALL {
            let dir = self.root.join(kind.as_str());
            let entries = match std::fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io_err(&dir)(e)),
            };
            for entry in entries {
                let entry = entry.map_err(io_err(&dir))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if let Some(hash) = name.strip_suffix(".json") {
                    if hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                        out.push(ArtifactKey {
                            kind,
                            hash: hash.to_string(),
                        });
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn last_run_path(&self) -> PathBuf {
        self.root.join("last_run.json")
    }

    pub fn last_run(&self) -> Result<Option<RunRecord>, WorkspaceError> {
        let path = self.last_run_path();
        match std::fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|source| WorkspaceError::Json { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn record_run(&self, r: &RunRecord) -> Result<(), WorkspaceError> {
        let v = serde_json::to_value(r).expect("record serializes");
        write_atomic(&self.last_run_path(), &artifact_bytes(&v))
    }
}

/// Everything that determines the pipeline artifacts of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    /// Manifest as parsed, before inlining.
    pub manifest: Value,
    pub policy: String,
    /// Probe target selector, e.g. a source path or `all`.
    pub target: String,
    /// Allocation and probe configuration.
    pub config: Value,
}

impl RunInputs {
    pub fn stage_inputs(&self) -> BTreeMap<ArtifactKind, Value> {
        use ArtifactKind::*;
        let manifest = json!({"manifest": self.manifest, "policy": self.policy});
        let hierarchy = json!({"manifest": key_for(Manifest, &manifest).hash});
        let hier_hash = key_for(Hierarchy, &hierarchy).hash;
        let mapping = json!({"hierarchy": hier_hash});
        let plan = json!({"hierarchy": hier_hash, "target": self.target});
        let allocation = json!({"probe_plan": key_for(ProbePlan, &plan).hash, "config": self.config});
        BTreeMap::from([
            (Manifest, manifest),
            (Hierarchy, hierarchy),
            (Mapping, mapping),
            (ProbePlan, plan),
            (Allocation, allocation),
        ])
    }

    /// Keys of the five pipeline stages, in pipeline order.
    pub fn keys(&self) -> Vec<ArtifactKey> {
        let inputs = self.stage_inputs();
        ArtifactKind::PIPELINE
            .iter()
            .map(|k| key_for(*k, &inputs[k]))
            .collect()
    }
}

/// What a run produced, kept as `last_run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub keys: BTreeMap<ArtifactKind, ArtifactKey>,
    pub reuse: Option<ReusePlan>,
}

impl RunRecord {
    pub fn new(keys: impl IntoIterator<Item = ArtifactKey>, reuse: Option<ReusePlan>) -> Self {
        RunRecord {
            keys: keys.into_iter().map(|k| (k.kind, k)).collect(),
            reuse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReusePlan {
    pub reused: Vec<ArtifactKey>,
    pub rebuilt: Vec<ArtifactKind>,
    pub reuse_fraction: f64,
}

/// Compares the stage keys of `next` against the previous run.
pub fn plan_incremental(
    prev: Option<&RunRecord>,
    next: &RunInputs,
) -> Result<ReusePlan, WorkspaceError> {
    let prev = prev.ok_or(WorkspaceError::NoPreviousRun)?;
    let mut reused = Vec::new();
    let mut rebuilt = Vec::new();
    for key in next.keys() {
        if prev.keys.get(&key.kind) == Some(&key) {
            reused.push(key);
        } else {
            rebuilt.push(key.kind);
        }
    }
    let reuse_fraction = reused.len() as f64 / ArtifactKind::PIPELINE.len() as f64;
    Ok(ReusePlan {
        reused,
        rebuilt,
        reuse_fraction,
    })
}

/// Parses `kind/hash`.
impl std::str::FromStr for ArtifactKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, hash) = s.split_once('/').ok_or_else(|| format!("bad key {s:?}"))?;
        let kind = ArtifactKind::parse(kind).ok_or_else(|| format!("unknown kind {kind:?}"))?;
        Ok(ArtifactKey {
            kind,
            hash: hash.to_string(),
        })
    }
}
