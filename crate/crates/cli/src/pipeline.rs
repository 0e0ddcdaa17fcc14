//! Pipeline stages wired through the artifact store.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use probe_forge_core::costmodel::{CostConstants, CostError};
use probe_forge_core::dse::{configure_allocation, ProbeConfig, StorageChoice};
use probe_forge_core::hierarchy::{build_hierarchy, build_mapping, HierarchyTree, MappingTable};
use probe_forge_core::instrument::{extract_signals, AllocConfig, CounterAllocation, DumpRatio, ProbePlan, Targets};
use probe_forge_core::manifest::{apply_inlining, parse_manifest, DesignManifest, InliningPolicy};
use probe_forge_core::workspace::{
    key_for, plan_incremental, ArtifactKey, ArtifactKind, ArtifactStore, Lookup,
    RunInputs, RunRecord,
};

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub err: anyhow::Error,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.err)
    }
}

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_UNFITTABLE: u8 = 2;
pub const EXIT_LOSSY: u8 = 3;

pub fn invalid(err: impl Into<anyhow::Error>) -> Exit {
    Exit {
        code: EXIT_INVALID,
        err: err.into(),
    }
}

pub fn fail(code: u8, msg: String) -> Exit {
    Exit {
        code,
        err: anyhow::anyhow!(msg),
    }
}

impl From<CostError> for Exit {
    fn from(e: CostError) -> Self {
        let code = match e {
            CostError::Unfittable { .. } => EXIT_UNFITTABLE,
            _ => EXIT_INVALID,
        };
        Exit { code, err: e.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub manifest: PathBuf,
    pub workspace: PathBuf,
    pub policy: InliningPolicy,
    pub policy_name: String,
    pub target: Option<String>,
    pub storage: StorageChoice,
    pub dump_ratio: DumpRatio,
    pub max_depth: Option<u64>,
    pub constants: CostConstants,
}

impl Options {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            storage: self.storage,
            dump_ratio: self.dump_ratio,
            decode: self.constants.decode_variant.into(),
            counter_width: None,
        }
    }

    pub fn alloc_config(&self) -> AllocConfig {
        let d = AllocConfig::default();
        AllocConfig {
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            ..d
        }
    }

    fn run_inputs(&self, raw: &DesignManifest) -> RunInputs {
        RunInputs {
            manifest: serde_json::to_value(raw).expect("manifest serializes"),
            policy: self.policy_name.clone(),
            target: self.target.clone().unwrap_or_default(),
            config: json!({
                "probe": self.probe_config(),
                "alloc": self.alloc_config(),
                "constants": self.constants,
            }),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<DesignManifest, Exit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(anyhow::anyhow!("cannot read manifest {}: {e}", path.display())))?;
    parse_manifest(&text)
        .map_err(|e| invalid(anyhow::anyhow!("{}: {e}", path.display())))
}

pub struct Extraction {
    pub store: ArtifactStore,
    pub inputs: RunInputs,
    pub keys: Vec<ArtifactKey>,
    pub manifest: DesignManifest,
    pub tree: HierarchyTree,
    pub mapping: MappingTable,
}

pub struct Prepared {
    pub ex: Extraction,
    pub plan: ProbePlan,
    pub alloc: CounterAllocation,
}

fn cached<T, F>(store: &ArtifactStore, key: &ArtifactKey, build: F) -> Result<T, Exit>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T, Exit>,
{
    if let Lookup::Hit(v) = store.load_as::<T>(key).map_err(invalid)? {
        return Ok(v);
    }
    let v = build()?;
    let value = serde_json::to_value(&v).expect("artifact serializes");
    store.put(key, &value).map_err(invalid)?;
    Ok(v)
}

/// Normalized manifest, hierarchy and mapping.
pub fn extract(opts: &Options) -> Result<Extraction, Exit> {
    let raw = read_manifest(&opts.manifest)?;
    let store = ArtifactStore::open(&opts.workspace).map_err(invalid)?;
    let inputs = opts.run_inputs(&raw);
    let keys = inputs.keys();
    let manifest: DesignManifest = cached(&store, &keys[0], || {
        apply_inlining(&raw, opts.policy).map_err(invalid)
    })?;
    let tree: HierarchyTree = cached(&store, &keys[1], || {
        build_hierarchy(&manifest).map_err(invalid)
    })?;
    let mapping: MappingTable = cached(&store, &keys[2], || Ok(build_mapping(&tree)))?;
    Ok(Extraction {
        store,
        inputs,
        keys,
        manifest,
        tree,
        mapping,
    })
}

pub fn probe_plan(ex: &Extraction, target: Option<&str>) -> Result<ProbePlan, Exit> {
    cached(&ex.store, &ex.keys[3], || {
        let root = ex.tree.locate(target.unwrap_or("")).map_err(invalid)?;
        extract_signals(&ex.tree, &Targets::Nodes(ex.tree.subtree(root))).map_err(invalid)
    })
}

/// Every pipeline stage through the fitted allocation; records the run.
pub fn prepare(opts: &Options) -> Result<Prepared, Exit> {
    let ex = extract(opts)?;
    let prev = ex.store.last_run().map_err(invalid)?;
    let reuse = plan_incremental(prev.as_ref(), &ex.inputs).ok();
    let plan = probe_plan(&ex, opts.target.as_deref())?;
    let alloc: CounterAllocation = cached(&ex.store, &ex.keys[4], || {
        Ok(configure_allocation(
            &opts.probe_config(),
            &ex.manifest,
            &ex.tree,
            &plan,
            &opts.alloc_config(),
            &opts.constants,
        )?)
    })?;
    let plan = alloc.restricted_to(&plan);
    ex.store
        .record_run(&RunRecord::new(ex.keys.clone(), reuse))
        .map_err(invalid)?;
    Ok(Prepared {
        ex,
        plan,
        alloc,
    })
}

/// Stores a downstream artifact keyed by its upstream key and parameters.
pub fn store_derived(
    store: &ArtifactStore,
    kind: ArtifactKind,
    inputs: Value,
    artifact: &impl Serialize,
) -> Result<ArtifactKey, Exit> {
    let value = serde_json::to_value(artifact).expect("artifact serializes");
    let key = key_for(kind, &inputs);
    store.put(&key, &value).map_err(invalid)?;
    Ok(key)
}
