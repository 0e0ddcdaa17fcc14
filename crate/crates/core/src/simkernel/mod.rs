//! Deterministic discrete-event execution of a manifest.
//!
//! Sequential nodes run back to back, calls activate their callee instance,
//! loops iterate (pipelined loops start one iteration every `ii` cycles),
//! parallel branches start together and join on the slowest. DRAM bursts
//! cost a fixed latency in `cosim` mode and a seeded shifted-geometric draw
//! in `hw` mode. Every run records the ground-truth activity of each
//! hierarchy node; profiled runs additionally drive a [`ProfilerState`].
//!
//! [`ProfilerState`]: crate::profiler::ProfilerState

mod engine;
mod reconstruct;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchyTree, NodeId};
use crate::instrument::{CounterAllocation, ProbePlan};
use crate::manifest::{DesignManifest, ValidationError};
use crate::profiler::{ProfilerError, RawTimestampLog, TimestampEntry};

pub use reconstruct::{oracle_profile, reconstruct, ReconstructError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramModel {
    pub fixed_latency_cycles: u64,
    pub hw_latency_min: u64,
    pub hw_latency_mean: f64,
    pub bandwidth_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformModel {
    pub name: String,
    pub dram: DramModel,
}

impl PlatformModel {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let d = &self.dram;
        let problem = if d.hw_latency_min < 1 {
            Some("hw_latency_min must be at least 1".to_string())
        } else if !(d.hw_latency_mean.is_finite() && d.hw_latency_mean >= d.hw_latency_min as f64) {
            Some(format!(
                "hw_latency_mean {} is below hw_latency_min {}",
                d.hw_latency_mean, d.hw_latency_min
            ))
        } else if !(d.bandwidth_gbps.is_finite() && d.bandwidth_gbps > 0.0) {
            Some(format!("bandwidth_gbps must be positive, got {}", d.bandwidth_gbps))
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(ValidationError::InvalidPlatform(p)))
    }

    /// DRAM bytes transferable per kernel clock cycle.
    pub fn bytes_per_cycle(&self, clock_mhz: f64) -> f64 {
        self.dram.bandwidth_gbps * 1e9 / (clock_mhz * 1e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Cosim,
    Hw,
}

impl SimMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimMode::Cosim => "cosim",
            SimMode::Hw => "hw",
        }
    }
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosim" => Ok(SimMode::Cosim),
            "hw" => Ok(SimMode::Hw),
            _ => Err(format!("unknown mode `{s}` (expected cosim or hw)")),
        }
    }
}

/// Half-open activity interval `[start, end)`; serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval(pub u64, pub u64);

impl Interval {
    pub fn start(&self) -> u64 {
        self.0
    }

    pub fn end(&self) -> u64 {
        self.1
    }

    pub fn len(&self) -> u64 {
        self.1 - self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == self.1
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.0 <= other.0 && other.1 <= self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DramSource {
    Kernel,
    Dump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramEvent {
    pub cycle: u64,
    pub bytes: u64,
    pub source: DramSource,
}

/// Ground-truth activity of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub mode: SimMode,
    pub seed: u64,
    /// Indexed by node id.
    pub intervals: Vec<Vec<Interval>>,
    /// Indexed by node id, then activation; empty for function nodes.
    pub iterations: Vec<Vec<Vec<Interval>>>,
    pub total_cycles: u64,
    pub dram_events: Vec<DramEvent>,
}

impl ExecutionTrace {
    pub fn node_intervals(&self, id: NodeId) -> &[Interval] {
        &self.intervals[id.0]
    }

    pub fn node_iterations(&self, id: NodeId) -> &[Vec<Interval>] {
        &self.iterations[id.0]
    }

    pub fn kernel_bytes(&self) -> u64 {
        self.dram_events
            .iter()
            .filter(|e| e.source == DramSource::Kernel)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn dump_bytes(&self) -> u64 {
        self.dram_events
            .iter()
            .filter(|e| e.source == DramSource::Dump)
            .map(|e| e.bytes)
            .sum()
    }

    /// `{source_path: [[start, end], ...]}` in preorder.
    pub fn to_json(&self, tree: &HierarchyTree) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for id in tree.preorder() {
            map.insert(
                tree.node(id).source_path.clone(),
                serde_json::to_value(&self.intervals[id.0]).expect("intervals serialize"),
            );
        }
        serde_json::Value::Object(map)
    }
}

/// Output of a run with the profiler attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfiledRun {
    pub oracle: ExecutionTrace,
    pub log: RawTimestampLog,
    /// Bytes written to DRAM by dumps.
    pub dram_traffic: u64,
    pub wall_cycles: u64,
    /// Every toggle handed to the profiler, in delivery order.
    pub toggles: Vec<TimestampEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error("probe for node {0} does not belong to this hierarchy")]
    PlanMismatch(NodeId),
}

/// Runs the design once without instrumentation.
pub fn run(m: &DesignManifest, tree: &HierarchyTree, mode: SimMode, seed: u64) -> ExecutionTrace {
    engine::execute(m, tree, None, mode, seed)
        .expect("an uninstrumented run cannot fail")
        .0
}

/// Runs the design with the profiler sampling every probe in `alloc`.
pub fn run_profiled(
    m: &DesignManifest,
    tree: &HierarchyTree,
    plan: &ProbePlan,
    alloc: &CounterAllocation,
    mode: SimMode,
    seed: u64,
) -> Result<ProfiledRun, SimError> {
    for p in &alloc.probes {
        let consistent = p.node.0 < tree.len()
            && tree.node(p.node).rtl_name == p.rtl_name
            && plan.find(p.node).is_some();
        if !consistent {
            return Err(SimError::PlanMismatch(p.node));
        }
    }
    let (oracle, profiled) = engine::execute(m, tree, Some(alloc), mode, seed)?;
    let (log, toggles) = profiled.expect("profiler attached");
    Ok(ProfiledRun {
        dram_traffic: log.dumped_bytes(),
        wall_cycles: oracle.total_cycles,
        oracle,
        log,
        toggles,
    })
}
