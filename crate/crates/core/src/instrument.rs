//! Probe planning and per-probe timestamp storage sizing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchyTree, NodeId};

/// One externalized start/done signal pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub node: NodeId,
    pub rtl_name: String,
    pub source_path: String,
    pub signal_pair: (String, String),
    /// Ancestors the signal is routed through, parent first, ending at the root.
    pub route: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProbePlan {
    pub probes: Vec<Probe>,
}

impl ProbePlan {
    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn find(&self, node: NodeId) -> Option<&Probe> {
        self.probes.iter().find(|p| p.node == node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    All,
    Nodes(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("node {0} is not part of the hierarchy")]
    UnknownNode(NodeId),
    #[error("no probe targets selected")]
    NoTargets,
}

/// Plans one probe per target node, in tree preorder.
pub fn extract_signals(t: &HierarchyTree, targets: &Targets) -> Result<ProbePlan, InstrumentError> {
    let selected: BTreeSet<NodeId> = match targets {
        Targets::All => t.nodes.iter().map(|n| n.id).collect(),
        Targets::Nodes(ids) => {
            if ids.is_empty() {
                return Err(InstrumentError::NoTargets);
            }
            for id in ids {
                if id.0 >= t.len() {
                    return Err(InstrumentError::UnknownNode(*id));
                }
            }
            ids.iter().copied().collect()
        }
    };
    let probes = t
        .preorder()
        .into_iter()
        .filter(|id| selected.contains(id))
        .map(|id| {
            let n = t.node(id);
            Probe {
                node: id,
                rtl_name: n.rtl_name.clone(),
                source_path: n.source_path.clone(),
                signal_pair: (
                    format!("{}_ap_start", n.rtl_name),
                    format!("{}_ap_done", n.rtl_name),
                ),
                route: t.ancestors(id),
            }
        })
        .collect();
    Ok(ProbePlan { probes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    Register,
    Bram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Function,
    Loop,
    PipelinedLoop,
}

impl ProbeKind {
    pub fn is_loop(&self) -> bool {
        !matches!(self, ProbeKind::Function)
    }
}

/// Fraction of queue capacity offloaded to DRAM, in quarters: 0, 25, 50, 75 %.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DumpRatio(u8);

impl DumpRatio {
    pub const ALL: [DumpRatio; 4] = [DumpRatio(0), DumpRatio(1), DumpRatio(2), DumpRatio(3)];

    pub fn from_percent(p: u32) -> Option<Self> {
        match p {
            0 => Some(Self(0)),
            25 => Some(Self(1)),
            50 => Some(Self(2)),
            75 => Some(Self(3)),
            _ => None,
        }
    }

    pub fn percent(&self) -> u32 {
        self.0 as u32 * 25
    }

    pub fn fraction(&self) -> f64 {
        self.0 as f64 / 4.0
    }
}

impl From<DumpRatio> for f64 {
    fn from(r: DumpRatio) -> f64 {
        r.fraction()
    }
}

impl TryFrom<f64> for DumpRatio {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        let q = v * 4.0;
        if q.fract() == 0.0 && (0.0..=3.0).contains(&q) {
            Ok(DumpRatio(q as u8))
        } else {
            Err(format!("dump ratio must be one of 0, 0.25, 0.5, 0.75; got {v}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocConfig {
    pub safety_factor: u64,
    pub truncate_loop_iters: u64,
    pub module_cap: usize,
    pub max_depth: u64,
    /// Forces the counter width instead of deriving it from the estimates.
    pub counter_width: Option<u32>,
    pub dump_ratio: DumpRatio,
}

impl Default for AllocConfig {
    fn default() -> Self {
        AllocConfig {
            safety_factor: 2,
            truncate_loop_iters: 4,
            module_cap: 50,
            max_depth: 4096,
            counter_width: None,
            dump_ratio: DumpRatio::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeAllocation {
    pub node: NodeId,
    pub rtl_name: String,
    pub source_path: String,
    pub tree_depth: usize,
    pub kind: ProbeKind,
    pub depth: u64,
    pub storage: Storage,
    /// On-chip depth reduced to the minimum; entries drain through dumps.
    #[serde(default)]
    pub streamed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterAllocation {
    pub probes: Vec<ProbeAllocation>,
    pub counter_width: u32,
    pub truncate_loop_iters: u64,
    pub module_cap: usize,
    pub dump_ratio: DumpRatio,
}

impl CounterAllocation {
    pub fn find(&self, node: NodeId) -> Option<&ProbeAllocation> {
        self.probes.iter().find(|p| p.node == node)
    }

    pub fn depths(&self) -> Vec<u64> {
        self.probes.iter().map(|p| p.depth).collect()
    }

    pub fn total_depth(&self) -> u64 {
        self.probes.iter().map(|p| p.depth).sum()
    }

    pub fn entry_bytes(&self) -> u64 {
        self.counter_width as u64 / 8
    }

    /// Keeps only probes whose node is also in `plan`.
    pub fn restricted_to(&self, plan: &ProbePlan) -> ProbePlan {
        ProbePlan {
            probes: plan
                .probes
                .iter()
                .filter(|p| self.find(p.node).is_some())
                .cloned()
                .collect(),
        }
    }
}

/// Sizes every probe queue from the activation counts and loop trip counts
/// recorded in the tree.
pub fn allocate_counters(t: &HierarchyTree, p: &ProbePlan, cfg: &AllocConfig) -> CounterAllocation {
    let max_depth = cfg.max_depth.max(2);
    let mut wide = false;
    let probes = p
        .probes
        .iter()
        .map(|probe| {
            let n = t.node(probe.node);
            let run_total = n
                .est_cycles
                .zip(n.activations)
                .map(|(c, a)| c.saturating_mul(a.max(1)));
            if run_total.is_none_or(|c| c >= 1 << 32) {
                wide = true;
            }
            let (kind, demand) = match &n.loop_info {
                None => (
                    ProbeKind::Function,
                    n.activations
                        .map(|a| cfg.safety_factor.saturating_mul(2).saturating_mul(a)),
                ),
                Some(l) => {
                    let kind = if l.pipelined {
                        ProbeKind::PipelinedLoop
                    } else {
                        ProbeKind::Loop
                    };
                    // recording stops after the truncation limit, so an
                    // unknown trip count is still bounded per activation
                    let trip = if l.data_dependent {
                        cfg.truncate_loop_iters
                    } else {
                        l.trip_count.min(cfg.truncate_loop_iters)
                    };
                    let demand = n.activations.map(|a| a.saturating_mul(trip * 2 + 2));
                    (kind, demand)
                }
            };
            ProbeAllocation {
                node: probe.node,
                rtl_name: n.rtl_name.clone(),
                source_path: n.source_path.clone(),
                tree_depth: n.depth,
                kind,
                depth: demand.unwrap_or(max_depth).clamp(2, max_depth),
                storage: Storage::Register,
                streamed: false,
            }
        })
        .collect();
    CounterAllocation {
        probes,
        counter_width: cfg.counter_width.unwrap_or(if wide { 64 } else { 32 }),
        truncate_loop_iters: cfg.truncate_loop_iters,
        module_cap: cfg.module_cap,
        dump_ratio: cfg.dump_ratio,
    }
}
