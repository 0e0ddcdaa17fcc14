//! Exploration of probe storage and dump-ratio configurations.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{
    adapt_allocation, delta_r_util, estimate_allocation, fmax_model, profiling_bandwidth,
    CostConstants, CostError, DecodeVariant, ResourceEstimate, EQUAL_WEIGHTS,
};
use crate::hierarchy::HierarchyTree;
use crate::instrument::{
    allocate_counters, AllocConfig, CounterAllocation, DumpRatio, ProbePlan, Storage,
};
use crate::manifest::DesignManifest;
use crate::simkernel::{run, run_profiled, SimError, SimMode};

/// On-chip depth of a queue whose entries are streamed out through dumps.
pub const STREAMED_DEPTH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageChoice {
    AllRegister,
    AllBram,
    /// Queues at least `threshold` entries deep go to BRAM, the rest to registers.
    Hybrid { threshold: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub storage: StorageChoice,
    pub dump_ratio: DumpRatio,
    pub decode: DecodeOrd,
    pub counter_width: Option<u32>,
}

/// [`DecodeVariant`] with a total order for config sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeOrd {
    Monolithic,
    Staged,
}

impl From<DecodeOrd> for DecodeVariant {
    fn from(d: DecodeOrd) -> Self {
        match d {
            DecodeOrd::Monolithic => DecodeVariant::Monolithic,
            DecodeOrd::Staged => DecodeVariant::Staged,
        }
    }
}

impl From<DecodeVariant> for DecodeOrd {
    fn from(d: DecodeVariant) -> Self {
        match d {
            DecodeVariant::Monolithic => DecodeOrd::Monolithic,
            DecodeVariant::Staged => DecodeOrd::Staged,
        }
    }
}

impl fmt::Display for ProbeConfig {
    /// `R-0`, `B-50`, `H8-25`, with `-s` for staged decode and `-wN` for a
    /// forced counter width.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.storage {
            StorageChoice::AllRegister => write!(f, "R")?,
            StorageChoice::AllBram => write!(f, "B")?,
            StorageChoice::Hybrid { threshold } => write!(f, "H{threshold}")?,
        }
        write!(f, "-{}", self.dump_ratio.percent())?;
        if self.decode == DecodeOrd::Staged {
            write!(f, "-s")?;
        }
        if let Some(w) = self.counter_width {
            write!(f, "-w{w}")?;
        }
        Ok(())
    }
}

impl ProbeConfig {
    pub fn id(&self) -> String {
        self.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DseOptions {
    pub storages: Vec<StorageChoice>,
    pub ratios: Vec<DumpRatio>,
    pub decodes: Vec<DecodeVariant>,
    pub widths: Vec<Option<u32>>,
}

impl Default for DseOptions {
    fn default() -> Self {
        DseOptions {
            storages: vec![StorageChoice::AllRegister, StorageChoice::AllBram],
            ratios: DumpRatio::ALL.to_vec(),
            decodes: vec![DecodeVariant::Monolithic],
            widths: vec![None],
        }
    }
}

impl DseOptions {
    pub fn with_hybrid(mut self, threshold: u64) -> Self {
        self.storages.push(StorageChoice::Hybrid { threshold });
        self
    }
}

/// Cartesian product of the options, sorted and deduplicated.
pub fn enumerate_configs(opts: &DseOptions) -> Vec<ProbeConfig> {
    let mut out = Vec::new();
    for &storage in &opts.storages {
        for &dump_ratio in &opts.ratios {
            for &decode in &opts.decodes {
                for &counter_width in &opts.widths {
                    out.push(ProbeConfig {
                        storage,
                        dump_ratio,
                        decode: decode.into(),
                        counter_width,
                    });
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsePoint {
    pub id: String,
    pub config: ProbeConfig,
    pub r_util: f64,
    /// Dump traffic over kernel traffic, or absolute GB/s when the kernel
    /// moves no data (`b_dram_absolute`).
    pub b_dram: f64,
    pub b_dram_absolute: bool,
    /// Hz.
    pub f_max: f64,
    pub latency_overhead: f64,
    pub resources: ResourceEstimate,
    pub probes: usize,
    pub dumped_bytes: u64,
    pub lossy: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DseError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Allocation for `cfg`: sized, storage-tagged, fitted to the board, then the
/// `round(r * N)` deepest queues are cut to [`STREAMED_DEPTH`].
pub fn configure_allocation(
    cfg: &ProbeConfig,
    m: &DesignManifest,
    tree: &HierarchyTree,
    plan: &ProbePlan,
    base: &AllocConfig,
    k: &CostConstants,
) -> Result<CounterAllocation, CostError> {
    let alloc_cfg = AllocConfig {
        counter_width: cfg.counter_width.or(base.counter_width),
        dump_ratio: cfg.dump_ratio,
        ..base.clone()
    };
    let mut a = allocate_counters(tree, plan, &alloc_cfg);
    for p in &mut a.probes {
        p.storage = match cfg.storage {
            StorageChoice::AllRegister => Storage::Register,
            StorageChoice::AllBram => Storage::Bram,
            StorageChoice::Hybrid { threshold } if p.depth >= threshold => Storage::Bram,
            StorageChoice::Hybrid { .. } => Storage::Register,
        };
    }
    let mut a = adapt_allocation(&a, &m.budget, &m.origin(), k)?;
    let n = a.probes.len();
    let streamed = (cfg.dump_ratio.fraction() * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(a.probes[i].depth), i));
    for &i in order.iter().take(streamed) {
        let p = &mut a.probes[i];
        p.depth = p.depth.min(STREAMED_DEPTH);
        p.streamed = true;
    }
    Ok(a)
}

/// One configuration measured on the hw model.
pub fn evaluate(
    cfg: &ProbeConfig,
    m: &DesignManifest,
    tree: &HierarchyTree,
    plan: &ProbePlan,
    seed: u64,
    k: &CostConstants,
) -> Result<DsePoint, DseError> {
    let k = CostConstants {
        decode_variant: cfg.decode.into(),
        ..k.clone()
    };
    let alloc = configure_allocation(cfg, m, tree, plan, &AllocConfig::default(), &k)?;
    let plan = alloc.restricted_to(plan);
    let profiled = run_profiled(m, tree, &plan, &alloc, SimMode::Hw, seed)?;
    let plain = run(m, tree, SimMode::Hw, seed);

    let est = estimate_allocation(&alloc, &k);
    let origin = m.origin();
    let r_util = delta_r_util(&est, &origin.into(), &m.budget, EQUAL_WEIGHTS)?;

    // both bandwidths over the uninstrumented run time
    let kernel = plain.kernel_bytes();
    let (b_dram, b_dram_absolute) = if kernel == 0 {
        let bw = profiling_bandwidth(profiled.dram_traffic, plain.total_cycles, m.cycle_seconds());
        (bw, true)
    } else {
        (profiled.dram_traffic as f64 / kernel as f64, false)
    };

    let f_clock = m.clock_mhz * 1e6;
    let total: ResourceEstimate = est.plus(&origin).into();
    let f_max = fmax_model(&total, &m.budget, f_clock);
    let latency_overhead = if plain.total_cycles == 0 {
        0.0
    } else {
        (profiled.wall_cycles as f64 / f_max) / (plain.total_cycles as f64 / f_clock) - 1.0
    };

    Ok(DsePoint {
        id: cfg.id(),
        config: *cfg,
        r_util,
        b_dram,
        b_dram_absolute,
        f_max,
        latency_overhead,
        resources: est,
        probes: alloc.probes.len(),
        dumped_bytes: profiled.dram_traffic,
        lossy: profiled.log.lossy,
    })
}

/// Evaluates every configuration in parallel; results keep input order.
pub fn evaluate_all(
    configs: &[ProbeConfig],
    m: &DesignManifest,
    tree: &HierarchyTree,
    plan: &ProbePlan,
    seed: u64,
    k: &CostConstants,
) -> Vec<Result<DsePoint, DseError>> {
    configs
        .par_iter()
        .map(|c| evaluate(c, m, tree, plan, seed, k))
        .collect()
}

/// Lower `r_util` and `b_dram` are better, higher `f_max` is better.
pub fn dominates(q: &DsePoint, p: &DsePoint) -> bool {
    let no_worse = q.r_util <= p.r_util && q.b_dram <= p.b_dram && q.f_max >= p.f_max;
    let better = q.r_util < p.r_util || q.b_dram < p.b_dram || q.f_max > p.f_max;
    no_worse && better
}

fn frontier_order(a: &DsePoint, b: &DsePoint) -> Ordering {
    a.r_util
        .total_cmp(&b.r_util)
        .then(a.b_dram.total_cmp(&b.b_dram))
        .then(b.f_max.total_cmp(&a.f_max))
        .then_with(|| a.id.cmp(&b.id))
}

/// Non-dominated points, best `r_util` first.
pub fn pareto_frontier(points: &[DsePoint]) -> Vec<DsePoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(frontier_order);
    let mut front: Vec<DsePoint> = Vec::new();
    for p in sorted {
        // a dominator always sorts strictly earlier
        if !front.iter().any(|q| dominates(q, &p)) {
            front.push(p);
        }
    }
    front
}

/// `config,r_util,b_dram,f_max,latency_overhead,on_frontier` rows.
pub fn points_csv(points: &[DsePoint], frontier: &[DsePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "config",
        "r_util",
        "b_dram",
        "f_max",
        "latency_overhead",
        "on_frontier",
    ])
    .expect("in-memory write");
    for p in points {
        let on = frontier.iter().any(|f| f.id == p.id);
        w.write_record([
            p.id.clone(),
            format!("{:.9}", p.r_util),
            format!("{:.9}", p.b_dram),
            format!("{:.1}", p.f_max),
            format!("{:.9}", p.latency_overhead),
            on.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Scatter-plot data: one series for all points, one for the frontier.
pub fn scatter_json(points: &[DsePoint], frontier: &[DsePoint]) -> serde_json::Value {
    let xy = |ps: &[DsePoint]| -> Vec<serde_json::Value> {
        ps.iter()
            .map(|p| {
                serde_json::json!({
                    "id": p.id,
                    "r_util": p.r_util,
                    "b_dram": p.b_dram,
                    "f_max": p.f_max,
                    "latency_overhead": p.latency_overhead,
                })
            })
            .collect()
    };
    serde_json::json!({
        "axes": {"x": "r_util", "y": "b_dram", "color": "f_max"},
        "b_dram_absolute": points.iter().any(|p| p.b_dram_absolute),
        "points": xy(points),
        "frontier": xy(frontier),
    })
}
