//! Cycle-level model of the profiler IP.
//!
//! A global counter advances with the kernel clock. Each probe owns a queue
//! that samples the counter on every toggle of its start/done signals. When a
//! queue has one free slot left, its contents are dumped to DRAM; dumps are
//! serialized on a single channel in issue order and the dumped entries keep
//! their slots until the transfer completes.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchyTree, NodeId};
use crate::instrument::{CounterAllocation, ProbeKind, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rise,
    Fall,
    IterRise,
    IterFall,
}

impl Edge {
    pub fn as_str(&self) -> &'static str {
        match self {
            Edge::Rise => "rise",
            Edge::Fall => "fall",
            Edge::IterRise => "iter_rise",
            Edge::IterFall => "iter_fall",
        }
    }
}

impl std::str::FromStr for Edge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rise" => Ok(Edge::Rise),
            "fall" => Ok(Edge::Fall),
            "iter_rise" => Ok(Edge::IterRise),
            "iter_fall" => Ok(Edge::IterFall),
            _ => Err(format!("unknown edge `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimestampEntry {
    pub probe: NodeId,
    pub edge: Edge,
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub probes: Vec<NodeId>,
    pub entry_count: u64,
    pub bytes: u64,
    pub issue_cycle: u64,
    pub completion_cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfilerError {
    #[error("cycle {to} does not fit a {width}-bit global counter")]
    CounterOverflow { to: u64, width: u32 },
    #[error("counter cannot move backwards from {now} to {to}")]
    TimeReversal { now: u64, to: u64 },
    #[error("toggle stamped {at} while the global counter reads {now}")]
    ClockSkew { now: u64, at: u64 },
    #[error("probe {0} is not allocated")]
    UnknownProbe(NodeId),
    #[error("edge {edge:?} out of order for probe {probe} at cycle {cycle}")]
    EdgeOrderViolation {
        probe: NodeId,
        edge: Edge,
        cycle: u64,
    },
}

#[derive(Debug, Clone)]
struct ProbeQueue {
    node: NodeId,
    rtl_name: String,
    kind: ProbeKind,
    storage: Storage,
    depth: usize,
    entries: VecDeque<TimestampEntry>,
    /// Leading entries currently being transferred.
    in_flight: usize,
    full: bool,
    overflow: bool,
    active: bool,
    open_iters: u64,
    dumped: Vec<TimestampEntry>,
}

#[derive(Debug, Clone)]
struct PendingDump {
    queue: usize,
    count: usize,
    completion: u64,
}

/// Single-owner state machine for one run.
#[derive(Debug, Clone)]
pub struct ProfilerState {
    width: u32,
    counter: u64,
    bytes_per_cycle: f64,
    channel_free: f64,
    queues: Vec<ProbeQueue>,
    index: BTreeMap<NodeId, usize>,
    pending: VecDeque<PendingDump>,
    dumps: Vec<DumpRecord>,
    lost: Vec<TimestampEntry>,
    lossy: bool,
}

impl ProfilerState {
    /// `bytes_per_cycle` is the DRAM bandwidth available to dumps.
    pub fn new(alloc: &CounterAllocation, bytes_per_cycle: f64) -> Self {
        let queues: Vec<ProbeQueue> = alloc
            .probes
            .iter()
            .map(|p| ProbeQueue {
                node: p.node,
                rtl_name: p.rtl_name.clone(),
                kind: p.kind,
                storage: p.storage,
                depth: p.depth as usize,
                entries: VecDeque::new(),
                in_flight: 0,
                full: false,
                overflow: false,
                active: false,
                open_iters: 0,
                dumped: Vec::new(),
            })
            .collect();
        let index = queues.iter().enumerate().map(|(i, q)| (q.node, i)).collect();
        ProfilerState {
            width: alloc.counter_width,
            counter: 0,
            bytes_per_cycle,
            channel_free: 0.0,
            queues,
            index,
            pending: VecDeque::new(),
            dumps: Vec::new(),
            lost: Vec::new(),
            lossy: false,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn counter_width(&self) -> u32 {
        self.width
    }

    pub fn entry_bytes(&self) -> u64 {
        self.width as u64 / 8
    }

    /// Time at which the dump channel becomes idle, in fractional cycles.
    pub fn channel_free(&self) -> f64 {
        self.channel_free
    }

    pub fn dumps(&self) -> &[DumpRecord] {
        &self.dumps
    }

    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    pub fn is_probed(&self, node: NodeId) -> bool {
        self.index.contains_key(&node)
    }

    pub fn queue_len(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).map(|&i| self.queues[i].entries.len())
    }

    pub fn full_flag(&self, node: NodeId) -> Option<bool> {
        self.index.get(&node).map(|&i| self.queues[i].full)
    }

    pub fn overflow_flag(&self, node: NodeId) -> Option<bool> {
        self.index.get(&node).map(|&i| self.queues[i].overflow)
    }

    pub fn storage(&self, node: NodeId) -> Option<Storage> {
        self.index.get(&node).map(|&i| self.queues[i].storage)
    }

    /// Moves the global counter forward and retires completed dumps.
    pub fn advance(&mut self, to: u64) -> Result<(), ProfilerError> {
        if to < self.counter {
            return Err(ProfilerError::TimeReversal {
                now: self.counter,
                to,
            });
        }
        if self.width < 64 && to >= 1u64 << self.width {
            return Err(ProfilerError::CounterOverflow {
                to,
                width: self.width,
            });
        }
        self.counter = to;
        self.retire(Some(to));
        Ok(())
    }

    fn retire(&mut self, until: Option<u64>) {
        while let Some(d) = self.pending.front() {
            if until.is_some_and(|t| d.completion > t) {
                break;
            }
            let d = self.pending.pop_front().expect("front exists");
            let q = &mut self.queues[d.queue];
            let moved: Vec<_> = q.entries.drain(..d.count).collect();
            q.dumped.extend(moved);
            q.in_flight = 0;
            q.full = false;
            // a queue that filled up while the transfer was running goes next
            if !q.entries.is_empty() && q.entries.len() + 1 >= q.depth {
                self.issue_dump(d.queue, d.completion);
            }
        }
    }

    fn issue_dump(&mut self, qi: usize, issue: u64) {
        let entry_bytes = self.entry_bytes();
        let q = &mut self.queues[qi];
        let count = q.entries.len();
        q.full = true;
        q.in_flight = count;
        let bytes = count as u64 * entry_bytes;
        let start = self.channel_free.max(issue as f64);
        let done = start + bytes as f64 / self.bytes_per_cycle;
        self.channel_free = done;
        let completion = done.ceil() as u64;
        self.dumps.push(DumpRecord {
            probes: vec![q.node],
            entry_count: count as u64,
            bytes,
            issue_cycle: issue,
            completion_cycle: completion,
        });
        self.pending.push_back(PendingDump {
            queue: qi,
            count,
            completion,
        });
    }

    /// Samples the global counter for one toggle of `probe`.
    pub fn on_toggle(&mut self, probe: NodeId, edge: Edge, at: u64) -> Result<(), ProfilerError> {
        if at != self.counter {
            return Err(ProfilerError::ClockSkew {
                now: self.counter,
                at,
            });
        }
        let qi = *self
            .index
            .get(&probe)
            .ok_or(ProfilerError::UnknownProbe(probe))?;
        let q = &mut self.queues[qi];
        let ok = match (edge, q.kind) {
            (Edge::Rise, _) => !q.active,
            (Edge::Fall, _) => q.active && q.open_iters == 0,
            (_, ProbeKind::Function) => false,
            (Edge::IterRise, ProbeKind::Loop) => q.active && q.open_iters == 0,
            (Edge::IterRise, _) => q.active,
            (Edge::IterFall, _) => q.active && q.open_iters > 0,
        };
        if !ok {
            return Err(ProfilerError::EdgeOrderViolation {
                probe,
                edge,
                cycle: at,
            });
        }
        match edge {
            Edge::Rise => q.active = true,
            Edge::Fall => q.active = false,
            Edge::IterRise => q.open_iters += 1,
            Edge::IterFall => q.open_iters -= 1,
        }
        let entry = TimestampEntry {
            probe,
            edge,
            cycle: at,
        };
        if q.entries.len() >= q.depth {
            q.overflow = true;
            self.lost.push(entry);
            self.lossy = true;
            return Ok(());
        }
        q.entries.push_back(entry);
        if q.depth - q.entries.len() <= 1 && q.in_flight == 0 {
            self.issue_dump(qi, at);
        }
        Ok(())
    }

    /// Completes outstanding dumps and assembles the log.
    pub fn finalize(mut self) -> RawTimestampLog {
        self.retire(None);
        let mut entries = Vec::new();
        let mut probes = Vec::new();
        let mut overflowed = Vec::new();
        let mut residual = 0u64;
        for q in &self.queues {
            probes.push((q.node, q.rtl_name.clone()));
            entries.extend(q.dumped.iter().copied());
            entries.extend(q.entries.iter().copied());
            residual += q.entries.len() as u64;
            if q.overflow {
                overflowed.push(q.node);
            }
        }
        RawTimestampLog {
            counter_width: self.width,
            probes,
            entries,
            residual_entries: residual,
            dumps: self.dumps,
            lost: self.lost,
            overflowed,
            lossy: self.lossy,
        }
    }
}

/// Everything the host reads back after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTimestampLog {
    pub counter_width: u32,
    /// Probe order of the allocation with each probe's instance name.
    pub probes: Vec<(NodeId, String)>,
    /// Grouped by probe in allocation order; within a probe, dumped entries
    /// precede residual ones and cycles never decrease.
    pub entries: Vec<TimestampEntry>,
    pub residual_entries: u64,
    pub dumps: Vec<DumpRecord>,
    pub lost: Vec<TimestampEntry>,
    pub overflowed: Vec<NodeId>,
    pub lossy: bool,
}

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: unknown instance `{name}`")]
    UnknownInstance { row: usize, name: String },
    #[error("row {row}: {message}")]
    Field { row: usize, message: String },
}

impl RawTimestampLog {
    pub fn empty(counter_width: u32) -> Self {
        RawTimestampLog {
            counter_width,
            probes: Vec::new(),
            entries: Vec::new(),
            residual_entries: 0,
            dumps: Vec::new(),
            lost: Vec::new(),
            overflowed: Vec::new(),
            lossy: false,
        }
    }

    pub fn entries_for(&self, node: NodeId) -> impl Iterator<Item = &TimestampEntry> {
        self.entries.iter().filter(move |e| e.probe == node)
    }

    pub fn dumped_bytes(&self) -> u64 {
        self.dumps.iter().map(|d| d.bytes).sum()
    }

    /// `probe_rtl_name,edge,cycle` rows in log order.
    pub fn to_csv(&self) -> String {
        let names: BTreeMap<NodeId, &str> =
            self.probes.iter().map(|(n, s)| (*n, s.as_str())).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["probe_rtl_name", "edge", "cycle"]).unwrap();
        for e in &self.entries {
            w.write_record([names[&e.probe], e.edge.as_str(), &e.cycle.to_string()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Reads the CSV form back; dump metadata is not part of it.
    pub fn from_csv(text: &str, tree: &HierarchyTree, counter_width: u32) -> Result<Self, LogParseError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut log = RawTimestampLog::empty(counter_width);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let name = rec.get(0).unwrap_or_default();
            let node = tree
                .nodes
                .iter()
                .find(|n| n.rtl_name == name)
                .ok_or_else(|| LogParseError::UnknownInstance {
                    row,
                    name: name.to_string(),
                })?
                .id;
            let edge = rec
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|message| LogParseError::Field { row, message })?;
            let cycle = rec
                .get(2)
                .unwrap_or_default()
                .parse()
                .map_err(|e: std::num::ParseIntError| LogParseError::Field {
                    row,
                    message: e.to_string(),
                })?;
            if !log.probes.iter().any(|(n, _)| *n == node) {
                log.probes.push((node, name.to_string()));
            }
            log.entries.push(TimestampEntry { probe: node, edge, cycle });
        }
        Ok(log)
    }
}

impl fmt::Display for RawTimestampLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}
