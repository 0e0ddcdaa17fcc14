use std::collections::VecDeque;

use thiserror::Error;

use super::{ExecutionTrace, Interval};
use crate::hierarchy::{HierarchyTree, NodeKind};
use crate::instrument::{CounterAllocation, ProbeKind};
use crate::profiler::{Edge, RawTimestampLog};
use crate::report::{PathProfile, ProfiledTrace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconstructError {
    #[error("the timestamp log lost entries to queue overflow; exact reconstruction is impossible")]
    LossyLog,
    #[error("log entries for `{0}` do not form matched start/done pairs")]
    Malformed(String),
    #[error("log references probe {0} which is not allocated")]
    UnknownProbe(String),
}

/// Maps raw timestamps back to source paths.
///
/// Non-pipelined loops keep their recorded iterations and take the full
/// iteration count from the static trip count when the record was cut short.
/// Pipelined loops are expanded to every iteration from the first recorded
/// iteration, the initiation interval and the loop end.
pub fn reconstruct(
    log: &RawTimestampLog,
    tree: &HierarchyTree,
    alloc: &CounterAllocation,
) -> Result<ProfiledTrace, ReconstructError> {
    if log.lossy {
        return Err(ReconstructError::LossyLog);
    }
    let mut paths = Vec::new();
    for (node, rtl) in &log.probes {
        let pa = alloc
            .find(*node)
            .ok_or_else(|| ReconstructError::UnknownProbe(rtl.clone()))?;
        let n = tree.node(*node);
        let malformed = || ReconstructError::Malformed(n.source_path.clone());

        let mut acts = Vec::new();
        let mut iters: Vec<Vec<Interval>> = Vec::new();
        let mut open: Option<u64> = None;
        let mut open_iters = VecDeque::new();
        for e in log.entries_for(*node) {
            match e.edge {
                Edge::Rise => {
                    if open.replace(e.cycle).is_some() {
                        return Err(malformed());
                    }
                    iters.push(Vec::new());
                }
                Edge::Fall => {
                    let s = open.take().ok_or_else(malformed)?;
                    if !open_iters.is_empty() {
                        return Err(malformed());
                    }
                    acts.push(Interval(s, e.cycle));
                }
                Edge::IterRise => open_iters.push_back(e.cycle),
                Edge::IterFall => {
                    let s = open_iters.pop_front().ok_or_else(malformed)?;
                    iters.last_mut().ok_or_else(malformed)?.push(Interval(s, e.cycle));
                }
            }
        }
        if open.is_some() {
            return Err(malformed());
        }

        let trunc = alloc.truncate_loop_iters;
        let mut synthetic = false;
        let mut truncated = false;
        let iterations = match pa.kind {
            ProbeKind::Function => {
                iters.clear();
                Some(acts.len() as u64)
            }
            ProbeKind::Loop => {
                let info = n.loop_info.as_ref();
                let mut count = Some(0u64);
                for recorded in &iters {
                    let k = recorded.len() as u64;
                    let this = if k < trunc {
                        Some(k)
                    } else {
                        match info {
                            Some(l) if !l.data_dependent => Some(l.trip_count.max(k)),
                            _ => None,
                        }
                    };
                    if this != Some(k) {
                        truncated = true;
                    }
                    count = count.zip(this).map(|(a, b)| a + b);
                }
                count
            }
            ProbeKind::PipelinedLoop => {
                let static_ii = n.loop_info.as_ref().and_then(|l| l.ii).unwrap_or(1);
                let mut count = 0;
                for (recorded, act) in iters.iter_mut().zip(&acts) {
                    let Some(first) = recorded.first().copied() else {
                        continue;
                    };
                    let body = first.len();
                    let ii = match recorded.get(1) {
                        Some(second) => second.start() - first.start(),
                        None => static_ii,
                    };
                    let span = act.end().checked_sub(first.start() + body).ok_or_else(malformed)?;
                    let trip = span / ii.max(1) + 1;
                    if trip as usize > recorded.len() {
                        synthetic = true;
                        truncated = true;
                    }
                    *recorded = (0..trip)
                        .map(|i| {
                            let s = first.start() + i * ii;
                            Interval(s, s + body)
                        })
                        .collect();
                    count += trip;
                }
                Some(count)
            }
        };
        paths.push(PathProfile {
            source_path: n.source_path.clone(),
            rtl_name: n.rtl_name.clone(),
            kind: n.kind,
            iterations,
            total_cycles: acts.iter().map(Interval::len).sum(),
            activations: acts,
            iteration_intervals: iters,
            synthetic,
            truncated,
        });
    }
    Ok(ProfiledTrace {
        mode: None,
        seed: None,
        paths,
    })
}

/// Profile of every tree node straight from a ground-truth trace.
pub fn oracle_profile(trace: &ExecutionTrace, tree: &HierarchyTree) -> ProfiledTrace {
    let paths = tree
        .preorder()
        .into_iter()
        .map(|id| {
            let n = tree.node(id);
            let acts = trace.node_intervals(id).to_vec();
            let iters = trace.node_iterations(id).to_vec();
            let iterations = match n.kind {
                NodeKind::FunctionInstance => acts.len() as u64,
                NodeKind::LoopInstance => iters.iter().map(|v| v.len() as u64).sum(),
            };
            PathProfile {
                source_path: n.source_path.clone(),
                rtl_name: n.rtl_name.clone(),
                kind: n.kind,
                iterations: Some(iterations),
                total_cycles: acts.iter().map(Interval::len).sum(),
                activations: acts,
                iteration_intervals: iters,
                synthetic: false,
                truncated: false,
            }
        })
        .collect();
    ProfiledTrace {
        mode: Some(trace.mode),
        seed: Some(trace.seed),
        paths,
    }
}
