use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::{DramEvent, DramSource, ExecutionTrace, Interval, SimMode};
use crate::hierarchy::{HierarchyTree, NodeId};
use crate::instrument::CounterAllocation;
use crate::manifest::{BodyNode, DesignManifest};
use crate::profiler::{Edge, ProfilerError, ProfilerState, RawTimestampLog, TimestampEntry};

/// Manifest body with every call and loop site bound to its hierarchy node.
#[derive(Debug)]
enum Op {
    Compute(u64),
    Dram { bursts: u64, burst_bytes: u64 },
    Call { node: Option<NodeId>, body: Vec<Op> },
    Loop { node: Option<NodeId>, trip: u64, ii: Option<u64>, body: Vec<Op> },
    Parallel(Vec<Vec<Op>>),
}

struct Elaborator<'a> {
    m: &'a DesignManifest,
    tree: &'a HierarchyTree,
    root_fn: &'a str,
}

impl Elaborator<'_> {
    /// `sites` yields the child nodes of the owning instance in site order,
    /// or is `None` outside the profiled subtree.
    fn body(&self, body: &[BodyNode], sites: &mut Option<std::slice::Iter<'_, NodeId>>) -> Vec<Op> {
        body.iter()
            .map(|n| match n {
                BodyNode::Compute { cycles, .. } => Op::Compute(*cycles),
                BodyNode::DramAccess {
                    bursts,
                    burst_bytes,
                    ..
                } => Op::Dram {
                    bursts: *bursts,
                    burst_bytes: *burst_bytes,
                },
                BodyNode::Call { callee } => {
                    let node = match sites {
                        Some(it) => Some(*it.next().expect("call site bound to a node")),
                        None if callee == self.root_fn => Some(self.tree.root),
                        None => None,
                    };
                    let def = &self.m.functions[callee];
                    Op::Call {
                        node,
                        body: self.owned(node, &def.body),
                    }
                }
                BodyNode::Loop(l) => {
                    let node = sites
                        .as_mut()
                        .map(|it| *it.next().expect("loop site bound to a node"));
                    Op::Loop {
                        node,
                        trip: l.trip_count,
                        ii: l.pipelined.then(|| l.ii.unwrap_or(1)),
                        body: self.owned(node, &l.body),
                    }
                }
                BodyNode::Parallel { branches } => {
                    Op::Parallel(branches.iter().map(|b| self.body(b, sites)).collect())
                }
            })
            .collect()
    }

    fn owned(&self, node: Option<NodeId>, body: &[BodyNode]) -> Vec<Op> {
        match node {
            Some(id) => {
                let mut it = Some(self.tree.node(id).children.iter());
                let ops = self.body(body, &mut it);
                debug_assert!(it.unwrap().next().is_none(), "unbound child sites");
                ops
            }
            None => self.body(body, &mut None),
        }
    }
}

#[derive(Clone, Copy)]
enum Frame<'a> {
    Seq { ops: &'a [Op], idx: usize },
    Call { node: Option<NodeId>, start: u64 },
    Loop {
        node: Option<NodeId>,
        trip: u64,
        body: &'a [Op],
        iter: u64,
        start: u64,
        iter_start: u64,
    },
    PipeEnd { node: Option<NodeId>, start: u64 },
    Join { pending: usize },
}

struct Proc<'a> {
    stack: Vec<Frame<'a>>,
    parent: Option<usize>,
}

#[derive(Clone, Copy)]
enum Ev {
    Resume(usize),
    Toggle(NodeId, Edge),
}

struct Scheduled {
    cycle: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.cycle, self.seq) == (o.cycle, o.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // min-heap on (cycle, seq)
    fn cmp(&self, o: &Self) -> Ordering {
        (o.cycle, o.seq).cmp(&(self.cycle, self.seq))
    }
}

struct Engine<'a> {
    mode: SimMode,
    fixed_latency: u64,
    hw_min: u64,
    geometric: Geometric,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    procs: Vec<Proc<'a>>,
    profiler: Option<ProfilerState>,
    truncate: u64,
    toggles: Vec<TimestampEntry>,
    intervals: Vec<Vec<Interval>>,
    iterations: Vec<Vec<Vec<Interval>>>,
    dram_events: Vec<DramEvent>,
    finish: Option<u64>,
    error: Option<ProfilerError>,
}

type Profiled = Option<(RawTimestampLog, Vec<TimestampEntry>)>;

pub(super) fn execute(
    m: &DesignManifest,
    tree: &HierarchyTree,
    alloc: Option<&CounterAllocation>,
    mode: SimMode,
    seed: u64,
) -> Result<(ExecutionTrace, Profiled), ProfilerError> {
    let el = Elaborator {
        m,
        tree,
        root_fn: &tree.root_node().function,
    };
    let top_node = (m.top == el.root_fn).then_some(tree.root);
    let top = vec![Op::Call {
        node: top_node,
        body: el.owned(top_node, &m.functions[&m.top].body),
    }];

    let dram = &m.platform.dram;
    let p = 1.0 / (1.0 + dram.hw_latency_mean - dram.hw_latency_min as f64);
    let mut e = Engine {
        mode,
        fixed_latency: dram.fixed_latency_cycles,
        hw_min: dram.hw_latency_min,
        geometric: Geometric::new(p.clamp(f64::MIN_POSITIVE, 1.0)).expect("valid probability"),
        rng: ChaCha8Rng::seed_from_u64(seed),
        heap: BinaryHeap::new(),
        seq: 0,
        procs: vec![Proc {
            stack: vec![Frame::Seq { ops: &top, idx: 0 }],
            parent: None,
        }],
        profiler: alloc.map(|a| ProfilerState::new(a, m.platform.bytes_per_cycle(m.clock_mhz))),
        truncate: alloc.map_or(u64::MAX, |a| a.truncate_loop_iters),
        toggles: Vec::new(),
        intervals: vec![Vec::new(); tree.len()],
        iterations: vec![Vec::new(); tree.len()],
        dram_events: Vec::new(),
        finish: None,
        error: None,
    };
    e.schedule(0, Ev::Resume(0));
    while let Some(s) = e.heap.pop() {
        if let Some(pr) = e.profiler.as_mut() {
            pr.advance(s.cycle)?;
        }
        match s.ev {
            Ev::Resume(pid) => e.step(pid, s.cycle),
            Ev::Toggle(node, edge) => e.deliver(node, edge, s.cycle),
        }
        if let Some(err) = e.error.take() {
            return Err(err);
        }
    }

    let total_cycles = e.finish.expect("top process finished");
    let profiled = e.profiler.take().map(|pr| {
        let log = pr.finalize();
        for d in &log.dumps {
            e.dram_events.push(DramEvent {
                cycle: d.issue_cycle,
                bytes: d.bytes,
                source: DramSource::Dump,
            });
        }
        (log, std::mem::take(&mut e.toggles))
    });
    e.dram_events.sort_by_key(|d| d.cycle);
    Ok((
        ExecutionTrace {
            mode,
            seed,
            intervals: e.intervals,
            iterations: e.iterations,
            total_cycles,
            dram_events: e.dram_events,
        },
        profiled,
    ))
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, cycle: u64, ev: Ev) {
        self.heap.push(Scheduled {
            cycle,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn deliver(&mut self, node: NodeId, edge: Edge, at: u64) {
        if self.error.is_some() {
            return;
        }
        if let Some(p) = self.profiler.as_mut() {
            match p.on_toggle(node, edge, at) {
                Ok(()) => self.toggles.push(TimestampEntry {
                    probe: node,
                    edge,
                    cycle: at,
                }),
                Err(err) => self.error = Some(err),
            }
        }
    }

    /// Forwards a toggle of `node` when it is probed; iteration toggles only
    /// for the first `truncate` iterations of an activation.
    fn emit(&mut self, node: Option<NodeId>, edge: Edge, at: u64, iter: Option<u64>) {
        let Some(node) = node else { return };
        if iter.is_some_and(|i| i >= self.truncate) {
            return;
        }
        if self.profiler.as_ref().is_some_and(|p| p.is_probed(node)) {
            self.deliver(node, edge, at);
        }
    }

    fn burst_latency(&mut self) -> u64 {
        match self.mode {
            SimMode::Cosim => self.fixed_latency,
            SimMode::Hw => self.hw_min + self.geometric.sample(&mut self.rng),
        }
    }

    /// Duration of a DRAM access starting at `now`, including any wait for an
    /// in-flight dump in hw mode.
    fn dram_duration(&mut self, bursts: u64, now: u64) -> u64 {
        let mut d: u64 = (0..bursts).map(|_| self.burst_latency()).sum();
        if self.mode == SimMode::Hw && bursts > 0 {
            if let Some(p) = &self.profiler {
                d += (p.channel_free().ceil() as u64).saturating_sub(now);
            }
        }
        d
    }

    /// Duration and DRAM bytes of a loop-free, call-free body.
    fn flat(&mut self, ops: &[Op], now: u64) -> (u64, u64) {
        let mut total = 0;
        let mut bytes = 0;
        for op in ops {
            let (d, b) = match op {
                Op::Compute(c) => (*c, 0),
                Op::Dram {
                    bursts,
                    burst_bytes,
                } => (self.dram_duration(*bursts, now + total), bursts * burst_bytes),
                Op::Parallel(branches) => {
                    let mut worst = 0;
                    let mut sum = 0;
                    for b in branches {
                        let (d, by) = self.flat(b, now + total);
                        worst = worst.max(d);
                        sum += by;
                    }
                    (worst, sum)
                }
                Op::Call { .. } | Op::Loop { .. } => unreachable!("pipelined body is flat"),
            };
            total += d;
            bytes += b;
        }
        (total, bytes)
    }

    fn record(&mut self, node: Option<NodeId>, iv: Interval) {
        if let Some(n) = node {
            self.intervals[n.0].push(iv);
        }
    }

    fn record_iter(&mut self, node: Option<NodeId>, iv: Interval) {
        if let Some(n) = node {
            self.iterations[n.0]
                .last_mut()
                .expect("activation opened")
                .push(iv);
        }
    }

    fn open_loop(&mut self, node: Option<NodeId>) {
        if let Some(n) = node {
            self.iterations[n.0].push(Vec::new());
        }
    }

    fn top(&mut self, pid: usize) -> &mut Frame<'a> {
        self.procs[pid].stack.last_mut().expect("non-empty stack")
    }

    fn step(&mut self, pid: usize, now: u64) {
        loop {
            if self.error.is_some() {
                return;
            }
            let Some(&frame) = self.procs[pid].stack.last() else {
                self.exit(pid, now);
                return;
            };
            match frame {
                Frame::Seq { ops, idx } => {
                    if idx == ops.len() {
                        self.procs[pid].stack.pop();
                        continue;
                    }
                    if let Frame::Seq { idx, .. } = self.top(pid) {
                        *idx += 1;
                    }
                    match &ops[idx] {
                        Op::Compute(c) => {
                            if *c > 0 {
                                self.schedule(now + c, Ev::Resume(pid));
                                return;
                            }
                        }
                        Op::Dram {
                            bursts,
                            burst_bytes,
                        } => {
                            self.dram_events.push(DramEvent {
                                cycle: now,
                                bytes: bursts * burst_bytes,
                                source: DramSource::Kernel,
                            });
                            let d = self.dram_duration(*bursts, now);
                            if d > 0 {
                                self.schedule(now + d, Ev::Resume(pid));
                                return;
                            }
                        }
                        Op::Call { node, body } => {
                            self.emit(*node, Edge::Rise, now, None);
                            let st = &mut self.procs[pid].stack;
                            st.push(Frame::Call {
                                node: *node,
                                start: now,
                            });
                            st.push(Frame::Seq { ops: body, idx: 0 });
                        }
                        Op::Loop {
                            node,
                            trip,
                            ii: None,
                            body,
                        } => {
                            self.emit(*node, Edge::Rise, now, None);
                            self.open_loop(*node);
                            if *trip == 0 {
                                self.record(*node, Interval(now, now));
                                self.emit(*node, Edge::Fall, now, None);
                            } else {
                                self.emit(*node, Edge::IterRise, now, Some(0));
                                let st = &mut self.procs[pid].stack;
                                st.push(Frame::Loop {
                                    node: *node,
                                    trip: *trip,
                                    body,
                                    iter: 0,
                                    start: now,
                                    iter_start: now,
                                });
                                st.push(Frame::Seq { ops: body, idx: 0 });
                            }
                        }
                        Op::Loop {
                            node,
                            trip,
                            ii: Some(ii),
                            body,
                        } => {
                            self.emit(*node, Edge::Rise, now, None);
                            self.open_loop(*node);
                            if *trip == 0 {
                                self.record(*node, Interval(now, now));
                                self.emit(*node, Edge::Fall, now, None);
                                continue;
                            }
                            let (d, bytes) = self.flat(body, now);
                            for i in 0..*trip {
                                let s = now + i * ii;
                                self.record_iter(*node, Interval(s, s + d));
                                if bytes > 0 {
                                    self.dram_events.push(DramEvent {
                                        cycle: s,
                                        bytes,
                                        source: DramSource::Kernel,
                                    });
                                }
                                if let Some(n) = node {
                                    if i < self.truncate
                                        && self.profiler.as_ref().is_some_and(|p| p.is_probed(*n))
                                    {
                                        self.schedule(s, Ev::Toggle(*n, Edge::IterRise));
                                        self.schedule(s + d, Ev::Toggle(*n, Edge::IterFall));
                                    }
                                }
                            }
                            let end = now + ii * (trip - 1) + d;
                            self.procs[pid].stack.push(Frame::PipeEnd {
                                node: *node,
                                start: now,
                            });
                            self.schedule(end, Ev::Resume(pid));
                            return;
                        }
                        Op::Parallel(branches) => {
                            self.procs[pid].stack.push(Frame::Join {
                                pending: branches.len(),
                            });
                            for b in branches {
                                let child = self.procs.len();
                                self.procs.push(Proc {
                                    stack: vec![Frame::Seq { ops: b, idx: 0 }],
                                    parent: Some(pid),
                                });
                                self.schedule(now, Ev::Resume(child));
                            }
                            return;
                        }
                    }
                }
                Frame::Call { node, start } | Frame::PipeEnd { node, start } => {
                    self.procs[pid].stack.pop();
                    self.record(node, Interval(start, now));
                    self.emit(node, Edge::Fall, now, None);
                }
                Frame::Loop {
                    node,
                    trip,
                    body,
                    iter,
                    start,
                    iter_start,
                } => {
                    self.record_iter(node, Interval(iter_start, now));
                    self.emit(node, Edge::IterFall, now, Some(iter));
                    if iter + 1 < trip {
                        if let Frame::Loop {
                            iter, iter_start, ..
                        } = self.top(pid)
                        {
                            *iter += 1;
                            *iter_start = now;
                        }
                        self.emit(node, Edge::IterRise, now, Some(iter + 1));
                        self.procs[pid].stack.push(Frame::Seq { ops: body, idx: 0 });
                    } else {
                        self.procs[pid].stack.pop();
                        self.record(node, Interval(start, now));
                        self.emit(node, Edge::Fall, now, None);
                    }
                }
                Frame::Join { pending } => {
                    if pending > 0 {
                        return;
                    }
                    self.procs[pid].stack.pop();
                }
            }
        }
    }

    fn exit(&mut self, pid: usize, now: u64) {
        match self.procs[pid].parent {
            None => self.finish = Some(now),
            Some(parent) => {
                if let Frame::Join { pending } = self.top(parent) {
                    *pending -= 1;
                    if *pending == 0 {
                        self.schedule(now, Ev::Resume(parent));
                    }
                }
            }
        }
    }
}
