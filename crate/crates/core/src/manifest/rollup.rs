use std::collections::BTreeMap;

use super::{BodyNode, DesignManifest};

/// Static latency estimate per function and per loop.
///
/// Keys are function names (`"sum"`) and function-local loop paths
/// (`"sum/L_while"`, `"f/L_outer/L_inner"`). `None` marks an estimate that
/// cannot be known statically because a data-dependent loop is involved.
pub type Rollup = BTreeMap<String, Option<u64>>;

/// Rolls static latencies up the call graph.
///
/// Sequential nodes add, a loop costs `trip * body` (pipelined:
/// `ii * (trip - 1) + body`), a parallel block costs its slowest branch, a
/// dram access costs `bursts * fixed_latency_cycles`, and a function's
/// `estimated_cycles` overrides its computed total.
pub fn static_latency_rollup(m: &DesignManifest) -> Rollup {
    let mut out = Rollup::new();
    let mut memo: BTreeMap<String, Option<u64>> = BTreeMap::new();
    for name in m.functions.keys() {
        function_total(m, name, &mut memo, &mut out);
    }
    out
}

fn function_total(
    m: &DesignManifest,
    name: &str,
    memo: &mut BTreeMap<String, Option<u64>>,
    out: &mut Rollup,
) -> Option<u64> {
    if let Some(v) = memo.get(name) {
        return *v;
    }
    let f = &m.functions[name];
    let computed = body_total(m, name, "", &f.body, memo, out);
    let total = f.estimated_cycles.or(computed);
    memo.insert(name.to_string(), total);
    out.insert(name.to_string(), total);
    total
}

fn body_total(
    m: &DesignManifest,
    function: &str,
    loop_prefix: &str,
    body: &[BodyNode],
    memo: &mut BTreeMap<String, Option<u64>>,
    out: &mut Rollup,
) -> Option<u64> {
    let mut total = Some(0u64);
    for node in body {
        let cost = match node {
            BodyNode::Compute { cycles, .. } => Some(*cycles),
            BodyNode::DramAccess { bursts, .. } => {
                Some(bursts.saturating_mul(m.platform.dram.fixed_latency_cycles))
            }
            BodyNode::Call { callee } => function_total(m, callee, memo, out),
            BodyNode::Parallel { branches } => {
                let mut worst = Some(0u64);
                for b in branches {
                    let c = body_total(m, function, loop_prefix, b, memo, out);
                    worst = match (worst, c) {
                        (Some(w), Some(c)) => Some(w.max(c)),
                        _ => None,
                    };
                }
                worst
            }
            BodyNode::Loop(l) => {
                let prefix = format!("{loop_prefix}{}/", l.name);
                let inner = body_total(m, function, &prefix, &l.body, memo, out);
                let cost = match inner {
                    _ if l.data_dependent => None,
                    None => None,
                    Some(_) if l.trip_count == 0 => Some(0),
                    Some(b) if l.pipelined => Some(
                        l.ii.unwrap_or(1)
                            .saturating_mul(l.trip_count - 1)
                            .saturating_add(b),
                    ),
                    Some(b) => Some(b.saturating_mul(l.trip_count)),
                };
                out.insert(format!("{function}/{loop_prefix}{}", l.name), cost);
                cost
            }
        };
        total = match (total, cost) {
            (Some(t), Some(c)) => Some(t.saturating_add(c)),
            _ => None,
        };
    }
    total
}
