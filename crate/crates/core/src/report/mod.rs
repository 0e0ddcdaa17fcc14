//! Source-level presentation of profiling results.

mod compare;
mod gantt;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::hierarchy::{MappingTable, NodeKind};
use crate::simkernel::{Interval, SimMode};

pub use compare::{compare, csynth_totals, BottleneckRanking, CompareRow, Comparison, RankDelta};
pub use gantt::{export_gantt, gantt_lanes_from_svg, Gantt};

/// Number of per-iteration rows shown for a loop.
pub const ITERATION_ROWS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathProfile {
    pub source_path: String,
    pub rtl_name: String,
    pub kind: NodeKind,
    /// Iterations for loops, activations for functions; `None` when the count
    /// cannot be recovered.
    pub iterations: Option<u64>,
    pub total_cycles: u64,
    pub activations: Vec<Interval>,
    /// Per activation: recorded iterations, or the analytic expansion for
    /// pipelined loops.
    pub iteration_intervals: Vec<Vec<Interval>>,
    /// Iteration intervals were derived rather than recorded.
    pub synthetic: bool,
    /// Fewer iterations were recorded than executed.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfiledTrace {
    pub mode: Option<SimMode>,
    pub seed: Option<u64>,
    pub paths: Vec<PathProfile>,
}

impl ProfiledTrace {
    pub fn path(&self, source_path: &str) -> Option<&PathProfile> {
        self.paths.iter().find(|p| p.source_path == source_path)
    }

    pub fn with_run(mut self, mode: SimMode, seed: u64) -> Self {
        self.mode = Some(mode);
        self.seed = Some(seed);
        self
    }
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or_else(|| "?".to_string(), |v| v.to_string())
}

/// Fixed-width table plus an equivalent JSON document.
pub fn render_table(t: &ProfiledTrace, map: &MappingTable) -> (String, serde_json::Value) {
    let rtl = |p: &PathProfile| {
        map.by_source(&p.source_path)
            .map_or(p.rtl_name.clone(), |r| r.rtl_name.clone())
    };
    let mut rows: Vec<[String; 6]> = Vec::new();
    let mut footnote = false;
    for p in &t.paths {
        let mut iters = fmt_opt(p.iterations);
        let shows_iters = p.kind == NodeKind::LoopInstance;
        let cut = shows_iters
            && p.iteration_intervals
                .first()
                .is_some_and(|v| v.len() > ITERATION_ROWS || p.truncated);
        if cut {
            iters.push('*');
            footnote = true;
        }
        let (start, end) = p
            .activations
            .first()
            .map_or(("-".into(), "-".into()), |a| {
                (a.start().to_string(), p.activations.last().unwrap().end().to_string())
            });
        rows.push([
            p.source_path.clone(),
            rtl(p),
            iters,
            p.total_cycles.to_string(),
            start,
            end,
        ]);
        if shows_iters {
            if let Some(first) = p.iteration_intervals.first() {
                for (i, iv) in first.iter().take(ITERATION_ROWS).enumerate() {
                    rows.push([
                        format!("  iter {}", i + 1),
                        String::new(),
                        String::new(),
                        iv.len().to_string(),
                        iv.start().to_string(),
                        iv.end().to_string(),
                    ]);
                }
            }
        }
    }
    let header = ["source_path", "rtl_name", "iterations", "total_cycles", "start", "end"];
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: [&str; 6]| {
        let _ = writeln!(
            s,
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {:>w4$}  {:>w5$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            cells[4],
            cells[5],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
            w4 = widths[4],
            w5 = widths[5],
        );
    };
    line(&mut s, header);
    line(&mut s, widths.map(|w| "-".repeat(w)).each_ref().map(String::as_str));
    for r in &rows {
        line(&mut s, r.each_ref().map(String::as_str));
    }
    if footnote {
        let _ = writeln!(
            s,
            "* per-iteration rows list the first {ITERATION_ROWS} iterations; totals cover every iteration"
        );
    }

    let json = json!({
        "mode": t.mode,
        "seed": t.seed,
        "rows": t.paths.iter().map(|p| json!({
            "source_path": p.source_path,
            "rtl_name": rtl(p),
            "kind": p.kind,
            "iterations": p.iterations,
            "total_cycles": p.total_cycles,
            "activations": p.activations,
            "iterations_shown": p.iteration_intervals.first()
                .map(|v| v.iter().take(ITERATION_ROWS).collect::<Vec<_>>())
                .unwrap_or_default(),
            "synthetic": p.synthetic,
            "truncated": p.truncated,
        })).collect::<Vec<_>>(),
    });
    (s, json)
}

/// One CSV row per path: `source_path,rtl_name,iterations,total_cycles,activations`.
pub fn render_csv(t: &ProfiledTrace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source_path", "rtl_name", "iterations", "total_cycles", "activations"])
        .unwrap();
    for p in &t.paths {
        w.write_record([
            p.source_path.as_str(),
            &p.rtl_name,
            &fmt_opt(p.iterations),
            &p.total_cycles.to_string(),
            &p.activations.len().to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
