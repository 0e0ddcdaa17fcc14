use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ProfiledTrace;
use crate::hierarchy::HierarchyTree;

/// Static per-path run totals: one-activation estimate times expected
/// activations. Unknown when either factor is unknown.
pub fn csynth_totals(tree: &HierarchyTree) -> BTreeMap<String, Option<u64>> {
    tree.nodes
        .iter()
        .map(|n| {
            let total = n.est_cycles.zip(n.activations).map(|(c, a)| c.saturating_mul(a));
            (n.source_path.clone(), total)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub source_path: String,
    pub csynth: Option<u64>,
    pub cosim: Option<u64>,
    pub hw: u64,
    /// `(csynth - hw) / hw`.
    pub csynth_diff: Option<f64>,
    /// `(cosim - hw) / hw`.
    pub cosim_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDelta {
    pub source_path: String,
    pub csynth: Option<usize>,
    pub cosim: Option<usize>,
    pub hw: usize,
}

/// Paths ordered by total cycles, largest first, per stage. The profiled
/// root is left out since it always dominates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckRanking {
    pub csynth: Vec<String>,
    pub cosim: Vec<String>,
    pub hw: Vec<String>,
    pub deltas: Vec<RankDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub ranking: BottleneckRanking,
}

fn diff(stage: Option<u64>, hw: u64) -> Option<f64> {
    let s = stage?;
    if hw == 0 {
        return (s == 0).then_some(0.0);
    }
    Some((s as f64 - hw as f64) / hw as f64)
}

fn rank(totals: impl Iterator<Item = (String, u64)>) -> Vec<String> {
    let mut v: Vec<(String, u64)> = totals.collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(p, _)| p).collect()
}

/// Three-way comparison keyed by the paths of the hw trace.
pub fn compare(
    csynth: &BTreeMap<String, Option<u64>>,
    cosim: &ProfiledTrace,
    hw: &ProfiledTrace,
) -> Comparison {
    let rows: Vec<CompareRow> = hw
        .paths
        .iter()
        .map(|p| {
            let cs = csynth.get(&p.source_path).copied().flatten();
            let co = cosim.path(&p.source_path).map(|c| c.total_cycles);
            CompareRow {
                source_path: p.source_path.clone(),
                csynth: cs,
                cosim: co,
                hw: p.total_cycles,
                csynth_diff: diff(cs, p.total_cycles),
                cosim_diff: diff(co, p.total_cycles),
            }
        })
        .collect();
    let ranked = || {
        let root = hw.paths.first().map(|p| p.source_path.as_str());
        rows.iter().filter(move |r| Some(r.source_path.as_str()) != root)
    };
    let cs = rank(ranked().filter_map(|r| r.csynth.map(|c| (r.source_path.clone(), c))));
    let co = rank(ranked().filter_map(|r| r.cosim.map(|c| (r.source_path.clone(), c))));
    let hwr = rank(ranked().map(|r| (r.source_path.clone(), r.hw)));
    let pos = |list: &[String], p: &str| list.iter().position(|x| x == p).map(|i| i + 1);
    let deltas = hwr
        .iter()
        .map(|p| RankDelta {
            source_path: p.clone(),
            csynth: pos(&cs, p),
            cosim: pos(&co, p),
            hw: pos(&hwr, p).expect("ranked"),
        })
        .collect();
    Comparison {
        rows,
        ranking: BottleneckRanking {
            csynth: cs,
            cosim: co,
            hw: hwr,
            deltas,
        },
    }
}

impl Comparison {
    pub fn render_table(&self) -> String {
        let cell = |v: Option<u64>| v.map_or("?".to_string(), |v| v.to_string());
        let pct = |v: Option<f64>| v.map_or("?".to_string(), |v| format!("{:+.1}%", v * 100.0));
        let w = self
            .rows
            .iter()
            .map(|r| r.source_path.len())
            .max()
            .unwrap_or(0)
            .max(11);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$}  {:>10}  {:>10}  {:>10}  {:>9}  {:>9}",
            "source_path", "csynth", "cosim", "hw", "csynth%", "cosim%"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>10}  {:>10}  {:>10}  {:>9}  {:>9}",
                r.source_path,
                cell(r.csynth),
                cell(r.cosim),
                r.hw,
                pct(r.csynth_diff),
                pct(r.cosim_diff)
            );
        }
        let _ = writeln!(s, "\nrank  {:<w$}  csynth  cosim", "hw");
        for d in &self.ranking.deltas {
            let r = |v: Option<usize>| v.map_or("?".into(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{:>4}  {:<w$}  {:>6}  {:>5}",
                d.hw,
                d.source_path,
                r(d.csynth),
                r(d.cosim)
            );
        }
        s
    }
}
