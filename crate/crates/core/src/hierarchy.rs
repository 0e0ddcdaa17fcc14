//! Module hierarchy extraction and the source-to-RTL mapping table.
//!
//! The tree is elaborated per call site: a function called twice from the
//! same scope yields two instances (`mult_1`, `mult_2`). Children of a node
//! are ordered by the preorder position of their call or loop site in the
//! owning body; the simulator relies on that order to bind executing sites
//! to tree nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{static_latency_rollup, BodyNode, DesignManifest, Rollup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    FunctionInstance,
    LoopInstance,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::FunctionInstance => "function_instance",
            NodeKind::LoopInstance => "loop_instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub trip_count: u64,
    pub pipelined: bool,
    pub ii: Option<u64>,
    pub data_dependent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub rtl_name: String,
    pub source_path: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    /// Callee for function instances, enclosing function for loops.
    pub function: String,
    /// Key of this node in the static roll-up.
    pub rollup_key: String,
    /// Static estimate for one activation.
    pub est_cycles: Option<u64>,
    /// Expected number of activations over a whole run; `None` when a
    /// data-dependent loop encloses the node.
    pub activations: Option<u64>,
    pub loop_info: Option<LoopInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyTree {
    pub nodes: Vec<HierNode>,
    pub root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("no function carries the profiling pragma; nothing to profile")]
    NoPragma,
    #[error("function `{0}` is not defined")]
    UnknownFunction(String),
    #[error("source path `{0}` would name two hierarchy nodes")]
    DuplicatePath(String),
    #[error("no hierarchy node at `{path}`{}", suggestion_text(.suggestion))]
    NotFound {
        path: String,
        suggestion: Option<String>,
    },
}

fn suggestion_text(s: &Option<String>) -> String {
    s.as_ref()
        .map(|s| format!(" (did you mean `{s}`?)"))
        .unwrap_or_default()
}

/// Builds the hierarchy rooted at the pragma-marked function.
pub fn build_hierarchy(m: &DesignManifest) -> Result<HierarchyTree, HierarchyError> {
    let root = m.pragma_function().ok_or(HierarchyError::NoPragma)?;
    build_hierarchy_at(m, root)
}

/// Builds the hierarchy rooted at an arbitrary function.
pub fn build_hierarchy_at(m: &DesignManifest, root: &str) -> Result<HierarchyTree, HierarchyError> {
    let f = m
        .function(root)
        .ok_or_else(|| HierarchyError::UnknownFunction(root.to_string()))?;
    let rollup = static_latency_rollup(m);
    let invocations = invocation_counts(m);
    let mut b = Builder {
        m,
        rollup: &rollup,
        nodes: Vec::new(),
        rtl_names: BTreeSet::new(),
        paths: BTreeSet::new(),
    };
    let root_id = b.push(Pending {
        kind: NodeKind::FunctionInstance,
        parent: None,
        segment: root.to_string(),
        function: root.to_string(),
        rollup_key: root.to_string(),
        rtl_base: String::new(),
        activations: invocations.get(root).copied().flatten(),
        loop_info: None,
    })?;
    b.walk(&f.body, root_id, root, "")?;
    Ok(HierarchyTree {
        nodes: b.nodes,
        root: root_id,
    })
}

struct Pending {
    kind: NodeKind,
    parent: Option<NodeId>,
    segment: String,
    function: String,
    rollup_key: String,
    /// For loops: `<func>_<loop path>`; empty for functions (derived from path).
    rtl_base: String,
    activations: Option<u64>,
    loop_info: Option<LoopInfo>,
}

struct Builder<'a> {
    m: &'a DesignManifest,
    rollup: &'a Rollup,
    nodes: Vec<HierNode>,
    rtl_names: BTreeSet<String>,
    paths: BTreeSet<String>,
}

impl Builder<'_> {
    fn push(&mut self, p: Pending) -> Result<NodeId, HierarchyError> {
        let id = NodeId(self.nodes.len());
        let (source_path, depth) = match p.parent {
            Some(parent) => {
                let pn = &self.nodes[parent.0];
                (format!("{}/{}", pn.source_path, p.segment), pn.depth + 1)
            }
            None => (p.segment.clone(), 0),
        };
        if !self.paths.insert(source_path.clone()) {
            return Err(HierarchyError::DuplicatePath(source_path));
        }
        let base = match p.kind {
            NodeKind::FunctionInstance => format!("grp_{}_fu", source_path.replace('/', "_")),
            NodeKind::LoopInstance => p.rtl_base.clone(),
        };
        let mut rtl_name = base.clone();
        let mut k = 2;
        while self.rtl_names.contains(&rtl_name) {
            rtl_name = format!("{base}_{k}");
            k += 1;
        }
        self.rtl_names.insert(rtl_name.clone());
        if let Some(parent) = p.parent {
            self.nodes[parent.0].children.push(id);
        }
        self.nodes.push(HierNode {
            id,
            kind: p.kind,
            rtl_name,
            source_path,
            parent: p.parent,
            children: Vec::new(),
            depth,
            est_cycles: self.rollup.get(&p.rollup_key).copied().flatten(),
            function: p.function,
            rollup_key: p.rollup_key,
            activations: p.activations,
            loop_info: p.loop_info,
        });
        Ok(id)
    }

    /// Adds one child per call or loop site of `body`, in preorder.
    fn walk(
        &mut self,
        body: &[BodyNode],
        owner: NodeId,
        function: &str,
        loop_prefix: &str,
    ) -> Result<(), HierarchyError> {
        let mut sites = Vec::new();
        owner_sites(body, &mut sites);
        let mut per_callee: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &sites {
            if let BodyNode::Call { callee } = s {
                *per_callee.entry(callee).or_default() += 1;
            }
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let owner_acts = self.nodes[owner.0].activations;
        let owner_trip = self.nodes[owner.0]
            .loop_info
            .as_ref()
            .map(|l| (!l.data_dependent).then_some(l.trip_count));
        let acts = match owner_trip {
            None => owner_acts,
            Some(Some(t)) => owner_acts.map(|a| a.saturating_mul(t)),
            Some(None) => None,
        };
        for s in sites {
            match s {
                BodyNode::Call { callee } => {
                    let n = seen.entry(callee).or_default();
                    *n += 1;
                    let segment = if per_callee[callee.as_str()] > 1 {
                        format!("{callee}_{n}")
                    } else {
                        callee.clone()
                    };
                    let def = self
                        .m
                        .function(callee)
                        .ok_or_else(|| HierarchyError::UnknownFunction(callee.clone()))?;
                    let id = self.push(Pending {
                        kind: NodeKind::FunctionInstance,
                        parent: Some(owner),
                        segment,
                        function: callee.clone(),
                        rollup_key: callee.clone(),
                        rtl_base: String::new(),
                        activations: acts,
                        loop_info: None,
                    })?;
                    self.walk(&def.body, id, callee, "")?;
                }
                BodyNode::Loop(l) => {
                    let local = format!("{loop_prefix}{}", l.name);
                    let id = self.push(Pending {
                        kind: NodeKind::LoopInstance,
                        parent: Some(owner),
                        segment: l.name.clone(),
                        function: function.to_string(),
                        rollup_key: format!("{function}/{local}"),
                        rtl_base: format!("{function}_{}", local.replace('/', "_")),
                        activations: acts,
                        loop_info: Some(LoopInfo {
                            trip_count: l.trip_count,
                            pipelined: l.pipelined,
                            ii: l.ii,
                            data_dependent: l.data_dependent,
                        }),
                    })?;
                    self.walk(&l.body, id, function, &format!("{local}/"))?;
                }
                _ => unreachable!("owner_sites yields calls and loops only"),
            }
        }
        Ok(())
    }
}

/// Call and loop sites owned directly by a body: descends into parallel
/// branches but not into loops.
pub(crate) fn owner_sites<'a>(body: &'a [BodyNode], out: &mut Vec<&'a BodyNode>) {
    for n in body {
        match n {
            BodyNode::Call { .. } | BodyNode::Loop(_) => out.push(n),
            BodyNode::Parallel { branches } => branches.iter().for_each(|b| owner_sites(b, out)),
            _ => {}
        }
    }
}

/// Number of times each function runs when the top function runs once.
fn invocation_counts(m: &DesignManifest) -> BTreeMap<String, Option<u64>> {
    fn visit(
        m: &DesignManifest,
        body: &[BodyNode],
        mult: Option<u64>,
        acc: &mut BTreeMap<String, Option<u64>>,
    ) {
        for n in body {
            match n {
                BodyNode::Call { callee } => {
                    let e = acc.entry(callee.clone()).or_insert(Some(0));
                    *e = match (*e, mult) {
                        (Some(a), Some(b)) => Some(a.saturating_add(b)),
                        _ => None,
                    };
                    visit(m, &m.functions[callee].body, mult, acc);
                }
                BodyNode::Loop(l) => {
                    let inner = if l.data_dependent {
                        None
                    } else {
                        mult.map(|x| x.saturating_mul(l.trip_count))
                    };
                    visit(m, &l.body, inner, acc);
                }
                BodyNode::Parallel { branches } => {
                    branches.iter().for_each(|b| visit(m, b, mult, acc))
                }
                _ => {}
            }
        }
    }
    let mut acc = BTreeMap::new();
    acc.insert(m.top.clone(), Some(1));
    visit(m, &m.functions[&m.top].body, Some(1), &mut acc);
    acc
}

impl HierarchyTree {
    pub fn node(&self, id: NodeId) -> &HierNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_node(&self) -> &HierNode {
        self.node(self.root)
    }

    /// Node ids of the subtree rooted at `id`, in preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.node(n).children.iter().rev());
        }
        out
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        self.subtree(self.root)
    }

    /// Ancestors of `id`, parent first, ending at the root.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.node(p).parent;
        }
        out
    }

    pub fn by_path(&self, path: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.source_path == path)
            .map(|n| n.id)
    }

    /// Exact-match lookup by source path; the empty path names the root.
    pub fn locate(&self, path: &str) -> Result<NodeId, HierarchyError> {
        if path.is_empty() {
            return Ok(self.root);
        }
        self.by_path(path).ok_or_else(|| HierarchyError::NotFound {
            path: path.to_string(),
            suggestion: self.suggest(path),
        })
    }

    /// Closest existing path: longest shared prefix, then smallest edit
    /// distance, then shortest, then lexicographic.
    fn suggest(&self, path: &str) -> Option<String> {
        self.nodes
            .iter()
            .map(|n| {
                let shared = n
                    .source_path
                    .chars()
                    .zip(path.chars())
                    .take_while(|(a, b)| a == b)
                    .count();
                let dist = strsim::levenshtein(&n.source_path, path);
                (
                    std::cmp::Reverse(shared),
                    dist,
                    n.source_path.len(),
                    n.source_path.as_str(),
                )
            })
            .min()
            .map(|(_, _, _, p)| p.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRow {
    pub source_path: String,
    pub rtl_name: String,
    pub kind: NodeKind,
}

/// Bijective table between source paths and RTL instance names, in preorder.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MappingTable {
    pub entries: Vec<MappingRow>,
}

pub fn build_mapping(t: &HierarchyTree) -> MappingTable {
    MappingTable {
        entries: t
            .preorder()
            .into_iter()
            .map(|id| {
                let n = t.node(id);
                MappingRow {
                    source_path: n.source_path.clone(),
                    rtl_name: n.rtl_name.clone(),
                    kind: n.kind,
                }
            })
            .collect(),
    }
}

impl MappingTable {
    pub fn by_source(&self, source_path: &str) -> Option<&MappingRow> {
        self.entries.iter().find(|r| r.source_path == source_path)
    }

    pub fn by_rtl(&self, rtl_name: &str) -> Option<&MappingRow> {
        self.entries.iter().find(|r| r.rtl_name == rtl_name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source_path", "rtl_name", "kind"]).unwrap();
        for r in &self.entries {
            w.write_record([&r.source_path, &r.rtl_name, r.kind.as_str()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let entries = r.deserialize().collect::<Result<Vec<MappingRow>, _>>()?;
        Ok(MappingTable { entries })
    }

    /// Fixed-width text table.
    pub fn render_table(&self) -> String {
        let w0 = self
            .entries
            .iter()
            .map(|r| r.source_path.len())
            .max()
            .unwrap_or(0)
            .max("source_path".len());
        let w1 = self
            .entries
            .iter()
            .map(|r| r.rtl_name.len())
            .max()
            .unwrap_or(0)
            .max("rtl_name".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<w0$}  {:<w1$}  kind", "source_path", "rtl_name");
        let _ = writeln!(s, "{}  {}  {}", "-".repeat(w0), "-".repeat(w1), "-".repeat(17));
        for r in &self.entries {
            let _ = writeln!(
                s,
                "{:<w0$}  {:<w1$}  {}",
                r.source_path,
                r.rtl_name,
                r.kind.as_str()
            );
        }
        s
    }
}
