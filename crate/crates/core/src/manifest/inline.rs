use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{callees, BodyNode, DesignManifest, InlineHint, ValidationError};

/// Function-level inlining control applied before hierarchy extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InliningPolicy {
    /// Inline `always` functions and single-compute leaf functions everywhere.
    #[default]
    InlineDefault,
    /// Inline nothing: every function stays a module.
    InlineOffAll,
    /// Like `InlineDefault`, except nothing is inlined inside the subtree
    /// rooted at the profiling target.
    InlineOffTop,
}

impl std::str::FromStr for InliningPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Self::InlineDefault),
            "off-all" => Ok(Self::InlineOffAll),
            "off-top" => Ok(Self::InlineOffTop),
            other => Err(format!("unknown inlining policy `{other}`")),
        }
    }
}

/// Rewrites the manifest under `policy`.
///
/// Inlined callees are spliced into every eligible call site. Their loops and
/// named nodes are renamed `<callee>_<node>`; unnamed compute and dram nodes
/// become `<callee>_c<i>` / `<callee>_d<i>`. Splicing repeats until no
/// eligible call remains, so applying a policy twice equals applying it once.
pub fn apply_inlining(
    m: &DesignManifest,
    policy: InliningPolicy,
) -> Result<DesignManifest, ValidationError> {
    let mut out = m.clone();
    if policy == InliningPolicy::InlineOffAll {
        for f in out.functions.values_mut() {
            f.inline_hint = InlineHint::Auto;
        }
        return Ok(out);
    }

    let protected: BTreeSet<String> = match (policy, m.pragma_function()) {
        (InliningPolicy::InlineOffTop, Some(p)) => m.reachable_from(p),
        _ => BTreeSet::new(),
    };
    for name in &protected {
        if let Some(f) = out.functions.get_mut(name) {
            f.inline_hint = InlineHint::Auto;
        }
    }

    loop {
        let candidates = candidates(&out, &protected);
        if candidates.is_empty() {
            break;
        }
        if let Some(p) = out.pragma_function() {
            if candidates.contains(p) {
                return Err(ValidationError::PragmaInlined(p.to_string()));
            }
        }
        let snapshot: BTreeMap<String, Vec<BodyNode>> = candidates
            .iter()
            .map(|c| (c.clone(), out.functions[c].body.clone()))
            .collect();
        let callers: Vec<String> = out
            .functions
            .keys()
            .filter(|n| !protected.contains(*n))
            .cloned()
            .collect();
        for caller in callers {
            let f = out.functions.get_mut(&caller).expect("caller exists");
            let mut used = BTreeSet::new();
            collect_loop_names(&f.body, &mut used);
            let body = std::mem::take(&mut f.body);
            f.body = splice_body(body, &snapshot, &mut used);
        }
        let still_called: BTreeSet<String> = out
            .functions
            .values()
            .flat_map(|f| callees(&f.body).into_iter().map(str::to_string))
            .collect();
        for c in &candidates {
            if *c != out.top && !still_called.contains(c) {
                out.functions.remove(c);
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Functions that will be spliced into at least one unprotected caller.
fn candidates(m: &DesignManifest, protected: &BTreeSet<String>) -> BTreeSet<String> {
    let called_from_open: BTreeSet<&str> = m
        .functions
        .iter()
        .filter(|(n, _)| !protected.contains(*n))
        .flat_map(|(_, f)| callees(&f.body))
        .collect();
    m.functions
        .iter()
        .filter(|(name, f)| {
            let eligible = match f.inline_hint {
                InlineHint::Always => true,
                InlineHint::Never => false,
                InlineHint::Auto => {
                    f.estimated_cycles.is_none()
                        && matches!(f.body.as_slice(), [BodyNode::Compute { .. }])
                }
            };
            eligible && !protected.contains(*name) && called_from_open.contains(name.as_str())
        })
        .map(|(n, _)| n.clone())
        .collect()
}

fn collect_loop_names(body: &[BodyNode], out: &mut BTreeSet<String>) {
    for n in body {
        match n {
            BodyNode::Loop(l) => {
                out.insert(l.name.clone());
                collect_loop_names(&l.body, out);
            }
            BodyNode::Parallel { branches } => {
                branches.iter().for_each(|b| collect_loop_names(b, out))
            }
            _ => {}
        }
    }
}

fn splice_body(
    body: Vec<BodyNode>,
    inlined: &BTreeMap<String, Vec<BodyNode>>,
    used: &mut BTreeSet<String>,
) -> Vec<BodyNode> {
    let mut out = Vec::with_capacity(body.len());
    for node in body {
        match node {
            BodyNode::Call { callee } if inlined.contains_key(&callee) => {
                out.extend(renamed_copy(&callee, &inlined[&callee], used));
            }
            BodyNode::Loop(mut l) => {
                l.body = splice_body(std::mem::take(&mut l.body), inlined, used);
                out.push(BodyNode::Loop(l));
            }
            BodyNode::Parallel { branches } => out.push(BodyNode::Parallel {
                branches: branches
                    .into_iter()
                    .map(|b| splice_body(b, inlined, used))
                    .collect(),
            }),
            other => out.push(other),
        }
    }
    out
}

/// Copy of `body` with every loop and leaf renamed under a prefix derived
/// from `callee`, chosen so no loop name clashes with `used`.
fn renamed_copy(callee: &str, body: &[BodyNode], used: &mut BTreeSet<String>) -> Vec<BodyNode> {
    let mut loops = BTreeSet::new();
    collect_loop_names(body, &mut loops);
    let mut prefix = callee.to_string();
    let mut k = 2;
    while loops.iter().any(|l| used.contains(&format!("{prefix}_{l}"))) {
        prefix = format!("{callee}_{k}");
        k += 1;
    }
    for l in &loops {
        used.insert(format!("{prefix}_{l}"));
    }
    let mut counters = (0usize, 0usize);
    rename(body, &prefix, &mut counters)
}

fn rename(body: &[BodyNode], prefix: &str, counters: &mut (usize, usize)) -> Vec<BodyNode> {
    body.iter()
        .map(|n| match n {
            BodyNode::Compute { cycles, name } => {
                let local = name.clone().unwrap_or_else(|| format!("c{}", counters.0));
                counters.0 += 1;
                BodyNode::Compute {
                    cycles: *cycles,
                    name: Some(format!("{prefix}_{local}")),
                }
            }
            BodyNode::DramAccess {
                bursts,
                burst_bytes,
                name,
            } => {
                let local = name.clone().unwrap_or_else(|| format!("d{}", counters.1));
                counters.1 += 1;
                BodyNode::DramAccess {
                    bursts: *bursts,
                    burst_bytes: *burst_bytes,
                    name: Some(format!("{prefix}_{local}")),
                }
            }
            BodyNode::Loop(l) => {
                let mut l = l.clone();
                l.name = format!("{prefix}_{}", l.name);
                l.body = rename(&l.body, prefix, counters);
                BodyNode::Loop(l)
            }
            BodyNode::Parallel { branches } => BodyNode::Parallel {
                branches: branches.iter().map(|b| rename(b, prefix, counters)).collect(),
            },
            BodyNode::Call { .. } => n.clone(),
        })
        .collect()
}
