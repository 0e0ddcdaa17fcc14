//! Design manifests: the declarative description of a kernel's function and
//! loop hierarchy, its compute latencies and memory bursts.
//!
//! A manifest is a JSON document. [`parse_manifest`] deserializes and
//! validates it; [`render_manifest`] is the canonical serializer and
//! round-trips through the parser.

mod inline;
mod rollup;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkernel::PlatformModel;

pub use inline::{apply_inlining, InliningPolicy};
pub use rollup::{static_latency_rollup, Rollup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignManifest {
    #[serde(rename = "design")]
    pub name: String,
    pub clock_mhz: f64,
    pub platform: PlatformModel,
    pub budget: ResourceBudget,
    /// Resource usage of the un-instrumented kernel, as its synthesis report
    /// would state it. Absent means unknown and is treated as zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_usage: Option<ResourceBudget>,
    pub top: String,
    pub functions: BTreeMap<String, FunctionDef>,
}

/// LUT / FF / BRAM-block counts. Used both for board budgets and for usage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceBudget {
    pub lut: u64,
    pub ff: u64,
    pub bram: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDef {
    #[serde(default, skip_serializing_if = "is_false")]
    pub pragma_realprobe: bool,
    #[serde(rename = "inline", default, skip_serializing_if = "InlineHint::is_auto")]
    pub inline_hint: InlineHint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_cycles: Option<u64>,
    #[serde(default)]
    pub body: Vec<BodyNode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InlineHint {
    #[default]
    Auto,
    Never,
    Always,
}

impl InlineHint {
    fn is_auto(&self) -> bool {
        *self == InlineHint::Auto
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BodyNode {
    Call {
        callee: String,
    },
    Loop(LoopNode),
    Compute {
        cycles: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    #[serde(rename = "dram")]
    DramAccess {
        bursts: u64,
        burst_bytes: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Parallel {
        branches: Vec<Vec<BodyNode>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopNode {
    pub name: String,
    pub trip_count: u64,
    #[serde(default)]
    pub pipelined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ii: Option<u64>,
    /// The trip count depends on data, so static analysis cannot bound it.
    /// The simulator still executes `trip_count` iterations.
    #[serde(default, skip_serializing_if = "is_false")]
    pub data_dependent: bool,
    #[serde(default)]
    pub body: Vec<BodyNode>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("top function `{0}` is not defined")]
    UnknownTop(String),
    #[error("function `{caller}` calls undefined function `{callee}`")]
    DanglingCallee { caller: String, callee: String },
    #[error("recursive call chain {}", .cycle.join(" -> "))]
    Recursion { cycle: Vec<String> },
    #[error("loop name `{name}` appears more than once in function `{function}`")]
    DuplicateLoop { function: String, name: String },
    #[error("more than one function carries the profiling pragma: {}", .0.join(", "))]
    MultiplePragmas(Vec<String>),
    #[error("clock_mhz must be a positive finite number, got {0}")]
    InvalidClock(f64),
    #[error("pipelined loop `{loop_name}` in `{function}` needs an ii >= 1")]
    MissingIi { function: String, loop_name: String },
    #[error("loop `{loop_name}` in `{function}` is not pipelined but sets ii")]
    UnexpectedIi { function: String, loop_name: String },
    #[error("parallel block in `{function}` has no branches")]
    EmptyParallel { function: String },
    #[error("pipelined loop `{loop_name}` in `{function}` may only contain compute, dram and parallel nodes")]
    PipelinedBody { function: String, loop_name: String },
    #[error("invalid platform: {0}")]
    InvalidPlatform(String),
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("function `{0}` is marked inline=always but carries estimated_cycles")]
    InlineConflict(String),
    #[error("profiling target `{0}` would be inlined into its caller")]
    PragmaInlined(String),
}

/// Parses and validates a manifest document.
pub fn parse_manifest(text: &str) -> Result<DesignManifest, ManifestError> {
    let m: DesignManifest = serde_json::from_str(text).map_err(|e| ManifestError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    m.validate()?;
    Ok(m)
}

/// Canonical pretty-printed JSON form of a manifest.
pub fn render_manifest(m: &DesignManifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

impl DesignManifest {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.get(name)
    }

    /// Name of the function carrying the profiling pragma, if any.
    pub fn pragma_function(&self) -> Option<&str> {
        self.functions
            .iter()
            .find(|(_, f)| f.pragma_realprobe)
            .map(|(n, _)| n.as_str())
    }

    /// Clock period in seconds.
    pub fn cycle_seconds(&self) -> f64 {
        1.0e-6 / self.clock_mhz
    }

    pub fn origin(&self) -> ResourceBudget {
        self.origin_usage.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(ValidationError::InvalidClock(self.clock_mhz));
        }
        self.platform.validate()?;
        if !self.functions.contains_key(&self.top) {
            return Err(ValidationError::UnknownTop(self.top.clone()));
        }
        let pragmas: Vec<String> = self
            .functions
            .iter()
            .filter(|(_, f)| f.pragma_realprobe)
            .map(|(n, _)| n.clone())
            .collect();
        if pragmas.len() > 1 {
            return Err(ValidationError::MultiplePragmas(pragmas));
        }
        for (name, f) in &self.functions {
            check_identifier(name)?;
            if f.inline_hint == InlineHint::Always && f.estimated_cycles.is_some() {
                return Err(ValidationError::InlineConflict(name.clone()));
            }
            let mut loops = BTreeSet::new();
            self.validate_body(name, &f.body, &mut loops)?;
        }
        self.check_acyclic()
    }

    fn validate_body(
        &self,
        function: &str,
        body: &[BodyNode],
        loops: &mut BTreeSet<String>,
    ) -> Result<(), ValidationError> {
        for node in body {
            match node {
                BodyNode::Call { callee } => {
                    if !self.functions.contains_key(callee) {
                        return Err(ValidationError::DanglingCallee {
                            caller: function.to_string(),
                            callee: callee.clone(),
                        });
                    }
                }
                BodyNode::Loop(l) => {
                    check_identifier(&l.name)?;
                    if !loops.insert(l.name.clone()) {
                        return Err(ValidationError::DuplicateLoop {
                            function: function.to_string(),
                            name: l.name.clone(),
                        });
                    }
                    match (l.pipelined, l.ii) {
                        (true, None) | (true, Some(0)) => {
                            return Err(ValidationError::MissingIi {
                                function: function.to_string(),
                                loop_name: l.name.clone(),
                            })
                        }
                        (false, Some(_)) => {
                            return Err(ValidationError::UnexpectedIi {
                                function: function.to_string(),
                                loop_name: l.name.clone(),
                            })
                        }
                        _ => {}
                    }
                    if l.pipelined && !is_flat(&l.body) {
                        return Err(ValidationError::PipelinedBody {
                            function: function.to_string(),
                            loop_name: l.name.clone(),
                        });
                    }
                    self.validate_body(function, &l.body, loops)?;
                }
                BodyNode::Compute { name, .. } | BodyNode::DramAccess { name, .. } => {
                    if let Some(n) = name {
                        check_identifier(n)?;
                    }
                }
                BodyNode::Parallel { branches } => {
                    if branches.is_empty() {
                        return Err(ValidationError::EmptyParallel {
                            function: function.to_string(),
                        });
                    }
                    for b in branches {
                        self.validate_body(function, b, loops)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<(), ValidationError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        fn visit<'a>(
            m: &'a DesignManifest,
            name: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
        ) -> Result<(), ValidationError> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Open) => {
                    let pos = stack.iter().position(|s| *s == name).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.push(name.to_string());
                    return Err(ValidationError::Recursion { cycle });
                }
                None => {}
            }
            marks.insert(name, Mark::Open);
            stack.push(name);
            for callee in callees(&m.functions[name].body) {
                visit(m, callee, marks, stack)?;
            }
            stack.pop();
            marks.insert(name, Mark::Done);
            Ok(())
        }
        let mut marks = BTreeMap::new();
        for name in self.functions.keys() {
            let mut stack = Vec::new();
            visit(self, name, &mut marks, &mut stack)?;
        }
        Ok(())
    }

    /// Functions reachable from `root` through calls, `root` included.
    pub fn reachable_from(&self, root: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut work = vec![root.to_string()];
        while let Some(f) = work.pop() {
            if !seen.insert(f.clone()) {
                continue;
            }
            if let Some(def) = self.functions.get(&f) {
                work.extend(callees(&def.body).into_iter().map(str::to_string));
            }
        }
        seen
    }
}

/// Every callee named anywhere in `body`, in preorder.
pub fn callees(body: &[BodyNode]) -> Vec<&str> {
    let mut out = Vec::new();
    fn walk<'a>(body: &'a [BodyNode], out: &mut Vec<&'a str>) {
        for n in body {
            match n {
                BodyNode::Call { callee } => out.push(callee),
                BodyNode::Loop(l) => walk(&l.body, out),
                BodyNode::Parallel { branches } => branches.iter().for_each(|b| walk(b, out)),
                _ => {}
            }
        }
    }
    walk(body, &mut out);
    out
}

/// True when the body holds only compute, dram and parallel nodes.
fn is_flat(body: &[BodyNode]) -> bool {
    body.iter().all(|n| match n {
        BodyNode::Compute { .. } | BodyNode::DramAccess { .. } => true,
        BodyNode::Parallel { branches } => branches.iter().all(|b| is_flat(b)),
        BodyNode::Call { .. } | BodyNode::Loop(_) => false,
    })
}

fn check_identifier(s: &str) -> Result<(), ValidationError> {
    let mut chars = s.chars();
    let ok = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(ValidationError::InvalidIdentifier(s.to_string()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"{
      "design": "toy",
      "clock_mhz": 100,
      "platform": {"name": "pynq-z2", "dram": {"fixed_latency_cycles": 20, "hw_latency_min": 20, "hw_latency_mean": 30, "bandwidth_gbps": 1.43}},
      "budget": {"lut": 53200, "ff": 106400, "bram": 140},
      "top": "main",
      "functions": {
        "main": {"body": [{"kind": "call", "callee": "compute"}]},
        "compute": {"pragma_realprobe": true, "body": [
          {"kind": "call", "callee": "mult"},
          {"kind": "call", "callee": "sum"}
        ]},
        "mult": {"body": [{"kind": "compute", "cycles": 40}]},
        "sum": {"body": [{"kind": "loop", "name": "L_while", "trip_count": 8, "pipelined": false,
                          "body": [{"kind": "compute", "cycles": 5}]}]}
      }
    }"#;

    fn with_functions(functions: &str) -> String {
        format!(
            r#"{{"design": "t", "clock_mhz": 100,
               "platform": {{"name": "p", "dram": {{"fixed_latency_cycles": 4, "hw_latency_min": 4, "hw_latency_mean": 6, "bandwidth_gbps": 1.43}}}},
               "budget": {{"lut": 1000, "ff": 1000, "bram": 10}},
               "top": "a", "functions": {functions}}}"#
        )
    }

    #[test]
    fn toy_parses() {
        let m = parse_manifest(TOY).unwrap();
        assert_eq!(m.top, "main");
        assert_eq!(m.functions.len(), 4);
        assert_eq!(m.pragma_function(), Some("compute"));
        // the profiled subtree is compute, mult and sum
        assert_eq!(m.reachable_from("compute").len(), 3);
    }

    #[test]
    fn empty_top_is_valid() {
        let m = parse_manifest(&with_functions(r#"{"a": {"body": []}}"#)).unwrap();
        assert_eq!(static_latency_rollup(&m)["a"], Some(0));
    }

    #[test]
    fn recursion_names_the_cycle() {
        let err = parse_manifest(&with_functions(
            r#"{"a": {"body": [{"kind": "call", "callee": "b"}]},
                "b": {"body": [{"kind": "call", "callee": "a"}]}}"#,
        ))
        .unwrap_err();
        match err {
            ManifestError::Validation(ValidationError::Recursion { cycle }) => {
                assert_eq!(cycle, vec!["a", "b", "a"])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_manifest("{\n  \"design\": ,\n}").unwrap_err();
        match err {
            ManifestError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = with_functions(r#"{"a": {"body": [{"kind": "compute", "cycles": 1, "bogus": 2}]}}"#);
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Syntax { .. })));
        let text = with_functions(
            r#"{"a": {"body": [{"kind": "loop", "name": "L", "trip_count": 1, "extra": true, "body": []}]}}"#,
        );
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Syntax { .. })));
        let text = with_functions(r#"{"a": {"colour": "red", "body": []}}"#);
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Syntax { .. })));
    }

    #[test]
    fn validation_errors() {
        let cases = [
            (r#"{"a": {"body": [{"kind": "call", "callee": "zz"}]}}"#, "undefined"),
            (
                r#"{"a": {"body": [{"kind": "loop", "name": "L", "trip_count": 1, "body": []},
                                   {"kind": "loop", "name": "L", "trip_count": 1, "body": []}]}}"#,
                "more than once",
            ),
            (
                r#"{"a": {"pragma_realprobe": true, "body": [{"kind": "call", "callee": "b"}]},
                    "b": {"pragma_realprobe": true, "body": []}}"#,
                "more than one",
            ),
            (
                r#"{"a": {"body": [{"kind": "loop", "name": "L", "trip_count": 1, "pipelined": true, "body": []}]}}"#,
                "ii",
            ),
            (
                r#"{"a": {"body": [{"kind": "loop", "name": "L", "trip_count": 2, "pipelined": true, "ii": 1,
                                    "body": [{"kind": "call", "callee": "b"}]}]}, "b": {"body": []}}"#,
                "may only contain",
            ),
            (r#"{"a": {"body": [{"kind": "parallel", "branches": []}]}}"#, "no branches"),
            (r#"{"a": {"inline": "always", "estimated_cycles": 3, "body": []}}"#, "inline=always"),
        ];
        for (functions, needle) in cases {
            let err = parse_manifest(&with_functions(functions)).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} lacks {needle}");
        }
    }

    #[test]
    fn render_round_trips_toy() {
        let m = parse_manifest(TOY).unwrap();
        let again = parse_manifest(&render_manifest(&m)).unwrap();
        assert_eq!(m, again);
    }
}
