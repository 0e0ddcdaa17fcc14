//! Seeded generator of random but valid design manifests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifest::{
    BodyNode, DesignManifest, FunctionDef, InlineHint, LoopNode, ResourceBudget,
};
use crate::simkernel::{DramModel, PlatformModel};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    /// Deepest allowed hierarchy level below the profiled root.
    pub max_tree_depth: usize,
    /// Upper bound on hierarchy nodes (function and loop instances).
    pub max_nodes: usize,
    pub max_trip: u64,
    pub max_items: usize,
    /// Probability that a loop is pipelined.
    pub pipelined: f64,
    /// Probability that a non-pipelined loop is marked data-dependent.
    pub data_dependent: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            max_tree_depth: 5,
            max_nodes: 64,
            max_trip: 5,
            max_items: 4,
            pipelined: 0.4,
            data_dependent: 0.1,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    p: CorpusParams,
    functions: BTreeMap<String, FunctionDef>,
    /// Hierarchy nodes and height contributed by one call of each function.
    shape: BTreeMap<String, (usize, usize)>,
    nodes_left: usize,
    next_id: usize,
}

impl Gen {
    fn fresh_name(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}{}", self.next_id)
    }

    fn compute(&mut self) -> BodyNode {
        let cycles = if self.rng.random_bool(0.05) {
            0
        } else {
            self.rng.random_range(1..=24)
        };
        BodyNode::Compute { cycles, name: None }
    }

    fn dram(&mut self) -> BodyNode {
        BodyNode::DramAccess {
            bursts: self.rng.random_range(1..=4),
            burst_bytes: [32, 64, 128][self.rng.random_range(0..3)],
            name: None,
        }
    }

    fn flat_body(&mut self) -> Vec<BodyNode> {
        let n = self.rng.random_range(1..=3);
        (0..n)
            .map(|_| match self.rng.random_range(0..6) {
                0..=2 => self.compute(),
                3 | 4 => self.dram(),
                _ => BodyNode::Parallel {
                    branches: vec![vec![self.compute()], vec![self.dram()]],
                },
            })
            .collect()
    }

    /// Body of something sitting at tree level `level`.
    fn body(&mut self, level: usize, loops: &mut usize) -> Vec<BodyNode> {
        let n = self.rng.random_range(1..=self.p.max_items);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let room = level < self.p.max_tree_depth && self.nodes_left > 0;
            let pick = self.rng.random_range(0..10);
            let node = match pick {
                0..=2 => self.compute(),
                3 | 4 => self.dram(),
                5 | 6 if room => self.call(level),
                7 | 8 if room => self.looped(level, loops),
                9 => {
                    let k = self.rng.random_range(2..=3);
                    let branches = (0..k)
                        .map(|_| {
                            if room && self.rng.random_bool(0.5) {
                                vec![self.call(level)]
                            } else {
                                vec![self.compute()]
                            }
                        })
                        .collect();
                    BodyNode::Parallel { branches }
                }
                _ => self.compute(),
            };
            out.push(node);
        }
        out
    }

    fn call(&mut self, level: usize) -> BodyNode {
        let height_room = self.p.max_tree_depth - level;
        let reusable: Vec<String> = self
            .shape
            .iter()
            .filter(|(_, (size, height))| *height <= height_room && *size <= self.nodes_left)
            .map(|(n, _)| n.clone())
            .collect();
        let callee = if !reusable.is_empty() && self.rng.random_bool(0.3) {
            let name = reusable[self.rng.random_range(0..reusable.len())].clone();
            self.nodes_left -= self.shape[&name].0;
            name
        } else {
            self.function(level + 1)
        };
        BodyNode::Call { callee }
    }

    fn looped(&mut self, level: usize, loops: &mut usize) -> BodyNode {
        self.nodes_left -= 1;
        *loops += 1;
        let name = format!("L{}", loops);
        let trip = if self.rng.random_bool(0.05) {
            0
        } else {
            self.rng.random_range(1..=self.p.max_trip)
        };
        if self.rng.random_bool(self.p.pipelined) {
            BodyNode::Loop(LoopNode {
                name,
                trip_count: trip * 4,
                pipelined: true,
                ii: Some(self.rng.random_range(1..=3)),
                data_dependent: false,
                body: self.flat_body(),
            })
        } else {
            BodyNode::Loop(LoopNode {
                name,
                trip_count: trip,
                pipelined: false,
                ii: None,
                data_dependent: self.rng.random_bool(self.p.data_dependent),
                body: self.body(level + 1, loops),
            })
        }
    }

    /// New function whose instance sits at `level`.
    fn function(&mut self, level: usize) -> String {
        self.nodes_left = self.nodes_left.saturating_sub(1);
        let name = self.fresh_name("f");
        let mut loops = 0;
        let body = self.body(level, &mut loops);
        let inline_hint = if self.rng.random_bool(0.7) {
            InlineHint::Never
        } else {
            InlineHint::Auto
        };
        let shape = self.measure(&body);
        self.shape.insert(name.clone(), (shape.0 + 1, shape.1));
        self.functions.insert(
            name.clone(),
            FunctionDef {
                pragma_realprobe: false,
                inline_hint,
                estimated_cycles: None,
                body,
            },
        );
        name
    }

    /// (nodes, height) below an owner with this body.
    fn measure(&self, body: &[BodyNode]) -> (usize, usize) {
        let mut nodes = 0;
        let mut height = 0;
        for n in body {
            match n {
                BodyNode::Call { callee } => {
                    let (s, h) = self.shape[callee];
                    nodes += s;
                    height = height.max(h + 1);
                }
                BodyNode::Loop(l) => {
                    let (s, h) = self.measure(&l.body);
                    nodes += s + 1;
                    height = height.max(h + 1);
                }
                BodyNode::Parallel { branches } => {
                    for b in branches {
                        let (s, h) = self.measure(b);
                        nodes += s;
                        height = height.max(h);
                    }
                }
                _ => {}
            }
        }
        (nodes, height)
    }
}

/// A valid manifest with a pragma function called from `main`.
pub fn generate_manifest(seed: u64, p: &CorpusParams) -> DesignManifest {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        p: p.clone(),
        functions: BTreeMap::new(),
        shape: BTreeMap::new(),
        nodes_left: p.max_nodes,
        next_id: 0,
    };
    let kernel = g.function(0);
    g.functions.get_mut(&kernel).unwrap().pragma_realprobe = true;
    g.functions.get_mut(&kernel).unwrap().inline_hint = InlineHint::Never;
    let mut main = vec![BodyNode::Compute {
        cycles: g.rng.random_range(0..=10),
        name: None,
    }];
    main.push(BodyNode::Call {
        callee: kernel.clone(),
    });
    if g.rng.random_bool(0.15) {
        main.push(BodyNode::Call { callee: kernel });
    }
    g.functions.insert(
        "main".into(),
        FunctionDef {
            body: main,
            ..Default::default()
        },
    );
    let fixed = g.rng.random_range(8..=30);
    let m = DesignManifest {
        name: format!("corpus_{seed}"),
        clock_mhz: 100.0,
        platform: PlatformModel {
            name: "pynq-z2".into(),
            dram: DramModel {
                fixed_latency_cycles: fixed,
                hw_latency_min: fixed,
                hw_latency_mean: fixed as f64 * 1.5,
                bandwidth_gbps: 1.43,
            },
        },
        budget: ResourceBudget {
            lut: 53200,
            ff: 106400,
            bram: 140,
        },
        origin_usage: Some(ResourceBudget {
            lut: g.rng.random_range(4000..20000),
            ff: g.rng.random_range(4000..30000),
            bram: g.rng.random_range(0..40),
        }),
        top: "main".into(),
        functions: g.functions,
    };
    debug_assert!(m.validate().is_ok());
    m
}

/// `n` manifests from consecutive seeds starting at `base_seed`.
pub fn corpus(n: usize, base_seed: u64) -> Vec<DesignManifest> {
    let p = CorpusParams::default();
    (0..n as u64).map(|i| generate_manifest(base_seed + i, &p)).collect()
}
