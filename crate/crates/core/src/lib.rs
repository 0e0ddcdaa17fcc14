//! Non-intrusive profiling instrumentation for hierarchical HLS-style designs.
//!
//! The crate models the whole flow of an in-fabric profiler: a declarative
//! design manifest stands in for the synthesized kernel, a module hierarchy and
//! source-to-RTL mapping are extracted from it, performance-counter probes are
//! planned and sized, and a cycle-accurate discrete-event simulator executes the
//! design while a model of the profiler IP samples a global cycle counter on
//! every control-signal toggle. The simulator also records a ground-truth
//! activity trace so reconstructed profiles can be checked cycle for cycle.
//!
//! Around that core sit the analytical resource and bandwidth models, a
//! design-space exploration over probe storage configurations, a
//! content-addressed artifact store for incremental rebuilds and report
//! renderers (tables, rankings, Gantt charts).

pub mod corpus;
pub mod costmodel;
pub mod dse;
pub mod hierarchy;
pub mod instrument;
pub mod manifest;
pub mod profiler;
pub mod report;
pub mod simkernel;
pub mod workspace;

pub use hierarchy::{build_hierarchy, build_mapping, HierarchyTree, MappingTable, NodeId};
pub use manifest::{
    apply_inlining, parse_manifest, render_manifest, static_latency_rollup, DesignManifest,
    InliningPolicy,
};
pub use simkernel::{reconstruct, run, run_profiled, SimMode};
