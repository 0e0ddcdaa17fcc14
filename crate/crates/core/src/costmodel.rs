//! Analytical resource, bandwidth and frequency models, plus the loop that
//! shrinks a counter allocation until it fits the board.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instrument::{CounterAllocation, Storage};
use crate::manifest::{DesignManifest, ResourceBudget};
use crate::simkernel::ExecutionTrace;

/// Bits in one 18 Kbit block RAM.
pub const BRAM_BLOCK_BITS: u64 = 18 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeVariant {
    #[default]
    Monolithic,
    /// Tree of 8-way multiplexers.
    Staged,
}

/// Unit costs of the profiler IP. The defaults are configuration, not
/// measurements of any device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConstants {
    pub c_axi: u64,
    pub c_pc: u64,
    pub c_decode: u64,
    pub c_l1: u64,
    pub c_l2: u64,
    pub c_f1: u64,
    pub c_f2: u64,
    pub decode_variant: DecodeVariant,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            c_axi: 400,
            c_pc: 80,
            c_decode: 16,
            c_l1: 12,
            c_l2: 3,
            c_f1: 20,
            c_f2: 8,
            decode_variant: DecodeVariant::Monolithic,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub lut: u64,
    pub ff: u64,
    pub bram: u64,
}

impl ResourceEstimate {
    pub fn fits(&self, avail: &ResourceBudget) -> bool {
        self.lut <= avail.lut && self.ff <= avail.ff && self.bram <= avail.bram
    }

    pub fn plus(&self, o: &ResourceBudget) -> ResourceBudget {
        ResourceBudget {
            lut: self.lut + o.lut,
            ff: self.ff + o.ff,
            bram: self.bram + o.bram,
        }
    }
}

impl From<ResourceBudget> for ResourceEstimate {
    fn from(b: ResourceBudget) -> Self {
        ResourceEstimate {
            lut: b.lut,
            ff: b.ff,
            bram: b.bram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("resource weights must be non-negative and sum to 1, got {0:?}")]
    InvalidWeights([f64; 3]),
    #[error("{0} has neither an original usage nor a budget to normalize against")]
    DegenerateBaseline(&'static str),
    #[error(
        "even a single minimal probe exceeds the resources left on the board \
         (needs {} LUT, {} FF, {} BRAM; {} LUT, {} FF, {} BRAM available)",
        need.lut, need.ff, need.bram, available.lut, available.ff, available.bram
    )]
    Unfittable {
        need: ResourceEstimate,
        available: ResourceBudget,
    },
}

/// `ceil(log2 n)`, zero for `n <= 1`.
pub fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// `ceil(log8 n)`, zero for `n <= 1`.
pub fn ceil_log8(n: u64) -> u64 {
    let mut levels = 0;
    let mut reach = 1u64;
    while reach < n {
        reach = reach.saturating_mul(8);
        levels += 1;
    }
    levels
}

pub fn decode_cost(n: u64, k: &CostConstants) -> u64 {
    let levels = match k.decode_variant {
        DecodeVariant::Monolithic => ceil_log2(n),
        DecodeVariant::Staged => ceil_log8(n),
    };
    k.c_decode * levels
}

/// LUT/FF/BRAM cost of `depths.len()` counters with the given storage tags.
pub fn estimate_resources(
    depths: &[u64],
    storage: &[Storage],
    counter_width: u32,
    k: &CostConstants,
) -> ResourceEstimate {
    assert_eq!(depths.len(), storage.len(), "one storage tag per probe");
    let fixed = k.c_axi + k.c_pc + decode_cost(depths.len() as u64, k);
    let mut lut = fixed;
    let mut ff = fixed;
    let mut bram_bits = 0u64;
    for (&d, &s) in depths.iter().zip(storage) {
        lut += k.c_l1;
        ff += k.c_f1;
        match s {
            Storage::Register => {
                lut += k.c_l2 * d;
                ff += k.c_f2 * d;
            }
            Storage::Bram => bram_bits += d * counter_width as u64,
        }
    }
    ResourceEstimate {
        lut,
        ff,
        bram: bram_bits.div_ceil(BRAM_BLOCK_BITS),
    }
}

pub fn estimate_allocation(a: &CounterAllocation, k: &CostConstants) -> ResourceEstimate {
    let depths: Vec<u64> = a.probes.iter().map(|p| p.depth).collect();
    let storage: Vec<Storage> = a.probes.iter().map(|p| p.storage).collect();
    estimate_resources(&depths, &storage, a.counter_width, k)
}

/// Weighted overhead relative to the original design. A resource the
/// original design does not use is normalized by the board budget instead.
pub fn delta_r_util(
    est: &ResourceEstimate,
    origin: &ResourceEstimate,
    budget: &ResourceBudget,
    w: [f64; 3],
) -> Result<f64, CostError> {
    if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CostError::InvalidWeights(w));
    }
    let terms = [
        ("lut", est.lut, origin.lut, budget.lut),
        ("ff", est.ff, origin.ff, budget.ff),
        ("bram", est.bram, origin.bram, budget.bram),
    ];
    let mut total = 0.0;
    for ((name, used, orig, board), wi) in terms.into_iter().zip(w) {
        if wi == 0.0 {
            continue;
        }
        let base = if orig > 0 { orig } else { board };
        if base == 0 {
            return Err(CostError::DegenerateBaseline(name));
        }
        total += wi * used as f64 / base as f64;
    }
    Ok(total)
}

pub const EQUAL_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// GB/s for `bytes` moved over `t_total` cycles of `t_cycle` seconds.
pub fn profiling_bandwidth(s_dram: u64, t_total: u64, t_cycle: f64) -> f64 {
    if t_total == 0 {
        return 0.0;
    }
    s_dram as f64 / (t_total as f64 * t_cycle) / 1e9
}

/// Kernel DRAM bandwidth of an uninstrumented run.
pub fn baseline_bandwidth(m: &DesignManifest, trace: &ExecutionTrace) -> f64 {
    profiling_bandwidth(trace.kernel_bytes(), trace.total_cycles, m.cycle_seconds())
}

/// Upper bound on dump bandwidth when each of `n` probes toggles every `k`
/// cycles: `f / depth` dumps per second per unit toggle rate, each of
/// `depth * entry_bits / 8` bytes. Expressed in KiB-based units
/// (1 GB = 10^6 KiB), so one 64-entry, 64-bit dump is 0.5 KiB.
pub fn worst_case_bandwidth(n: u64, k: f64, depth: u64, entry_bits: u64, f_hz: f64) -> f64 {
    if !k.is_finite() || k <= 0.0 || depth == 0 {
        return 0.0;
    }
    let dump_kib = (depth * entry_bits) as f64 / 8.0 / 1024.0;
    (f_hz / depth as f64) * (1.0 / k) * n as f64 * dump_kib / 1e6
}

/// Stand-in timing model: frequency degrades linearly once the most utilized
/// resource passes a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmaxModel {
    pub beta: f64,
    pub threshold: f64,
}

impl Default for FmaxModel {
    fn default() -> Self {
        FmaxModel {
            beta: 0.5,
            threshold: 0.7,
        }
    }
}

/// Peak utilization over the resources the board provides.
pub fn utilization(total: &ResourceEstimate, budget: &ResourceBudget) -> f64 {
    [
        (total.lut, budget.lut),
        (total.ff, budget.ff),
        (total.bram, budget.bram),
    ]
    .into_iter()
    .map(|(u, b)| match (u, b) {
        (0, _) => 0.0,
        (_, 0) => f64::INFINITY,
        (u, b) => u as f64 / b as f64,
    })
    .fold(0.0, f64::max)
}

impl FmaxModel {
    pub fn f_max(&self, total: &ResourceEstimate, budget: &ResourceBudget, f_target: f64) -> f64 {
        let u = utilization(total, budget);
        let f = f_target * (1.0 - self.beta * (u - self.threshold).max(0.0));
        // keep the result positive on absurd overcommitment
        f.max(f_target * 1e-3)
    }
}

pub fn fmax_model(total: &ResourceEstimate, budget: &ResourceBudget, f_target: f64) -> f64 {
    FmaxModel::default().f_max(total, budget, f_target)
}

fn available(budget: &ResourceBudget, origin: &ResourceBudget) -> ResourceBudget {
    ResourceBudget {
        lut: budget.lut.saturating_sub(origin.lut),
        ff: budget.ff.saturating_sub(origin.ff),
        bram: budget.bram.saturating_sub(origin.bram),
    }
}

/// Shrinks `demand` until its estimate fits `budget - origin` and it has at
/// most `module_cap` probes.
///
/// Steps, each only when the previous one did not suffice: move the deepest
/// register queues to BRAM while BRAM lasts; drop probes deepest in the tree
/// first (the shallowest probe and its children stay); lower the depth cap
/// toward 2; drop the children; drop everything but the first shallowest
/// probe. Depths never grow.
pub fn adapt_allocation(
    demand: &CounterAllocation,
    budget: &ResourceBudget,
    origin: &ResourceBudget,
    k: &CostConstants,
) -> Result<CounterAllocation, CostError> {
    let avail = available(budget, origin);
    let fits = |a: &CounterAllocation| {
        a.probes.len() <= a.module_cap.max(1) && estimate_allocation(a, k).fits(&avail)
    };
    if fits(demand) {
        return Ok(demand.clone());
    }
    let mut a = demand.clone();

    // BRAM retagging, deepest register queue first
    while !fits(&a) {
        let Some(i) = a
            .probes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.storage == Storage::Register)
            .max_by_key(|(i, p)| (p.depth, std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
        else {
            break;
        };
        a.probes[i].storage = Storage::Bram;
        if estimate_allocation(&a, k).bram > avail.bram {
            a.probes[i].storage = Storage::Register;
            break;
        }
    }

    let drop_deepest = |a: &mut CounterAllocation, min_tree_depth: usize| -> bool {
        let victim = a
            .probes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.tree_depth >= min_tree_depth)
            .max_by_key(|(i, p)| (p.tree_depth, *i))
            .map(|(i, _)| i);
        match victim {
            Some(i) => {
                a.probes.remove(i);
                true
            }
            None => false,
        }
    };

    let base = a.probes.iter().map(|p| p.tree_depth).min().unwrap_or(0);
    while !fits(&a) && drop_deepest(&mut a, base + 2) {}

    let mut cap = a.probes.iter().map(|p| p.depth).max().unwrap_or(2);
    while !fits(&a) && cap > 2 {
        cap -= 1;
        for p in &mut a.probes {
            p.depth = p.depth.min(cap);
        }
    }

    while !fits(&a) && drop_deepest(&mut a, base + 1) {}
    while !fits(&a) && a.probes.len() > 1 && drop_deepest(&mut a, 0) {}

    if fits(&a) {
        Ok(a)
    } else {
        Err(CostError::Unfittable {
            need: estimate_allocation(&a, k),
            available: avail,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::NodeId;
    use crate::instrument::{DumpRatio, ProbeAllocation, ProbeKind};
    use proptest::prelude::*;

    fn regs(n: usize) -> Vec<Storage> {
        vec![Storage::Register; n]
    }

    #[test]
    fn lut_examples() {
        let k = CostConstants::default();
        assert_eq!(estimate_resources(&[4; 10], &regs(10), 32, &k).lut, 784);
        assert_eq!(estimate_resources(&[2], &regs(1), 32, &k).lut, 498);
        let staged = CostConstants {
            decode_variant: DecodeVariant::Staged,
            ..k.clone()
        };
        assert_eq!(estimate_resources(&[4; 10], &regs(10), 32, &staged).lut, 752);
        let empty = estimate_resources(&[], &[], 32, &k);
        assert_eq!((empty.lut, empty.ff, empty.bram), (480, 480, 0));
    }

    #[test]
    fn bram_tagged_probes() {
        let k = CostConstants::default();
        let e = estimate_resources(&[64, 64], &[Storage::Bram, Storage::Register], 64, &k);
        // 64 * 64 bits fit one block
        assert_eq!(e.bram, 1);
        assert_eq!(e.lut, 400 + 80 + 16 + 12 + (12 + 3 * 64));
        let e = estimate_resources(&[300], &[Storage::Bram], 64, &k);
        assert_eq!(e.bram, 2);
    }

    #[test]
    fn log_helpers() {
        let cases = [(0, 0, 0), (1, 0, 0), (2, 1, 1), (8, 3, 1), (9, 4, 2), (64, 6, 2), (65, 7, 3)];
        for (n, l2, l8) in cases {
            assert_eq!((ceil_log2(n), ceil_log8(n)), (l2, l8), "n={n}");
        }
    }

    #[test]
    fn r_util_examples() {
        let est = ResourceEstimate { lut: 784, ff: 1200, bram: 0 };
        let origin = ResourceEstimate { lut: 7840, ff: 6000, bram: 10 };
        let budget = ResourceBudget { lut: 53200, ff: 106400, bram: 140 };
        let r = delta_r_util(&est, &origin, &budget, EQUAL_WEIGHTS).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        assert_eq!(
            delta_r_util(&ResourceEstimate::default(), &origin, &budget, EQUAL_WEIGHTS).unwrap(),
            0.0
        );
        let est = ResourceEstimate { lut: 0, ff: 0, bram: 2 };
        let origin = ResourceEstimate { lut: 1, ff: 1, bram: 0 };
        let r = delta_r_util(&est, &origin, &budget, [0.0, 0.0, 1.0]).unwrap();
        assert!((r - 2.0 / 140.0).abs() < 1e-12);
        let none = ResourceBudget { lut: 1, ff: 1, bram: 0 };
        assert_eq!(
            delta_r_util(&est, &origin, &none, EQUAL_WEIGHTS),
            Err(CostError::DegenerateBaseline("bram"))
        );
        assert!(matches!(
            delta_r_util(&est, &origin, &budget, [0.5, 0.5, 0.5]),
            Err(CostError::InvalidWeights(_))
        ));
    }

    #[test]
    fn bandwidth_examples() {
        // 512 bursts of 64 B over 100000 cycles at 100 MHz
        let b = profiling_bandwidth(512 * 64, 100_000, 1e-8);
        assert!((b - 0.032768).abs() < 1e-12);
        assert!((profiling_bandwidth(32, 80, 1e-8) - 0.04).abs() < 1e-12);
        assert_eq!(profiling_bandwidth(0, 80, 1e-8), 0.0);
        // 100 dumps of 512 B in one second
        assert!((profiling_bandwidth(51_200, 100_000_000, 1e-8) - 51.2e-6).abs() < 1e-15);
    }

    #[test]
    fn worst_case_examples() {
        let one = worst_case_bandwidth(1, 1.0, 64, 64, 100e6);
        assert!((one - 0.78125).abs() < 1e-12);
        let ten = worst_case_bandwidth(10, 1000.0, 64, 64, 100e6);
        assert!((ten - 0.0078125).abs() < 1e-12);
        assert_eq!(worst_case_bandwidth(10, f64::INFINITY, 64, 64, 100e6), 0.0);
    }

    #[test]
    fn fmax_examples() {
        let budget = ResourceBudget { lut: 100, ff: 100, bram: 100 };
        let f = |u: u64| fmax_model(&ResourceEstimate { lut: u, ff: 0, bram: 0 }, &budget, 100.0);
        assert_eq!(f(50), 100.0);
        assert!((f(90) - 90.0).abs() < 1e-9);
        assert!((f(100) - 85.0).abs() < 1e-9);
        assert!(f(10_000) > 0.0);
    }

    fn demand(depths: &[(u64, usize)], cap: usize) -> CounterAllocation {
        CounterAllocation {
            probes: depths
                .iter()
                .enumerate()
                .map(|(i, &(d, td))| ProbeAllocation {
                    node: NodeId(i),
                    rtl_name: format!("p{i}"),
                    source_path: format!("p{i}"),
                    tree_depth: td,
                    kind: ProbeKind::Function,
                    depth: d,
                    storage: Storage::Register,
                    streamed: false,
                })
                .collect(),
            counter_width: 32,
            truncate_loop_iters: 4,
            module_cap: cap,
            dump_ratio: DumpRatio::default(),
        }
    }

    #[test]
    fn adapt_noop_when_fitting() {
        let d = demand(&[(4, 0), (4, 1)], 50);
        let budget = ResourceBudget { lut: 53200, ff: 106400, bram: 140 };
        assert_eq!(
            adapt_allocation(&d, &budget, &ResourceBudget::default(), &CostConstants::default()).unwrap(),
            d
        );
    }

    #[test]
    fn adapt_retags_to_bram_first() {
        let d = demand(&[(4, 0), (64, 1), (8, 2)], 50);
        let k = CostConstants::default();
        let est = estimate_allocation(&d, &k);
        let budget = ResourceBudget {
            lut: est.lut,
            ff: est.ff - 100,
            bram: 4,
        };
        let out = adapt_allocation(&d, &budget, &ResourceBudget::default(), &k).unwrap();
        assert_eq!(out.probes.len(), 3);
        assert_eq!(out.probes[1].storage, Storage::Bram);
        assert_eq!(out.probes[0].storage, Storage::Register);
        assert!(estimate_allocation(&out, &k).fits(&budget));
    }

    #[test]
    fn adapt_respects_cap_and_keeps_root() {
        let mut spec = vec![(4, 0)];
        spec.extend((0..222).map(|i| (4, 1 + i % 4)));
        let d = demand(&spec, 50);
        let budget = ResourceBudget { lut: 53200, ff: 106400, bram: 140 };
        let out =
            adapt_allocation(&d, &budget, &ResourceBudget::default(), &CostConstants::default()).unwrap();
        assert!(out.probes.len() <= 50);
        assert_eq!(out.probes[0].node, NodeId(0));
    }

    #[test]
    fn adapt_unfittable() {
        let d = demand(&[(4, 0), (4, 1)], 50);
        let budget = ResourceBudget { lut: 1, ff: 1, bram: 0 };
        assert!(matches!(
            adapt_allocation(&d, &budget, &ResourceBudget::default(), &CostConstants::default()),
            Err(CostError::Unfittable { .. })
        ));
    }

    proptest! {
        #[test]
        fn depth_slope_is_exact(depths in prop::collection::vec(2u64..200, 1..40), i in any::<prop::sample::Index>()) {
            let k = CostConstants::default();
            let n = depths.len();
            let a = estimate_resources(&depths, &regs(n), 32, &k);
            let mut more = depths.clone();
            more[i.index(n)] += 1;
            let b = estimate_resources(&more, &regs(n), 32, &k);
            prop_assert_eq!(b.lut - a.lut, k.c_l2);
            prop_assert_eq!(b.ff - a.ff, k.c_f2);
        }

        #[test]
        fn decode_steps_at_powers_of_two(e in 1u32..10, a in 0u64..1024, b in 0u64..1024) {
            let k = CostConstants::default();
            let lo = 1u64 << e;
            let span = lo;
            let (x, y) = (lo + 1 + a % span, lo + 1 + b % span);
            prop_assert_eq!(decode_cost(x, &k), decode_cost(y, &k));
        }

        #[test]
        fn staged_never_exceeds_monolithic(n in 1u64..=1024) {
            let mono = CostConstants::default();
            let staged = CostConstants { decode_variant: DecodeVariant::Staged, ..mono.clone() };
            prop_assert!(decode_cost(n, &staged) <= decode_cost(n, &mono));
        }

        #[test]
        fn fmax_non_increasing(l in 0u64..200, f in 0u64..200, b in 0u64..200, which in 0usize..3, extra in 1u64..50) {
            let budget = ResourceBudget { lut: 100, ff: 100, bram: 100 };
            let base = ResourceEstimate { lut: l, ff: f, bram: b };
            let mut more = base;
            match which { 0 => more.lut += extra, 1 => more.ff += extra, _ => more.bram += extra }
            prop_assert!(fmax_model(&more, &budget, 100.0) <= fmax_model(&base, &budget, 100.0));
            prop_assert!(fmax_model(&more, &budget, 100.0) > 0.0);
        }

        #[test]
        fn adapt_fits_or_errors(
            spec in prop::collection::vec((2u64..64, 0usize..5), 1..80),
            lut in 0u64..6000, ff in 0u64..8000, bram in 0u64..4, cap in 1usize..60,
        ) {
            let mut spec = spec;
            spec[0].1 = 0;
            let d = demand(&spec, cap);
            let budget = ResourceBudget { lut, ff, bram };
            let k = CostConstants::default();
            match adapt_allocation(&d, &budget, &ResourceBudget::default(), &k) {
                Ok(out) => {
                    prop_assert!(estimate_allocation(&out, &k).fits(&budget));
                    prop_assert!(out.probes.len() <= cap);
                    for p in &out.probes {
                        let before = d.find(p.node).unwrap();
                        prop_assert!(p.depth <= before.depth);
                    }
                }
                Err(CostError::Unfittable { .. }) => {
                    let minimal = estimate_resources(&[2], &[Storage::Register], 32, &k);
                    let minimal_b = estimate_resources(&[2], &[Storage::Bram], 32, &k);
                    prop_assert!(!minimal.fits(&budget) && !minimal_b.fits(&budget));
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
