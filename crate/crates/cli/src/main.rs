mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use probe_forge_core::costmodel::{
    delta_r_util, estimate_allocation, fmax_model, worst_case_bandwidth, CostConstants,
    ResourceEstimate, EQUAL_WEIGHTS,
};
use probe_forge_core::dse::{
    enumerate_configs, evaluate_all, pareto_frontier, points_csv, scatter_json, DseOptions,
    StorageChoice,
};
use probe_forge_core::hierarchy::MappingTable;
use probe_forge_core::instrument::DumpRatio;
use probe_forge_core::manifest::{static_latency_rollup, InliningPolicy};
use probe_forge_core::report::{
    compare, csynth_totals, export_gantt, render_csv, render_table, ProfiledTrace,
};
use probe_forge_core::simkernel::{oracle_profile, reconstruct, run, run_profiled, SimMode};
use probe_forge_core::workspace::{artifact_bytes, ArtifactKind, ArtifactStore};

use pipeline::{fail, invalid, Exit, Options, EXIT_LOSSY};

#[derive(Parser, Debug)]
#[command(name = "probe-forge", version, about = "Profile hierarchical HLS-style designs with simulated in-fabric counters")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,

    /// Artifact cache directory.
    #[arg(long, global = true, env = "PROBE_FORGE_WORKSPACE", default_value = ".probe-forge")]
    workspace: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "hw")]
    mode: ModeArg,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "default", value_parser = ["default", "off-all", "off-top"])]
    policy: String,
    #[arg(long, global = true, value_enum, default_value = "reg")]
    storage: StorageArg,
    /// Queue depth at which hybrid storage switches to BRAM.
    #[arg(long, global = true, default_value_t = 8)]
    hybrid_threshold: u64,
    /// Percent of probe queues streamed through DRAM: 0, 25, 50 or 75.
    #[arg(long, global = true, default_value_t = 0, value_parser = parse_ratio)]
    dump_ratio: u32,
    /// Upper bound on any probe queue depth.
    #[arg(long, global = true)]
    max_depth: Option<u64>,
    /// JSON file overriding the cost model constants.
    #[arg(long, global = true)]
    constants: Option<PathBuf>,
    /// Source path of the subtree to probe; defaults to the pragma function.
    #[arg(long, global = true)]
    target: Option<String>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Keep only the K paths with the most cycles in Gantt output.
    #[arg(long, global = true)]
    top: Option<usize>,
    /// Output directory for run files.
    #[arg(long, global = true, default_value = "probe-forge-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, validate and inline a manifest.
    Check { manifest: PathBuf },
    /// Print the source-to-RTL mapping table.
    Map { manifest: PathBuf },
    /// Plan probes and size their queues.
    Instrument { manifest: PathBuf },
    /// Resource, frequency and bandwidth estimates of the profiler.
    Estimate { manifest: PathBuf },
    /// Run the whole flow and write reports.
    Profile { manifest: PathBuf },
    /// Explore storage and dump-ratio configurations.
    Dse {
        manifest: PathBuf,
        /// Add hybrid storage to the grid.
        #[arg(long)]
        hybrid: bool,
    },
    /// Render a finished run in another format.
    Report { run_dir: PathBuf },
    /// List cached artifacts and the reuse of the last run.
    Status,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Cosim,
    Hw,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StorageArg {
    Reg,
    Bram,
    Hybrid,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum FormatArg {
    Table,
    Csv,
    Json,
    Svg,
    TraceEvents,
}

fn parse_ratio(s: &str) -> Result<u32, String> {
    let p: u32 = s.parse().map_err(|_| format!("`{s}` is not a percentage"))?;
    DumpRatio::from_percent(p)
        .map(|_| p)
        .ok_or_else(|| "dump ratio must be 0, 25, 50 or 75".to_string())
}

impl Cli {
    fn mode(&self) -> SimMode {
        match self.mode {
            ModeArg::Cosim => SimMode::Cosim,
            ModeArg::Hw => SimMode::Hw,
        }
    }

    fn options(&self, manifest: &Path) -> Result<Options, Exit> {
        let constants = match &self.constants {
            None => CostConstants::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    invalid(anyhow::anyhow!("cannot read constants {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| invalid(anyhow::anyhow!("{}: {e}", p.display())))?
            }
        };
        let policy: InliningPolicy = self.policy.parse().map_err(|e: String| invalid(anyhow::anyhow!(e)))?;
        Ok(Options {
            manifest: manifest.to_path_buf(),
            workspace: self.workspace.clone(),
            policy,
            policy_name: self.policy.clone(),
            target: self.target.clone(),
            storage: match self.storage {
                StorageArg::Reg => StorageChoice::AllRegister,
                StorageArg::Bram => StorageChoice::AllBram,
                StorageArg::Hybrid => StorageChoice::Hybrid {
                    threshold: self.hybrid_threshold,
                },
            },
            dump_ratio: DumpRatio::from_percent(self.dump_ratio).expect("validated by clap"),
            max_depth: self.max_depth,
            constants,
        })
    }
}

fn write_file(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), Exit> {
    std::fs::create_dir_all(dir)
        .map_err(|e| invalid(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)
        .map_err(|e| invalid(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn json_bytes(v: &impl serde::Serialize) -> Vec<u8> {
    artifact_bytes(&serde_json::to_value(v).expect("serializable"))
}

fn check(cli: &Cli, manifest: &Path) -> Result<(), Exit> {
    let ex = pipeline::extract(&cli.options(manifest)?)?;
    let m = &ex.manifest;
    let root = ex.tree.root_node();
    let rollup = static_latency_rollup(m);
    let est = rollup
        .get(&root.function)
        .copied()
        .flatten()
        .map_or("unknown".to_string(), |c| c.to_string());
    println!("design       {}", m.name);
    println!("functions    {}", m.functions.len());
    println!("profiled     {}", root.function);
    println!("hierarchy    {} nodes, depth {}", ex.tree.len(), ex.tree.nodes.iter().map(|n| n.depth).max().unwrap_or(0));
    println!("est. cycles  {est}");
    Ok(())
}

fn map(cli: &Cli, manifest: &Path) -> Result<(), Exit> {
    let ex = pipeline::extract(&cli.options(manifest)?)?;
    match cli.format.unwrap_or(FormatArg::Table) {
        FormatArg::Csv => print!("{}", ex.mapping.to_csv()),
        FormatArg::Json => print!("{}", String::from_utf8(json_bytes(&ex.mapping)).unwrap()),
        _ => print!("{}", ex.mapping.render_table()),
    }
    Ok(())
}

fn instrument(cli: &Cli, manifest: &Path) -> Result<(), Exit> {
    let p = pipeline::prepare(&cli.options(manifest)?)?;
    if cli.format == Some(FormatArg::Json) {
        print!("{}", String::from_utf8(json_bytes(&p.alloc)).unwrap());
        return Ok(());
    }
    let w = p.alloc.probes.iter().map(|a| a.source_path.len()).max().unwrap_or(0).max(11);
    println!("{:<w$}  {:<28}  {:>6}  {:<8}  signals", "source_path", "rtl_name", "depth", "storage");
    for a in &p.alloc.probes {
        let probe = p.plan.find(a.node).expect("plan matches allocation");
        println!(
            "{:<w$}  {:<28}  {:>6}  {:<8}  {} / {}",
            a.source_path,
            a.rtl_name,
            a.depth,
            format!("{:?}", a.storage).to_lowercase(),
            probe.signal_pair.0,
            probe.signal_pair.1
        );
    }
    println!(
        "{} probes, {}-bit counters, {} entries total",
        p.alloc.probes.len(),
        p.alloc.counter_width,
        p.alloc.total_depth()
    );
    Ok(())
}

fn estimate(cli: &Cli, manifest: &Path) -> Result<(), Exit> {
    let opts = cli.options(manifest)?;
    let p = pipeline::prepare(&opts)?;
    let m = &p.ex.manifest;
    let est = estimate_allocation(&p.alloc, &opts.constants);
    let origin = m.origin();
    let r_util = delta_r_util(&est, &origin.into(), &m.budget, EQUAL_WEIGHTS)?;
    let total: ResourceEstimate = est.plus(&origin).into();
    let f_hz = m.clock_mhz * 1e6;
    let f_max = fmax_model(&total, &m.budget, f_hz);
    let depth = p.alloc.probes.iter().map(|a| a.depth).max().unwrap_or(0);
    let worst = worst_case_bandwidth(
        p.alloc.probes.len() as u64,
        1.0,
        depth,
        p.alloc.counter_width as u64,
        f_hz,
    );
    let doc = json!({
        "probes": p.alloc.probes.len(),
        "counter_width": p.alloc.counter_width,
        "resources": est,
        "origin": origin,
        "budget": m.budget,
        "r_util": r_util,
        "f_max_mhz": f_max / 1e6,
        "worst_case_dump_gbps": worst,
    });
    if cli.format == Some(FormatArg::Json) {
        print!("{}", String::from_utf8(artifact_bytes(&doc)).unwrap());
        return Ok(());
    }
    println!("probes            {} ({}-bit)", p.alloc.probes.len(), p.alloc.counter_width);
    println!("LUT / FF / BRAM   {} / {} / {}", est.lut, est.ff, est.bram);
    println!("r_util            {:.4}", r_util);
    println!("f_max             {:.2} MHz (target {:.2})", f_max / 1e6, m.clock_mhz);
    println!("worst-case dumps  {:.6} GB/s (every probe toggling each cycle)", worst);
    Ok(())
}

fn profile(cli: &Cli, manifest: &Path) -> Result<(), Exit> {
    let opts = cli.options(manifest)?;
    let p = pipeline::prepare(&opts)?;
    let (m, tree) = (&p.ex.manifest, &p.ex.tree);
    let mode = cli.mode();
    let r = run_profiled(m, tree, &p.plan, &p.alloc, mode, cli.seed).map_err(invalid)?;
    let out = &cli.out;
    let alloc_key = &p.ex.keys[4];
    let trace_key = pipeline::store_derived(
        &p.ex.store,
        ArtifactKind::Trace,
        json!({"allocation": alloc_key.hash, "mode": mode, "seed": cli.seed}),
        &json!({
            "oracle": r.oracle.to_json(tree),
            "total_cycles": r.oracle.total_cycles,
            "log": r.log,
        }),
    )?;
    write_file(out, "timestamps.csv", r.log.to_csv())?;
    write_file(out, "mapping.csv", p.ex.mapping.to_csv())?;
    write_file(out, "oracle.json", artifact_bytes(&r.oracle.to_json(tree)))?;
    let summary = json!({
        "design": m.name,
        "mode": mode,
        "seed": cli.seed,
        "wall_cycles": r.wall_cycles,
        "dumps": r.log.dumps.len(),
        "dram_traffic_bytes": r.dram_traffic,
        "lossy": r.log.lossy,
        "lost_entries": r.log.lost.len(),
        "artifacts": p.ex.keys.iter().chain([&trace_key]).map(|k| k.to_string()).collect::<Vec<_>>(),
    });
    write_file(out, "run.json", artifact_bytes(&summary))?;
    if r.log.lossy {
        let names: Vec<&str> = r
            .log
            .overflowed
            .iter()
            .map(|n| tree.node(*n).source_path.as_str())
            .collect();
        return Err(fail(
            EXIT_LOSSY,
            format!(
                "{} timestamps lost to queue overflow in {}; raise --max-depth or lower --dump-ratio",
                r.log.lost.len(),
                names.join(", ")
            ),
        ));
    }
    let rec = reconstruct(&r.log, tree, &p.alloc).map_err(invalid)?.with_run(mode, cli.seed);
    pipeline::store_derived(
        &p.ex.store,
        ArtifactKind::Report,
        json!({"trace": trace_key.hash}),
        &rec,
    )?;

    let restrict = |t: ProfiledTrace| ProfiledTrace {
        paths: t
            .paths
            .into_iter()
            .filter(|x| rec.path(&x.source_path).is_some())
            .collect(),
        ..t
    };
    let other = |mode| restrict(oracle_profile(&run(m, tree, mode, cli.seed), tree));
    let (cosim, hw) = match mode {
        SimMode::Cosim => (rec.clone(), other(SimMode::Hw)),
        SimMode::Hw => (other(SimMode::Cosim), rec.clone()),
    };
    let cmp = compare(&csynth_totals(tree), &cosim, &hw);
    let (table, table_json) = render_table(&rec, &p.ex.mapping);
    let gantt = export_gantt(&rec, cli.top);
    write_file(out, "profile.json", json_bytes(&rec))?;
    write_file(out, "report.txt", &table)?;
    write_file(out, "report.json", artifact_bytes(&table_json))?;
    write_file(out, "report.csv", render_csv(&rec))?;
    write_file(out, "gantt.svg", &gantt.svg)?;
    write_file(out, "trace_events.json", artifact_bytes(&gantt.trace_events))?;
    write_file(out, "compare.txt", cmp.render_table())?;
    write_file(out, "compare.json", json_bytes(&cmp))?;
    print!("{table}");
    println!(
        "{} cycles ({} mode, seed {}), {} dumps, {} bytes to DRAM; files in {}",
        r.wall_cycles,
        mode.as_str(),
        cli.seed,
        r.log.dumps.len(),
        r.dram_traffic,
        out.display()
    );
    Ok(())
}

fn dse(cli: &Cli, manifest: &Path, hybrid: bool) -> Result<(), Exit> {
    let opts = cli.options(manifest)?;
    let ex = pipeline::extract(&opts)?;
    let plan = pipeline::probe_plan(&ex, opts.target.as_deref())?;
    let mut grid = DseOptions::default();
    if hybrid {
        grid = grid.with_hybrid(cli.hybrid_threshold);
    }
    let configs = enumerate_configs(&grid);
    let points = evaluate_all(&configs, &ex.manifest, &ex.tree, &plan, cli.seed, &opts.constants)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            probe_forge_core::dse::DseError::Cost(c) => Exit::from(c),
            other => invalid(other),
        })?;
    let front = pareto_frontier(&points);
    write_file(&cli.out, "dse_points.csv", points_csv(&points, &front))?;
    write_file(&cli.out, "dse_scatter.json", artifact_bytes(&scatter_json(&points, &front)))?;
    write_file(&cli.out, "dse_points.json", json_bytes(&points))?;
    let unit = if points.iter().any(|p| p.b_dram_absolute) { "GB/s" } else { "ratio" };
    let mut s = String::new();
    let _ = writeln!(s, "{:<10}  {:>9}  {:>12}  {:>9}  {:>9}  frontier", "config", "r_util", format!("b_dram({unit})"), "f_max", "latency");
    for p in &points {
        let on = front.iter().any(|f| f.id == p.id);
        let _ = writeln!(
            s,
            "{:<10}  {:>9.5}  {:>12.3e}  {:>9.2}  {:>+8.3}%  {}",
            p.id,
            p.r_util,
            p.b_dram,
            p.f_max / 1e6,
            p.latency_overhead * 100.0,
            if on { "*" } else { "" }
        );
    }
    print!("{s}");
    Ok(())
}

fn report(cli: &Cli, dir: &Path) -> Result<(), Exit> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p)
            .map_err(|e| invalid(anyhow::anyhow!("cannot read {}: {e}", p.display())))
    };
    let trace: ProfiledTrace = serde_json::from_str(&read("profile.json")?)
        .map_err(|e| invalid(anyhow::anyhow!("{}: {e}", dir.join("profile.json").display())))?;
    let mapping = MappingTable::from_csv(&read("mapping.csv")?).map_err(invalid)?;
    match cli.format.unwrap_or(FormatArg::Table) {
        FormatArg::Table => print!("{}", render_table(&trace, &mapping).0),
        FormatArg::Csv => print!("{}", render_csv(&trace)),
        FormatArg::Json => print!("{}", String::from_utf8(artifact_bytes(&render_table(&trace, &mapping).1)).unwrap()),
        FormatArg::Svg => print!("{}", export_gantt(&trace, cli.top).svg),
        FormatArg::TraceEvents => print!(
            "{}",
            String::from_utf8(artifact_bytes(&export_gantt(&trace, cli.top).trace_events)).unwrap()
        ),
    }
    Ok(())
}

fn status(cli: &Cli) -> Result<(), Exit> {
    let store = ArtifactStore::open(&cli.workspace).map_err(invalid)?;
    let keys = store.list().map_err(invalid)?;
    println!("workspace {}", store.root().display());
    for kind in ArtifactKind::ALL {
        let n = keys.iter().filter(|k| k.kind == kind).count();
        println!("  {:<11} {n}", kind.as_str());
    }
    match store.last_run().map_err(invalid)? {
        None => println!("no run recorded"),
        Some(r) => {
            println!("last run");
            for k in r.keys.values() {
                println!("  {k}");
            }
            match r.reuse {
                None => println!("reuse: first run in this workspace"),
                Some(plan) => {
                    let reused: Vec<&str> = plan.reused.iter().map(|k| k.kind.as_str()).collect();
                    let rebuilt: Vec<&str> = plan.rebuilt.iter().map(|k| k.as_str()).collect();
                    println!(
                        "reuse: {:.0}% (reused: {}; rebuilt: {})",
                        plan.reuse_fraction * 100.0,
                        if reused.is_empty() { "-".into() } else { reused.join(", ") },
                        if rebuilt.is_empty() { "-".into() } else { rebuilt.join(", ") }
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Check { manifest } => check(&cli, manifest),
        Command::Map { manifest } => map(&cli, manifest),
        Command::Instrument { manifest } => instrument(&cli, manifest),
        Command::Estimate { manifest } => estimate(&cli, manifest),
        Command::Profile { manifest } => profile(&cli, manifest),
        Command::Dse { manifest, hybrid } => dse(&cli, manifest, *hybrid),
        Command::Report { run_dir } => report(&cli, run_dir),
        Command::Status => status(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
