//! Batch command-line front end: scheduling, simulation, access analysis,
//! and dataflow comparison. Exit codes: 0 success, 1 verification failure,
//! 2 input error. Errors are emitted as JSON on stderr. All randomness
//! flows from `--seed`; identical configs produce byte-identical outputs.

use alcim_core::alsim::{self, SimOptions};
use alcim_core::energy::{compare_dataflows, EnergyTable};
use alcim_core::hnn::{Supermask, WeightDistribution, WeightGenConfig};
use alcim_core::lpt::{
    self, count_fused_accesses, max_activation, plan_lpt_opts, FootprintMode, PlannerOptions,
    TcPlacement,
};
use alcim_core::netspec::{builtin_network, CoreGeometry, NetworkSpec, QTensor};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "alcim", version, about = "Hidden-network CIM accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan the tiling schedule and report memory footprints.
    Schedule(ScheduleArgs),
    /// Run the architectural simulator and check it against the golden model.
    Simulate(SimulateArgs),
    /// Emit fused-layer activation-access curves (with/without block conv).
    Analyze(AnalyzeArgs),
    /// Compare WS / AS / AL dataflows and the single-AMEM baseline.
    Compare(CompareArgs),
    /// Generate and save a supermask file.
    Mask(MaskArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Builtin name (resnet18, resnet50, toy_vgg) or a descriptor JSON path.
    #[arg(long)]
    network: Option<String>,
    /// Input image side in pixels.
    #[arg(long)]
    input_side: Option<usize>,
    /// JSON config file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Core geometry override (JSON file with the geometry fields).
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Output directory (env ALCIM_OUT_DIR overrides).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// TC placement policy: after-add (default) or after-stride.
    #[arg(long)]
    tc_placement: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Supermask ones fraction in [0, 1].
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    weight_bits: Option<u32>,
    /// Load the supermask from a file instead of sampling it.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    /// Input tensor file (raw + JSON sidecar); defaults to a seed-derived
    /// pseudo-random image.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Counters and roles only; skips values and the golden check.
    #[arg(long)]
    count_only: bool,
    /// Write a line-delimited JSON event trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fused CONV3x3 depth or inclusive range, e.g. `10` or `1..12`.
    #[arg(long)]
    fused_depth: Option<String>,
    /// Output tile side.
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Energy table file (JSON `[{"capacity":..,"energy":..}]` or CSV).
    #[arg(long)]
    energy_table: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Output mask file path.
    #[arg(long)]
    mask_file: Option<PathBuf>,
}

/// Optional file-borne defaults; explicit flags win.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    network: Option<String>,
    input_side: Option<usize>,
    seed: Option<u64>,
    sparsity: Option<f64>,
    weight_bits: Option<u32>,
    mask_file: Option<PathBuf>,
    input: Option<PathBuf>,
    energy_table: Option<PathBuf>,
    geometry: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    tc_placement: Option<String>,
    fused_depth: Option<String>,
    tile: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = classify(&e);
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": kind, "message": format!("{e:#}")}})
            );
            2
        }
    };
    std::process::exit(code);
}

fn classify(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<alcim_core::Error>() {
        Some(alcim_core::Error::Infeasible { .. }) => "infeasible",
        Some(alcim_core::Error::UnknownNetwork(_)) => "unknown_network",
        Some(alcim_core::Error::MalformedFile(_)) => "malformed_file",
        Some(alcim_core::Error::MaskMismatch(_)) => "mask_mismatch",
        Some(alcim_core::Error::ShapeMismatch { .. }) => "shape_mismatch",
        Some(_) => "invalid_input",
        None => "invalid_input",
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.cmd {
        Cmd::Schedule(a) => cmd_schedule(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Mask(a) => cmd_mask(a),
    }
}

fn load_file_config(common: &CommonArgs) -> anyhow::Result<FileConfig> {
    match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(serde_json::from_str(&text).context("parsing config")?)
        }
        None => Ok(FileConfig::default()),
    }
}

struct Resolved {
    net: NetworkSpec,
    geom: CoreGeometry,
    out_dir: PathBuf,
    fc: FileConfig,
}

fn resolve(common: &CommonArgs) -> anyhow::Result<Resolved> {
    let fc = load_file_config(common)?;
    let name = common
        .network
        .clone()
        .or_else(|| fc.network.clone())
        .context("--network is required")?;
    let side = common.input_side.or(fc.input_side).unwrap_or(256);
    let net = if name.ends_with(".json") || Path::new(&name).exists() {
        NetworkSpec::load(Path::new(&name))
            .with_context(|| format!("loading network descriptor {name}"))?
    } else {
        builtin_network(&name, side)?
    };
    let geom = match common.geometry.clone().or_else(|| fc.geometry.clone()) {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("reading geometry {}", p.display()))?;
            serde_json::from_str(&text).context("parsing geometry")?
        }
        None => CoreGeometry::default(),
    };
    let out_dir = std::env::var_os("ALCIM_OUT_DIR")
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .or_else(|| fc.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    Ok(Resolved { net, geom, out_dir, fc })
}

/// Atomic write: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn placement_from(s: Option<&str>) -> anyhow::Result<TcPlacement> {
    match s {
        None | Some("after-add") => Ok(TcPlacement::AfterResidualAdd),
        Some("after-stride") => Ok(TcPlacement::AfterStridedOp),
        Some(other) => bail!("unknown tc placement `{other}` (after-add | after-stride)"),
    }
}

fn cmd_schedule(a: ScheduleArgs) -> anyhow::Result<i32> {
    let r = resolve(&a.common)?;
    let placement =
        placement_from(a.tc_placement.as_deref().or(r.fc.tc_placement.as_deref()))?;
    let opts = PlannerOptions { tc_placement: placement, ..Default::default() };
    let plan = plan_lpt_opts(&r.net, &r.geom, &opts)?;

    write_atomic(&r.out_dir.join("plan.json"), plan.to_json()?.as_bytes())?;

    let reports = [
        max_activation(&r.net, FootprintMode::LayerByLayer, &r.geom)?,
        max_activation(&r.net, FootprintMode::CrossLayer, &r.geom)?,
        lpt::lpt_footprint(&r.net, &plan),
    ];
    let mut csv = String::from("mode,layer,live_bytes\n");
    for rep in &reports {
        let mode = match rep.mode {
            FootprintMode::LayerByLayer => "layer_by_layer",
            FootprintMode::CrossLayer => "cross_layer",
            FootprintMode::Lpt => "lpt",
        };
        for (i, b) in rep.per_layer.iter().enumerate() {
            csv.push_str(&format!("{mode},{i},{b}\n"));
        }
    }
    write_atomic(&r.out_dir.join("footprint.csv"), csv.as_bytes())?;

    let lbl = reports[0].max_live_activation_bytes;
    let lpt_live = reports[2].max_live_activation_bytes;
    let summary = serde_json::json!({
        "input_tile": plan.input_tile,
        "tile_grid": plan.tile_grid,
        "tc_events": plan.tc_events,
        "tmem_bytes_required": plan.tmem_bytes_required,
        "total_onchip_activation_bytes": r.geom.total_activation_bytes(),
        "max_live": {
            "layer_by_layer": lbl,
            "cross_layer": reports[1].max_live_activation_bytes,
            "lpt": lpt_live,
        },
        "reduction_vs_layer_by_layer": {
            "total_onchip": lbl as f64 / r.geom.total_activation_bytes() as f64,
            "live": lbl as f64 / lpt_live as f64,
        },
        "min_tile_warnings": plan.min_tile_warnings,
    });
    write_atomic(
        &r.out_dir.join("footprint.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    println!(
        "plan: {} TC events, TMEM {} B, total on-chip {} B, live {} B",
        plan.tc_events.len(),
        plan.tmem_bytes_required,
        r.geom.total_activation_bytes(),
        lpt_live
    );
    Ok(0)
}

/// Deterministic pseudo-random 8-bit input image derived from the seed.
fn synth_input(net: &NetworkSpec, seed: u64) -> QTensor {
    let s = net.input_shape;
    let mut t = QTensor::zeros(s.h, s.w, s.c);
    for (i, v) in t.values.iter_mut().enumerate() {
        let mut x = seed ^ 0x414c_4349_4d00_0000u64 ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        x ^= x >> 30;
        x = x.wrapping_mul(0xbf58476d1ce4e5b9);
        x ^= x >> 27;
        *v = (x % 256) as i32;
    }
    t
}

fn counters_csv(cs: &alcim_core::alsim::CounterSet) -> String {
    let mut s = String::from(
        "layer,icim_read,icim_write,ocim_read,ocim_write,tmem_read,tmem_write,mmem_read,wbuf_access,offchip_read,offchip_write,cycles\n",
    );
    let mut row = |label: &str, c: &alcim_core::alsim::AccessCounters| {
        s.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.icim_read,
            c.icim_write,
            c.ocim_read,
            c.ocim_write,
            c.tmem_read,
            c.tmem_write,
            c.mmem_read,
            c.wbuf_access,
            c.offchip_read,
            c.offchip_write,
            c.cycles
        ));
    };
    for (i, c) in cs.per_layer.iter().enumerate() {
        row(&i.to_string(), c);
    }
    row("overhead", &cs.overhead);
    row("total", &cs.total);
    s
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<i32> {
    let r = resolve(&a.common)?;
    let seed = a.seed.or(r.fc.seed).unwrap_or(0);
    let sparsity = a.sparsity.or(r.fc.sparsity).unwrap_or(0.5);
    let weight_bits = a.weight_bits.or(r.fc.weight_bits).unwrap_or(4);
    let cfg = WeightGenConfig::new(seed, weight_bits, WeightDistribution::UniformSigned)?;

    // Everything referenced must load before any computation starts.
    let mask = match a.mask_file.clone().or_else(|| r.fc.mask_file.clone()) {
        Some(p) => {
            let m = Supermask::load(&p)?;
            m.matches(&r.net)?;
            m
        }
        None => Supermask::random(seed, &r.net, sparsity)?,
    };
    let input = match a.input.clone().or_else(|| r.fc.input.clone()) {
        Some(p) => QTensor::load(&p)?,
        None => synth_input(&r.net, seed),
    };

    let plan = plan_lpt_opts(&r.net, &r.geom, &PlannerOptions::default())?;
    let opts = SimOptions { count_only: a.count_only, trace: a.trace };
    let sim = alsim::simulate(
        &r.net,
        &plan,
        &r.geom,
        &cfg,
        &mask,
        if a.count_only { None } else { Some(&input) },
        opts,
    )?;

    write_atomic(
        &r.out_dir.join("counters.json"),
        serde_json::to_string_pretty(&sim.counters)?.as_bytes(),
    )?;
    write_atomic(&r.out_dir.join("counters.csv"), counters_csv(&sim.counters).as_bytes())?;
    if let Some(trace) = &sim.trace {
        let mut lines = String::new();
        for ev in trace {
            lines.push_str(&serde_json::to_string(ev)?);
            lines.push('\n');
        }
        write_atomic(&r.out_dir.join("trace.jsonl"), lines.as_bytes())?;
    }

    let verdict = if a.count_only {
        "not-checked".to_string()
    } else {
        let weights = alcim_core::hnn::materialize(&cfg, &mask, &r.net)?;
        let golden = alcim_core::refconv::run_reference(&r.net, &weights, &input, &plan)?;
        let out = sim.output.as_ref().expect("full mode produces output");
        out.save(&r.out_dir.join("output.bin"))?;
        if *out == golden.output {
            "bitwise-equal".to_string()
        } else {
            "mismatch".to_string()
        }
    };
    write_atomic(
        &r.out_dir.join("verdict.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "verdict": verdict,
            "seed": seed,
            "sparsity": sparsity,
            "weight_bits": weight_bits,
            "cycles": sim.counters.total.cycles,
        }))?
        .as_bytes(),
    )?;
    println!("verdict: {verdict}; cycles {}", sim.counters.total.cycles);
    Ok(if verdict == "mismatch" { 1 } else { 0 })
}

fn parse_depth_range(s: &str) -> anyhow::Result<(usize, usize)> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().context("bad fused-depth range")?;
        let hi: usize = b.trim_start_matches('=').trim().parse().context("bad fused-depth range")?;
        if lo < 1 || hi < lo {
            bail!("fused-depth range must satisfy 1 <= lo <= hi");
        }
        Ok((lo, hi))
    } else {
        let n: usize = s.trim().parse().context("bad fused-depth")?;
        if n < 1 {
            bail!("fused-depth must be >= 1");
        }
        Ok((n, n))
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> anyhow::Result<i32> {
    // The access-count model needs no network; keep the config plumbing.
    let fc = load_file_config(&a.common)?;
    let out_dir = std::env::var_os("ALCIM_OUT_DIR")
        .map(PathBuf::from)
        .or_else(|| a.common.out.clone())
        .or_else(|| fc.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let depth = a
        .fused_depth
        .clone()
        .or_else(|| fc.fused_depth.clone())
        .context("--fused-depth is required")?;
    let (lo, hi) = parse_depth_range(&depth)?;
    let tile = a.tile.or(fc.tile).context("--tile is required")?;
    if tile == 0 {
        bail!("--tile must be >= 1");
    }

    let mut csv = String::from("fused_depth,tile_side,block_conv,reads,writes,total\n");
    for n in lo..=hi {
        for bc in [false, true] {
            let rep = count_fused_accesses(n, tile, bc)?;
            csv.push_str(&format!(
                "{n},{tile},{bc},{},{},{}\n",
                rep.reads,
                rep.writes,
                rep.total()
            ));
        }
    }
    write_atomic(&out_dir.join("fused_access.csv"), csv.as_bytes())?;
    let last_without = count_fused_accesses(hi, tile, false)?.total();
    let last_with = count_fused_accesses(hi, tile, true)?.total();
    println!(
        "depth {hi}: without/with block conv = {:.2}x",
        last_without as f64 / last_with as f64
    );
    Ok(0)
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<i32> {
    let r = resolve(&a.common)?;
    let table = match a.energy_table.clone().or_else(|| r.fc.energy_table.clone()) {
        Some(p) => EnergyTable::load(&p)?,
        None => EnergyTable::default(),
    };
    let plan = plan_lpt_opts(&r.net, &r.geom, &PlannerOptions::default())?;
    let cmp = compare_dataflows(&r.net, &plan, &r.geom, &table)?;

    let mut csv =
        String::from("dataflow,capacity_bytes,accesses,energy,ratio_vs_ws,ratio_vs_baseline\n");
    for rep in [&cmp.ws, &cmp.r#as, &cmp.al, &cmp.baseline] {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            rep.dataflow,
            rep.capacity_bytes,
            rep.accesses,
            rep.energy,
            rep.ratio_vs_ws,
            rep.ratio_vs_baseline
        ));
    }
    write_atomic(&r.out_dir.join("dataflows.csv"), csv.as_bytes())?;
    write_atomic(
        &r.out_dir.join("dataflows.json"),
        serde_json::to_string_pretty(&cmp)?.as_bytes(),
    )?;
    println!(
        "AS/AL {:.2}x  WS/AS {:.2}x  baseline/AL accesses {:.2}x energy {:.2}x  TC overhead {:.3}",
        cmp.as_al_energy_ratio,
        cmp.ws_as_energy_ratio,
        cmp.baseline_access_ratio,
        cmp.baseline_energy_ratio,
        cmp.tc_overhead_ratio
    );
    Ok(0)
}

fn cmd_mask(a: MaskArgs) -> anyhow::Result<i32> {
    let r = resolve(&a.common)?;
    let seed = a.seed.or(r.fc.seed).unwrap_or(0);
    let sparsity = a.sparsity.or(r.fc.sparsity).unwrap_or(0.5);
    let path = a
        .mask_file
        .clone()
        .or_else(|| r.fc.mask_file.clone())
        .unwrap_or_else(|| r.out_dir.join("supermask.bin"));
    let mask = Supermask::random(seed, &r.net, sparsity)?;
    mask.save(&path)?;
    let bits: usize = mask.layers.iter().map(|l| l.bit_count()).sum();
    let ones: usize = mask.layers.iter().map(|l| l.popcount()).sum();
    println!(
        "wrote {} ({} layers, {} bits, ones fraction {:.4})",
        path.display(),
        mask.layers.len(),
        bits,
        ones as f64 / bits.max(1) as f64
    );
    Ok(0)
}
