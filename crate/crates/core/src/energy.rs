//! Parametric SRAM access-energy model and the dataflow comparator:
//! weight-stationary (WS), activation-stationary (AS), activation-localized
//! (AL), and the single-AMEM baseline.
//!
//! Counting model (element accesses, activations only; weight movement is
//! free by default since weights are generated next to the cores):
//!
//! - AL: the simulator's movement counters. Conv inputs are read in-array
//!   (compute, not counted as movement); outputs are written once and stay
//!   in place for the next layer. Residual adds charge the skip read; TC
//!   charges the TMEM round-trip plus the concat placement.
//! - AS: AL plus a round-trip for every conv/fc input that is an
//!   intermediate: activations are only stationary during a layer, so each
//!   input tile is read back from the output buffer and rewritten into the
//!   compute array.
//! - WS: whole maps against one large activation memory. Windowed operators
//!   re-read inputs once per kernel row (a line-buffer reuse assumption);
//!   adds read both quantized operands; every output is written once.
//! - Baseline: WS counting plus slice fusion of each residual block's last
//!   two convs and the add (one wide conv per fused group), which keeps
//!   those two intermediates out of the big memory.

use crate::alsim::{self, CounterSet, SimOptions};
use crate::error::{Error, Result};
use crate::hnn::{Supermask, WeightGenConfig};
use crate::lpt::SchedulePlan;
use crate::netspec::{CoreGeometry, LayerKind, NetworkSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Activation memory assumed for the WS dataflow and the baseline.
pub const WS_AMEM_BYTES: u64 = 1 << 20;

/// Capacity -> relative energy per access. Power-law interpolation between
/// knots; below the smallest knot the energy clamps to the smallest knot's
/// value; above the largest it extends along the fitted power law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    /// (capacity bytes, energy) knots, ascending capacity.
    pub entries: Vec<(u64, f64)>,
    /// Exponent of the power-law extension beyond the largest knot.
    pub exponent: f64,
}

impl Default for EnergyTable {
    /// E proportional to capacity^0.5, anchored at 16 KB = 1.0.
    fn default() -> Self {
        EnergyTable { entries: vec![(16 * 1024, 1.0)], exponent: 0.5 }
    }
}

impl EnergyTable {
    pub fn from_entries(mut entries: Vec<(u64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidEnergyTable("no entries".into()));
        }
        entries.sort_by_key(|(c, _)| *c);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidEnergyTable(format!("duplicate capacity {}", w[0].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidEnergyTable(
                    "energy must be non-decreasing in capacity".into(),
                ));
            }
        }
        if entries.iter().any(|(c, e)| *c == 0 || *e <= 0.0 || !e.is_finite()) {
            return Err(Error::InvalidEnergyTable("capacities and energies must be positive".into()));
        }
        // Log-log least-squares slope through the knots; single-knot tables
        // fall back to the default square-root law.
        let exponent = if entries.len() < 2 {
            0.5
        } else {
            let pts: Vec<(f64, f64)> = entries.iter().map(|(c, e)| ((*c as f64).ln(), e.ln())).collect();
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|(x, _)| x).sum();
            let sy: f64 = pts.iter().map(|(_, y)| y).sum();
            let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
            let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
            let denom = n * sxx - sx * sx;
            if denom.abs() < 1e-12 {
                0.5
            } else {
                (n * sxy - sx * sy) / denom
            }
        };
        Ok(EnergyTable { entries, exponent })
    }

    /// Relative energy per access for a memory of `capacity` bytes.
    pub fn access_energy(&self, capacity: u64) -> f64 {
        assert!(capacity > 0, "capacity must be positive");
        let first = self.entries[0];
        let last = *self.entries.last().unwrap();
        if capacity <= first.0 {
            // clamped extrapolation below the smallest knot
            if capacity == first.0 {
                return first.1;
            }
            return first.1;
        }
        if capacity >= last.0 {
            if capacity == last.0 {
                return last.1;
            }
            return last.1 * (capacity as f64 / last.0 as f64).powf(self.exponent);
        }
        // log-log linear interpolation between the bracketing knots
        let i = self.entries.partition_point(|(c, _)| *c < capacity);
        let (c0, e0) = self.entries[i - 1];
        if c0 == capacity {
            return e0;
        }
        let (c1, e1) = self.entries[i];
        let t = ((capacity as f64).ln() - (c0 as f64).ln()) / ((c1 as f64).ln() - (c0 as f64).ln());
        (e0.ln() + t * (e1.ln() - e0.ln())).exp()
    }

    /// Loads `[{"capacity": ..., "energy": ...}, ...]` JSON or
    /// `capacity,energy` CSV rows.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let trimmed = text.trim_start();
        let entries = if trimmed.starts_with('[') {
            #[derive(Deserialize)]
            struct Row {
                capacity: u64,
                energy: f64,
            }
            let rows: Vec<Row> = serde_json::from_str(&text)?;
            rows.into_iter().map(|r| (r.capacity, r.energy)).collect()
        } else {
            let mut rows = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with("capacity") {
                    continue;
                }
                let mut it = line.split(',');
                let cap = it
                    .next()
                    .and_then(|s| s.trim().parse::<u64>().ok())
                    .ok_or_else(|| Error::MalformedFile(format!("energy table line {}", ln + 1)))?;
                let e = it
                    .next()
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::MalformedFile(format!("energy table line {}", ln + 1)))?;
                rows.push((cap, e));
            }
            rows
        };
        EnergyTable::from_entries(entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataflow {
    Ws,
    As,
    Al,
    Baseline,
}

impl std::fmt::Display for Dataflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Dataflow::Ws => "WS",
            Dataflow::As => "AS",
            Dataflow::Al => "AL",
            Dataflow::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DataflowReport {
    pub dataflow: Dataflow,
    /// Dominant activation memory this dataflow reads and writes.
    pub capacity_bytes: u64,
    pub accesses: u64,
    pub energy: f64,
    pub ratio_vs_ws: f64,
    pub ratio_vs_baseline: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataflowComparison {
    pub ws: DataflowReport,
    pub r#as: DataflowReport,
    pub al: DataflowReport,
    pub baseline: DataflowReport,
    /// baseline / AL element accesses
    pub baseline_access_ratio: f64,
    /// baseline / AL energy
    pub baseline_energy_ratio: f64,
    /// WS / AS energy
    pub ws_as_energy_ratio: f64,
    /// AS / AL energy
    pub as_al_energy_ratio: f64,
    /// Accesses with TC traffic over accesses with hypothetically free TC.
    pub tc_overhead_ratio: f64,
    /// Off-chip element transfers (identical across dataflows; excluded
    /// from all energy figures).
    pub offchip_accesses: u64,
}

/// Map-level traffic terms derived from shapes alone.
struct MapTraffic {
    ws_accesses: u64,
    baseline_accesses: u64,
    /// Round-trip elements for AS: conv/fc/projection inputs fed by
    /// intermediates, counted once each (two port accesses apiece).
    as_roundtrip_elems: u64,
}

fn map_traffic(net: &NetworkSpec) -> MapTraffic {
    let shapes = net.shapes();
    let in_elems = |i: usize| net.input_shape_of(i).elements() as u64;
    let out_elems = |i: usize| shapes[i].elements() as u64;
    // True once a compute layer has produced the value flowing into layer i.
    let mut intermediate_input = vec![false; net.layers.len() + 1];
    for i in 0..net.layers.len() {
        let produced_by_compute = net.layers[i].kind != LayerKind::Input;
        intermediate_input[i + 1] = intermediate_input[i] || produced_by_compute;
    }

    let mut ws: u64 = net.input_shape.elements() as u64; // load into AMEM
    let mut rt: u64 = 0;
    for (i, l) in net.layers.iter().enumerate() {
        match l.kind {
            LayerKind::Input => {}
            LayerKind::Conv | LayerKind::Fc => {
                ws += in_elems(i) * l.kernel as u64 + out_elems(i);
                if intermediate_input[i] {
                    rt += in_elems(i);
                }
            }
            LayerKind::PoolMax | LayerKind::PoolAvg => {
                let k = if crate::netspec::is_global_reduce(net, i) {
                    1
                } else {
                    l.kernel as u64
                };
                ws += in_elems(i) * k + out_elems(i);
            }
            LayerKind::ResidualAdd => {
                // both quantized operands read, result written
                ws += 3 * out_elems(i);
                if let Some(p) = &l.projection {
                    let src = l.source.unwrap();
                    let src_elems = shapes[src].elements() as u64;
                    ws += src_elems * p.kernel as u64 + out_elems(i);
                    if intermediate_input[src + 1] {
                        rt += src_elems;
                    }
                }
            }
        }
    }

    // Baseline slice fusion: [conv -> conv -> add] tail of each residual
    // block runs as one fused slice pass, keeping the two intermediates
    // (the wide conv input and the add's main operand) local.
    let mut savings: u64 = 0;
    for (i, l) in net.layers.iter().enumerate() {
        if l.kind == LayerKind::ResidualAdd && i >= 2 {
            let a = &net.layers[i - 1];
            let b = &net.layers[i - 2];
            if a.kind == LayerKind::Conv && b.kind == LayerKind::Conv {
                savings += 2 * out_elems(i - 1) + 2 * out_elems(i - 2);
            }
        }
    }

    MapTraffic { ws_accesses: ws, baseline_accesses: ws - savings, as_roundtrip_elems: rt }
}

/// Full dataflow comparison from an existing counter set.
pub fn dataflow_analysis(
    net: &NetworkSpec,
    counters: &CounterSet,
    table: &EnergyTable,
    geom: &CoreGeometry,
) -> DataflowComparison {
    let t = map_traffic(net);
    let core_e = table.access_energy(geom.core_bytes() as u64);
    let tmem_e = table.access_energy(geom.tmem_bytes as u64);
    let big_e = table.access_energy(WS_AMEM_BYTES);

    let al_core = counters.total.core_movement();
    let al_tmem = counters.total.tmem_movement();
    let al_acc = al_core + al_tmem;
    let al_energy = al_core as f64 * core_e + al_tmem as f64 * tmem_e;

    let as_acc = al_acc + 2 * t.as_roundtrip_elems;
    let as_energy = al_energy + (2 * t.as_roundtrip_elems) as f64 * core_e;

    let ws_energy = t.ws_accesses as f64 * big_e;
    let base_energy = t.baseline_accesses as f64 * big_e;

    let tc_traffic =
        counters.overhead.tmem_movement() + counters.overhead.icim_write;
    let tc_overhead_ratio = if al_acc > tc_traffic {
        al_acc as f64 / (al_acc - tc_traffic) as f64
    } else {
        1.0
    };

    let report = |dataflow, capacity_bytes, accesses: u64, energy: f64| DataflowReport {
        dataflow,
        capacity_bytes,
        accesses,
        energy,
        ratio_vs_ws: ws_energy / energy,
        ratio_vs_baseline: base_energy / energy,
    };

    DataflowComparison {
        ws: report(Dataflow::Ws, WS_AMEM_BYTES, t.ws_accesses, ws_energy),
        r#as: report(Dataflow::As, geom.core_bytes() as u64, as_acc, as_energy),
        al: report(Dataflow::Al, geom.core_bytes() as u64, al_acc, al_energy),
        baseline: report(Dataflow::Baseline, WS_AMEM_BYTES, t.baseline_accesses, base_energy),
        baseline_access_ratio: t.baseline_accesses as f64 / al_acc as f64,
        baseline_energy_ratio: base_energy / al_energy,
        ws_as_energy_ratio: ws_energy / as_energy,
        as_al_energy_ratio: as_energy / al_energy,
        tc_overhead_ratio,
        offchip_accesses: counters.total.offchip_read + counters.total.offchip_write,
    }
}

/// Runs a count-only simulation and compares the three dataflows.
pub fn compare_dataflows(
    net: &NetworkSpec,
    plan: &SchedulePlan,
    geom: &CoreGeometry,
    table: &EnergyTable,
) -> Result<DataflowComparison> {
    let mask = Supermask::ones(net);
    let cfg = WeightGenConfig::default();
    let sim = alsim::simulate(net, plan, geom, &cfg, &mask, None, SimOptions { count_only: true, trace: false })?;
    Ok(dataflow_analysis(net, &sim.counters, table, geom))
}

/// Baseline-vs-AL slice of the comparison (access counts and energy).
pub fn compare_baseline(
    net: &NetworkSpec,
    plan: &SchedulePlan,
    geom: &CoreGeometry,
    table: &EnergyTable,
) -> Result<DataflowComparison> {
    compare_dataflows(net, plan, geom, table)
}

/// Convenience: AL counters alone (count-only simulation).
pub fn al_counters(net: &NetworkSpec, plan: &SchedulePlan, geom: &CoreGeometry) -> Result<CounterSet> {
    let mask = Supermask::ones(net);
    let cfg = WeightGenConfig::default();
    let sim = alsim::simulate(net, plan, geom, &cfg, &mask, None, SimOptions { count_only: true, trace: false })?;
    Ok(sim.counters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpt::plan_lpt;
    use crate::netspec::{builtin_network, LayerSpec, QuantSpec, Shape};

    #[test]
    fn default_table_anchors_and_extends() {
        let t = EnergyTable::default();
        assert_eq!(t.access_energy(16 * 1024), 1.0);
        // 1 MB at exponent 0.5: (1024/16)^0.5 = 8
        assert!((t.access_energy(1 << 20) - 8.0).abs() < 1e-12);
        // below the smallest knot: clamped
        assert_eq!(t.access_energy(4 * 1024), 1.0);
        // 24 KB TMEM: sqrt(1.5)
        assert!((t.access_energy(24 * 1024) - 1.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn custom_table_exact_at_knots_and_interpolates() {
        let t = EnergyTable::from_entries(vec![(1024, 0.5), (16 * 1024, 1.0), (1 << 20, 11.1)]).unwrap();
        assert_eq!(t.access_energy(1024), 0.5);
        assert_eq!(t.access_energy(16 * 1024), 1.0);
        assert_eq!(t.access_energy(1 << 20), 11.1);
        let mid = t.access_energy(32 * 1024);
        assert!(mid > 1.0 && mid < 11.1);
    }

    #[test]
    fn decreasing_table_rejected() {
        assert!(EnergyTable::from_entries(vec![(1024, 2.0), (2048, 1.0)]).is_err());
        // flat tables are monotone (non-decreasing) and allowed
        assert!(EnergyTable::from_entries(vec![(1024, 1.0), (2048, 1.0)]).is_ok());
    }

    #[test]
    fn energy_ordering_holds_on_default_table() {
        let geom = CoreGeometry::default();
        let table = EnergyTable::default();
        for side in [16usize, 32] {
            let net = builtin_network("toy_vgg", side).unwrap();
            let plan = plan_lpt(&net, &geom).unwrap();
            let cmp = compare_dataflows(&net, &plan, &geom, &table).unwrap();
            assert!(cmp.al.energy <= cmp.r#as.energy);
            assert!(cmp.r#as.energy <= cmp.ws.energy);
        }
    }

    #[test]
    fn scale_invariance_of_ratios() {
        let geom = CoreGeometry::default();
        let net = builtin_network("toy_vgg", 16).unwrap();
        let plan = plan_lpt(&net, &geom).unwrap();
        let t1 = EnergyTable::from_entries(vec![(16 * 1024, 1.0), (1 << 20, 8.0)]).unwrap();
        let t2 = EnergyTable::from_entries(vec![(16 * 1024, 3.0), (1 << 20, 24.0)]).unwrap();
        let a = compare_dataflows(&net, &plan, &geom, &t1).unwrap();
        let b = compare_dataflows(&net, &plan, &geom, &t2).unwrap();
        assert!((a.ws_as_energy_ratio - b.ws_as_energy_ratio).abs() < 1e-9);
        assert!((a.as_al_energy_ratio - b.as_al_energy_ratio).abs() < 1e-9);
        assert!((a.baseline_energy_ratio - b.baseline_energy_ratio).abs() < 1e-9);
    }

    #[test]
    fn flat_table_collapses_energy_to_access_ratios() {
        let geom = CoreGeometry::default();
        let net = builtin_network("toy_vgg", 16).unwrap();
        let plan = plan_lpt(&net, &geom).unwrap();
        let flat = EnergyTable::from_entries(vec![(16 * 1024, 1.0), (1 << 20, 1.0)]).unwrap();
        let cmp = compare_dataflows(&net, &plan, &geom, &flat).unwrap();
        assert!((cmp.baseline_energy_ratio - cmp.baseline_access_ratio).abs() < 1e-9);
        let as_al_access = cmp.r#as.accesses as f64 / cmp.al.accesses as f64;
        assert!((cmp.as_al_energy_ratio - as_al_access).abs() < 1e-9);
    }

    #[test]
    fn single_layer_net_as_equals_al() {
        let geom = CoreGeometry::default();
        let net = crate::netspec::NetworkSpec::new(
            Shape { h: 8, w: 8, c: 8 },
            vec![LayerSpec::conv(3, 1, 8, QuantSpec::identity())],
        )
        .unwrap();
        let plan = plan_lpt(&net, &geom).unwrap();
        let cmp = compare_dataflows(&net, &plan, &geom, &EnergyTable::default()).unwrap();
        assert_eq!(cmp.r#as.accesses, cmp.al.accesses);
        assert!((cmp.r#as.energy - cmp.al.energy).abs() < 1e-12);
    }

    #[test]
    fn identical_counts_and_capacity_give_unit_ratio() {
        let table = EnergyTable::default();
        let e1 = 1000.0 * table.access_energy(WS_AMEM_BYTES);
        let e2 = 1000.0 * table.access_energy(WS_AMEM_BYTES);
        assert_eq!(e1 / e2, 1.0);
    }
}
