//! Architectural simulator of the activation-localized three-core CIM
//! processor. Executes a schedule plan bit-exactly — convolution runs as
//! K^2 weight-pixel passes whose partial products are shift-aligned per
//! output column and accumulated in the near-memory pipeline — while
//! recording per-memory access counters, role assignments, and cycles.
//!
//! Two counter tiers coexist:
//! - `icim_read` and `cycles` follow the physical in-array model (one SRAM
//!   row activation per weight pixel, output row, channel fold, and output
//!   channel group). They quantify compute work.
//! - The movement counters (`ocim_*`, `icim_write`, `tmem_*`) count element
//!   transfers over memory ports. The energy comparisons consume only
//!   these; in-array MAC reads are compute, not data communication.
//!
//! Weights are regenerated from the counter-based generator on every pass
//! (reloading is free); the supermask gates them at the weight buffer.
//! Residual adds fuse into the producing layer's post-processing pass: the
//! skip streams out of its parking place while the result replaces the
//! main operand in place, so only the skip read is charged.

use crate::error::{Error, Result};
use crate::hnn::{generate_weight, mask_bit_index, Supermask, WeightGenConfig, WeightTensor};
use crate::lpt::{self, RoleStep, SchedulePlan, TileRegion};
use crate::netspec::{
    is_global_reduce, ConcatAxis, CoreGeometry, LayerKind, NetworkSpec, Projection, QTensor,
    QuantSpec,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounters {
    /// In-array element reads by MAC row activations (physical model).
    pub icim_read: u64,
    /// Element writes into a core outside the NMP result path (TC concat
    /// placement of the retrieved half).
    pub icim_write: u64,
    /// Element reads out of a core through the NMP (pool inputs, parked
    /// skips, global-reduce streams).
    pub ocim_read: u64,
    /// Element writes of results into a core (conv/pool outputs, input
    /// tile loads).
    pub ocim_write: u64,
    pub tmem_read: u64,
    pub tmem_write: u64,
    /// Supermask bits fetched.
    pub mmem_read: u64,
    /// Masked weights staged into the weight buffer.
    pub wbuf_access: u64,
    pub offchip_read: u64,
    pub offchip_write: u64,
    pub cycles: u64,
}

impl AccessCounters {
    pub fn add(&mut self, other: &AccessCounters) {
        self.icim_read += other.icim_read;
        self.icim_write += other.icim_write;
        self.ocim_read += other.ocim_read;
        self.ocim_write += other.ocim_write;
        self.tmem_read += other.tmem_read;
        self.tmem_write += other.tmem_write;
        self.mmem_read += other.mmem_read;
        self.wbuf_access += other.wbuf_access;
        self.offchip_read += other.offchip_read;
        self.offchip_write += other.offchip_write;
        self.cycles += other.cycles;
    }

    pub fn scale(&self, n: u64) -> AccessCounters {
        AccessCounters {
            icim_read: self.icim_read * n,
            icim_write: self.icim_write * n,
            ocim_read: self.ocim_read * n,
            ocim_write: self.ocim_write * n,
            tmem_read: self.tmem_read * n,
            tmem_write: self.tmem_write * n,
            mmem_read: self.mmem_read * n,
            wbuf_access: self.wbuf_access * n,
            offchip_read: self.offchip_read * n,
            offchip_write: self.offchip_write * n,
            cycles: self.cycles * n,
        }
    }

    /// Core-port activation movement (the 16 KB term of the energy model).
    pub fn core_movement(&self) -> u64 {
        self.ocim_read + self.ocim_write + self.icim_write
    }

    /// TMEM activation movement (the 24 KB term of the energy model).
    pub fn tmem_movement(&self) -> u64 {
        self.tmem_read + self.tmem_write
    }

    /// All counted on-chip activation movement.
    pub fn movement_total(&self) -> u64 {
        self.core_movement() + self.tmem_movement()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSet {
    pub per_layer: Vec<AccessCounters>,
    /// Input loads, TC traffic, and result readout.
    pub overhead: AccessCounters,
    pub total: AccessCounters,
}

impl CounterSet {
    fn new(layers: usize) -> Self {
        CounterSet {
            per_layer: vec![AccessCounters::default(); layers],
            overhead: AccessCounters::default(),
            total: AccessCounters::default(),
        }
    }

    /// The totals invariant: total equals overhead plus per-layer sums.
    pub fn sum_check(&self) -> bool {
        let mut s = self.overhead;
        for l in &self.per_layer {
            s.add(l);
        }
        s == self.total
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub kind: String,
    pub layer: Option<usize>,
    pub icim: Option<u8>,
    pub ocim: Option<u8>,
    pub hold: Option<u8>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    /// Skip value computation; counters, roles, and cycles only.
    pub count_only: bool,
    pub trace: bool,
}

pub struct SimResult {
    pub output: Option<QTensor>,
    pub counters: CounterSet,
    /// Role sequence recorded over the first tile pass.
    pub first_pass_roles: Vec<RoleStep>,
    pub trace: Option<Vec<TraceEvent>>,
}

/// A tile as the simulator sees it: dims plus the core it occupies
/// (`None` while resident in TMEM), plus values in full mode.
#[derive(Clone, Debug)]
struct SimTile {
    h: usize,
    w: usize,
    c: usize,
    signed: bool,
    core: Option<u8>,
    data: Option<QTensor>,
}

impl SimTile {
    fn elements(&self) -> usize {
        self.h * self.w * self.c
    }

    fn bytes(&self) -> usize {
        self.elements()
    }
}

struct SimVisitor<'a> {
    net: &'a NetworkSpec,
    plan: &'a SchedulePlan,
    geom: &'a CoreGeometry,
    cfg: &'a WeightGenConfig,
    mask: &'a Supermask,
    input: Option<&'a QTensor>,
    opts: SimOptions,
    counters: CounterSet,
    /// bytes resident per core
    core_used: Vec<usize>,
    /// add layer -> core held for its parked skip
    held: HashMap<usize, u8>,
    tmem_occupancy: usize,
    step: usize,
    first_pass_roles: Vec<RoleStep>,
    recording_first_pass: bool,
    trace: Vec<TraceEvent>,
    /// weighted-layer ordinal per network layer
    mask_index: HashMap<usize, usize>,
}

impl<'a> SimVisitor<'a> {
    fn violation(&self, detail: String) -> Error {
        Error::SimViolation { step: self.step, detail }
    }

    fn alloc_core(&mut self, exclude: &[u8]) -> Result<u8> {
        let held: Vec<u8> = self.held.values().copied().collect();
        for id in 0..self.geom.core_count as u8 {
            if self.core_used[id as usize] == 0 && !exclude.contains(&id) && !held.contains(&id) {
                return Ok(id);
            }
        }
        Err(self.violation("no free CIM core; the planner admitted an oversubscribed schedule".into()))
    }

    fn occupy(&mut self, core: u8, bytes: usize) -> Result<()> {
        if bytes > self.geom.core_bytes() {
            return Err(self.violation(format!(
                "tile of {bytes} bytes exceeds core capacity {}",
                self.geom.core_bytes()
            )));
        }
        self.core_used[core as usize] = bytes;
        Ok(())
    }

    fn free_core(&mut self, core: u8) {
        self.core_used[core as usize] = 0;
    }

    fn charge_layer(&mut self, layer: usize, c: &AccessCounters) {
        self.counters.per_layer[layer].add(c);
        self.counters.total.add(c);
    }

    fn charge_overhead(&mut self, c: &AccessCounters) {
        self.counters.overhead.add(c);
        self.counters.total.add(c);
    }

    fn emit_trace(&mut self, kind: &str, layer: Option<usize>, icim: Option<u8>, ocim: Option<u8>) {
        if self.opts.trace {
            let hold = self.held.values().min().copied();
            self.trace.push(TraceEvent { step: self.step, kind: kind.into(), layer, icim, ocim, hold });
        }
        self.step += 1;
    }

    fn record_roles(&mut self, layer: usize, icim: u8, ocim: u8, hold: Option<u8>) {
        if self.recording_first_pass {
            self.first_pass_roles.push(RoleStep { layer, icim, ocim, hold });
        }
    }

    /// WGEN -> MMEM gate -> WBUF: the masked weights of one layer,
    /// regenerated on demand.
    fn staged_weights(&self, layer: usize, k: usize, cin: usize, cout: usize) -> WeightTensor {
        let mi = self.mask_index[&layer];
        let ml = &self.mask.layers[mi];
        let mut values = vec![0i32; k * k * cin * cout];
        for kh in 0..k {
            for kw in 0..k {
                for ci in 0..cin {
                    for co in 0..cout {
                        let bit = mask_bit_index(k, cin, cout, (kh, kw, ci, co));
                        if ml.get(bit) {
                            values[bit] = generate_weight(self.cfg, layer, (kh, kw, ci, co));
                        }
                    }
                }
            }
        }
        WeightTensor { kernel: k, in_channels: cin, out_channels: cout, values }
    }

    /// One full conv execution on a resident tile: K^2 weight-pixel passes,
    /// partial products shift-aligned per output column (out-of-tile
    /// columns contribute zero), NMP accumulation, post-processing, one
    /// oCIM write per output element.
    #[allow(clippy::too_many_arguments)]
    fn conv_pass(
        &mut self,
        layer: usize,
        input: &SimTile,
        k: usize,
        stride: usize,
        cout: usize,
        quant: &QuantSpec,
        out_core: u8,
    ) -> Result<SimTile> {
        let cin = input.c;
        let (oh, ow) = (
            crate::netspec::out_extent(input.h, stride),
            crate::netspec::out_extent(input.w, stride),
        );
        let c = conv_counters(self.geom, k, cin, cout, (input.h, input.w), stride);
        self.charge_layer(layer, &c);

        let data = if let Some(inp) = &input.data {
            let weights = self.staged_weights(layer, k, cin, cout);
            let pad = k / 2;
            let mut acc = vec![0i64; oh * ow * cout];
            for kh in 0..k {
                for kw in 0..k {
                    for r in 0..oh {
                        let ih = (r * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= input.h as isize {
                            continue;
                        }
                        for col in 0..ow {
                            let iw = (col * stride + kw) as isize - pad as isize;
                            if iw < 0 || iw >= input.w as isize {
                                continue;
                            }
                            let base = inp.idx(ih as usize, iw as usize, 0);
                            let abase = (r * ow + col) * cout;
                            for ci in 0..cin {
                                let x = inp.values[base + ci] as i64;
                                if x == 0 {
                                    continue;
                                }
                                let wbase = ((kh * k + kw) * cin + ci) * cout;
                                for co in 0..cout {
                                    acc[abase + co] += x * weights.values[wbase + co] as i64;
                                }
                            }
                        }
                    }
                }
            }
            let mut out = QTensor {
                height: oh,
                width: ow,
                channels: cout,
                bit_width: 8,
                signed: !quant.relu,
                values: vec![0; oh * ow * cout],
            };
            for (i, a) in acc.iter().enumerate() {
                let co = i % cout;
                out.values[i] =
                    crate::netspec::requantize(*a, quant.mult_for(co), quant.shift_for(co), quant.relu);
            }
            Some(out)
        } else {
            None
        };

        let tile = SimTile { h: oh, w: ow, c: cout, signed: !quant.relu, core: Some(out_core), data };
        self.occupy(out_core, tile.bytes())?;
        Ok(tile)
    }
}

fn conv_counters(
    geom: &CoreGeometry,
    k: usize,
    cin: usize,
    cout: usize,
    in_tile: (usize, usize),
    stride: usize,
) -> AccessCounters {
    let oh = crate::netspec::out_extent(in_tile.0, stride);
    let ow = crate::netspec::out_extent(in_tile.1, stride);
    let cgroups = cout.div_ceil(geom.tile_width) as u64;
    let folds = cin.div_ceil(geom.channel_depth) as u64;
    AccessCounters {
        icim_read: (k * k) as u64 * cgroups * oh as u64 * (in_tile.1 * cin) as u64,
        cycles: (k * k) as u64 * oh as u64 * folds * cgroups,
        wbuf_access: (k * k * cin * cout) as u64,
        mmem_read: (k * k * cin * cout) as u64,
        ocim_write: (oh * ow * cout) as u64,
        ..Default::default()
    }
}

impl<'a> lpt::ScheduleVisitor for SimVisitor<'a> {
    type Tile = SimTile;

    fn load_input(&mut self, region: &TileRegion) -> Result<SimTile> {
        let ch = self.net.input_shape.c;
        let elems = (region.tile_h * region.tile_w * ch) as u64;
        let core = self.alloc_core(&[])?;
        self.charge_overhead(&AccessCounters {
            offchip_read: elems,
            ocim_write: elems,
            ..Default::default()
        });
        let data = self.input.map(|inp| {
            let (h0, w0, h1, w1) = region.pixel_bounds();
            let mut values = Vec::with_capacity((h1 - h0) * (w1 - w0) * ch);
            for h in h0..h1 {
                for w in w0..w1 {
                    let base = inp.idx(h, w, 0);
                    values.extend_from_slice(&inp.values[base..base + ch]);
                }
            }
            QTensor {
                height: h1 - h0,
                width: w1 - w0,
                channels: ch,
                bit_width: inp.bit_width,
                signed: inp.signed,
                values,
            }
        });
        let tile = SimTile {
            h: region.tile_h,
            w: region.tile_w,
            c: ch,
            signed: self.input.is_some_and(|i| i.signed),
            core: Some(core),
            data,
        };
        self.occupy(core, tile.bytes())?;
        self.emit_trace("load_input", None, None, Some(core));
        Ok(tile)
    }

    fn exec_layer(&mut self, layer: usize, input: SimTile, skip: Option<SimTile>) -> Result<SimTile> {
        let l = &self.net.layers[layer];
        let in_core = input
            .core
            .ok_or_else(|| self.violation(format!("layer {layer}: input tile is not core-resident")))?;
        let mut held_cores: Vec<u8> = self.held.values().copied().collect();
        held_cores.sort_unstable();

        match l.kind {
            LayerKind::Input => {
                self.emit_trace("input", Some(layer), Some(in_core), Some(in_core));
                Ok(input)
            }
            LayerKind::Conv | LayerKind::Fc => {
                let out_core = self.alloc_core(&[in_core])?;
                let t = self.conv_pass(layer, &input, l.kernel, l.stride, l.out_channels, &l.quant, out_core)?;
                if !held_cores.contains(&in_core) {
                    self.free_core(in_core);
                }
                self.emit_trace("conv", Some(layer), Some(in_core), Some(out_core));
                self.record_roles(layer, in_core, out_core, held_cores.first().copied());
                Ok(t)
            }
            LayerKind::PoolMax | LayerKind::PoolAvg => {
                let out_core = self.alloc_core(&[in_core])?;
                let folds = input.c.div_ceil(self.geom.channel_depth) as u64;
                let (oh, ow) = lpt::output_tile_dims(self.net, layer, (input.h, input.w));
                let c = AccessCounters {
                    ocim_read: input.elements() as u64,
                    ocim_write: (oh * ow * input.c) as u64,
                    cycles: input.h as u64 * folds,
                    ..Default::default()
                };
                self.charge_layer(layer, &c);
                let data = input.data.as_ref().map(|d| crate::refconv::pool_tile(d, l, false));
                let t = SimTile { h: oh, w: ow, c: input.c, signed: input.signed, core: Some(out_core), data };
                self.occupy(out_core, t.bytes())?;
                if !held_cores.contains(&in_core) {
                    self.free_core(in_core);
                }
                self.emit_trace("pool", Some(layer), Some(in_core), Some(out_core));
                self.record_roles(layer, in_core, out_core, held_cores.first().copied());
                Ok(t)
            }
            LayerKind::ResidualAdd => {
                let skip = skip
                    .ok_or_else(|| self.violation(format!("layer {layer}: add without a skip")))?;
                if (skip.h, skip.w, skip.c) != (input.h, input.w, input.c) {
                    return Err(self.violation(format!(
                        "layer {layer}: skip {}x{}x{} vs main {}x{}x{}",
                        skip.h, skip.w, skip.c, input.h, input.w, input.c
                    )));
                }
                // Fused into the producer's NMP pass; only the skip read is
                // charged (from its core, or from TMEM for spilled parks).
                let c = if skip.core.is_some() {
                    AccessCounters { ocim_read: skip.elements() as u64, ..Default::default() }
                } else {
                    self.tmem_occupancy = self.tmem_occupancy.saturating_sub(skip.bytes());
                    AccessCounters { tmem_read: skip.elements() as u64, ..Default::default() }
                };
                self.charge_layer(layer, &c);
                let data = match (&input.data, &skip.data) {
                    (Some(a), Some(b)) => Some(crate::refconv::residual_add_tile(a, b, l.quant.relu)?),
                    _ => None,
                };
                if let Some(sc) = skip.core {
                    if sc != in_core {
                        self.free_core(sc);
                    }
                }
                self.emit_trace("residual_add", Some(layer), Some(in_core), Some(in_core));
                self.record_roles(layer, in_core, in_core, skip.core);
                Ok(SimTile { signed: !l.quant.relu, data, ..input })
            }
        }
    }

    fn park(&mut self, add_layer: usize, source: &SimTile) -> Result<SimTile> {
        let l = &self.net.layers[add_layer];
        let parked = match &l.projection {
            Some(Projection { kernel, stride, out_ch, quant }) => {
                // The projection is a real conv pass into a fresh core,
                // charged to the add layer that owns its weights.
                let src_core = source
                    .core
                    .ok_or_else(|| self.violation("projection source not core-resident".into()))?;
                let out_core = self.alloc_core(&[src_core])?;
                let t = self.conv_pass(add_layer, source, *kernel, *stride, *out_ch, quant, out_core)?;
                self.emit_trace("project_skip", Some(add_layer), Some(src_core), Some(out_core));
                t
            }
            None => {
                // Zero-copy park: the source core is simply held.
                self.emit_trace("park_skip", Some(add_layer), source.core, source.core);
                source.clone()
            }
        };
        match self.plan.park_of(add_layer) {
            lpt::ResidualPark::ThirdCore => {
                let core = parked
                    .core
                    .ok_or_else(|| self.violation("parked skip not core-resident".into()))?;
                self.held.insert(add_layer, core);
                Ok(parked)
            }
            lpt::ResidualPark::Tmem => {
                self.charge_layer(add_layer, &AccessCounters {
                    tmem_write: parked.elements() as u64,
                    ..Default::default()
                });
                self.tmem_occupancy += parked.bytes();
                if self.tmem_occupancy > self.geom.tmem_bytes {
                    return Err(self.violation("TMEM overflow while parking a skip".into()));
                }
                if let Some(core) = parked.core {
                    if Some(core) != source.core {
                        self.free_core(core);
                    }
                }
                self.emit_trace("park_skip_tmem", Some(add_layer), None, None);
                Ok(SimTile { core: None, ..parked })
            }
        }
    }

    fn release_park(&mut self, add_layer: usize) {
        self.held.remove(&add_layer);
    }

    fn store_half(&mut self, tile: SimTile) -> Result<SimTile> {
        self.charge_overhead(&AccessCounters {
            tmem_write: tile.elements() as u64,
            ..Default::default()
        });
        self.tmem_occupancy += tile.bytes();
        if self.tmem_occupancy > self.geom.tmem_bytes {
            return Err(self.violation(format!(
                "TMEM overflow: {} bytes stored, capacity {}",
                self.tmem_occupancy,
                self.geom.tmem_bytes
            )));
        }
        if let Some(core) = tile.core {
            self.free_core(core);
            // A held skip moving to TMEM no longer pins its core.
            self.held.retain(|_, c| *c != core);
        }
        self.emit_trace("tc_store", None, None, None);
        Ok(SimTile { core: None, ..tile })
    }

    fn concat(&mut self, stored: SimTile, current: SimTile, axis: ConcatAxis) -> Result<SimTile> {
        let cur_core = current
            .core
            .ok_or_else(|| self.violation("concat target not core-resident".into()))?;
        self.charge_overhead(&AccessCounters {
            tmem_read: stored.elements() as u64,
            icim_write: stored.elements() as u64,
            ..Default::default()
        });
        self.tmem_occupancy = self.tmem_occupancy.saturating_sub(stored.bytes());
        let (h, w) = match axis {
            ConcatAxis::Height => (stored.h + current.h, current.w),
            ConcatAxis::Width => (current.h, stored.w + current.w),
        };
        let data = match (&stored.data, &current.data) {
            (Some(a), Some(b)) => Some(crate::refconv::tile_concat(a, b, axis)?),
            _ => None,
        };
        let tile = SimTile { h, w, c: current.c, signed: current.signed, core: Some(cur_core), data };
        self.occupy(cur_core, tile.bytes())?;
        // Re-pin any held skip that was pointing at the freed stored core:
        // after a pending-skip concat the merged skip lives in cur_core.
        self.emit_trace("tc_concat", None, None, Some(cur_core));
        Ok(tile)
    }

    fn finish_group(&mut self, tile: &SimTile) {
        // The group's output streams onward (tail reduce or off-chip);
        // its core returns to the pool.
        if let Some(core) = tile.core {
            self.free_core(core);
        }
    }
}

/// Closed-form per-tile-execution counters for one layer under the cycle
/// model: one row activation per weight pixel, output row, channel fold,
/// and output-channel group. Residual adds include their projection pass
/// and the skip read.
pub fn count_layer_accesses(
    net: &NetworkSpec,
    geom: &CoreGeometry,
    layer: usize,
    exec: (usize, usize),
) -> AccessCounters {
    let l = &net.layers[layer];
    let mut c = AccessCounters::default();
    match l.kind {
        LayerKind::Input => {}
        LayerKind::Conv | LayerKind::Fc => {
            c = conv_counters(geom, l.kernel, l.in_channels, l.out_channels, exec, l.stride);
        }
        LayerKind::PoolMax | LayerKind::PoolAvg => {
            let folds = l.in_channels.div_ceil(geom.channel_depth) as u64;
            let (oh, ow) = lpt::output_tile_dims(net, layer, exec);
            c.ocim_read = (exec.0 * exec.1 * l.in_channels) as u64;
            c.ocim_write = (oh * ow * l.in_channels) as u64;
            c.cycles = exec.0 as u64 * folds;
        }
        LayerKind::ResidualAdd => {
            c.ocim_read = (exec.0 * exec.1 * net.shapes()[layer].c) as u64;
            if let Some(p) = &l.projection {
                let skip_in = net.skip_in_channels(layer);
                let src_tile = (exec.0 * p.stride, exec.1 * p.stride);
                c.add(&conv_counters(geom, p.kernel, skip_in, p.out_ch, src_tile, p.stride));
            }
        }
    }
    c
}

/// Analytic counter totals for a full run: per-layer closed forms times
/// segment execution counts, plus TC, parking, input-load, and readout
/// overheads. `simulate` must agree with this exactly.
pub fn expected_counters(net: &NetworkSpec, plan: &SchedulePlan, geom: &CoreGeometry) -> CounterSet {
    let mut cs = CounterSet::new(net.layers.len());
    let segs = plan.segments(net);
    let n_levels = plan.tc_events.len();
    let groups =
        (plan.tile_grid.0 / plan.group_shape.0) as u64 * (plan.tile_grid.1 / plan.group_shape.1) as u64;
    let execs = |seg: usize| groups * (1u64 << (n_levels - seg));
    let pre_tail = plan.tail_start.unwrap_or(net.layers.len());
    let seg_of = |layer: usize| segs.iter().position(|r| r.contains(&layer)).unwrap();

    // Main-path compute per layer.
    for (si, seg) in segs.iter().enumerate() {
        for i in seg.clone() {
            let l = &net.layers[i];
            let exec = plan.exec_tile(i);
            let c = match l.kind {
                LayerKind::ResidualAdd => {
                    // Skip-read only; the projection is charged at its park
                    // point below. Spilled parks read from TMEM instead.
                    let elems = (exec.0 * exec.1 * net.shapes()[i].c) as u64;
                    match plan.park_of(i) {
                        lpt::ResidualPark::ThirdCore => {
                            AccessCounters { ocim_read: elems, ..Default::default() }
                        }
                        lpt::ResidualPark::Tmem => {
                            AccessCounters { tmem_read: elems, ..Default::default() }
                        }
                    }
                }
                _ => count_layer_accesses(net, geom, i, exec),
            };
            cs.per_layer[i].add(&c.scale(execs(si)));
        }
    }

    // Residual parking: projection passes, TMEM spill writes, and TC
    // traffic of skips pending across concatenation boundaries.
    for (src, tgt) in net.residual_edges() {
        if tgt >= pre_tail {
            continue;
        }
        let l = &net.layers[tgt];
        let src_seg = seg_of(src);
        let tgt_seg = seg_of(tgt);
        let park_seg = if src == segs[src_seg].end - 1 && src_seg + 1 < segs.len() {
            src_seg + 1
        } else {
            src_seg
        };
        // Parked dims at park time: the add's exec tile with the doublings
        // between park and add undone.
        let parked_at = |up_to: usize| {
            let mut e = plan.exec_tile(tgt);
            for lev in up_to..tgt_seg {
                match plan.tc_events[lev].axis {
                    ConcatAxis::Height => e.0 /= 2,
                    ConcatAxis::Width => e.1 /= 2,
                }
            }
            e
        };
        let parked_c = net.shapes()[tgt].c;

        if let Some(p) = &l.projection {
            let parked = parked_at(park_seg);
            let src_tile = (parked.0 * p.stride, parked.1 * p.stride);
            let skip_in = net.skip_in_channels(tgt);
            let c = conv_counters(geom, p.kernel, skip_in, p.out_ch, src_tile, p.stride);
            cs.per_layer[tgt].add(&c.scale(execs(park_seg)));
        }
        if plan.park_of(tgt) == lpt::ResidualPark::Tmem {
            let parked = parked_at(park_seg);
            let elems = (parked.0 * parked.1 * parked_c) as u64;
            cs.per_layer[tgt].add(
                &AccessCounters { tmem_write: elems, ..Default::default() }.scale(execs(park_seg)),
            );
        }
        // Pending halves stored and re-placed at each crossed TC level.
        for lev in park_seg..tgt_seg {
            let post = parked_at(lev + 1);
            let half = match plan.tc_events[lev].axis {
                ConcatAxis::Height => (post.0 / 2, post.1),
                ConcatAxis::Width => (post.0, post.1 / 2),
            };
            let elems = (half.0 * half.1 * parked_c) as u64;
            let t = AccessCounters {
                tmem_write: elems,
                tmem_read: elems,
                icim_write: elems,
                ..Default::default()
            };
            cs.overhead.add(&t.scale(execs(lev + 1)));
        }
    }

    // TC main-half traffic: per join at level l the first half's output
    // moves through TMEM and lands next to the current half.
    for lev in 1..=n_levels {
        let last = segs[lev - 1].end - 1;
        let t = &plan.per_layer[last];
        let elems = (t.out_h * t.out_w * t.channels) as u64;
        let c = AccessCounters {
            tmem_write: elems,
            tmem_read: elems,
            icim_write: elems,
            ..Default::default()
        };
        cs.overhead.add(&c.scale(execs(lev)));
    }

    // Input tile loads.
    if pre_tail > 0 {
        let elems = (plan.input_tile.0 * plan.input_tile.1 * net.input_shape.c) as u64;
        cs.overhead.add(
            &AccessCounters { offchip_read: elems, ocim_write: elems, ..Default::default() }
                .scale(execs(0)),
        );
    } else {
        let elems = net.input_shape.elements() as u64;
        cs.overhead
            .add(&AccessCounters { offchip_read: elems, ocim_write: elems, ..Default::default() });
    }

    // Tail: the global reduce streams every group output once; remaining
    // tail layers run once at map scale.
    if let Some(tail) = plan.tail_start {
        let reduce_in = if tail == 0 { net.input_shape } else { net.shapes()[tail - 1] };
        let folds = reduce_in.c.div_ceil(geom.channel_depth) as u64;
        cs.per_layer[tail].add(&AccessCounters {
            ocim_read: reduce_in.elements() as u64,
            ocim_write: net.shapes()[tail].elements() as u64,
            cycles: reduce_in.h as u64 * folds,
            ..Default::default()
        });
        for i in tail + 1..net.layers.len() {
            let inp = net.input_shape_of(i);
            cs.per_layer[i].add(&count_layer_accesses(net, geom, i, (inp.h, inp.w)));
        }
    }

    // Result readout.
    cs.overhead.add(&AccessCounters {
        offchip_write: net.output_shape().elements() as u64,
        ..Default::default()
    });

    let mut total = cs.overhead;
    for l in &cs.per_layer {
        total.add(l);
    }
    cs.total = total;
    cs
}

/// Runs the architectural simulation. In full mode the output is bitwise
/// comparable to the golden model; in count-only mode values are skipped
/// and only counters, cycles, and roles are produced.
pub fn simulate(
    net: &NetworkSpec,
    plan: &SchedulePlan,
    geom: &CoreGeometry,
    cfg: &WeightGenConfig,
    mask: &Supermask,
    input: Option<&QTensor>,
    opts: SimOptions,
) -> Result<SimResult> {
    mask.matches(net)?;
    plan.check_against(net)?;
    if !opts.count_only && input.is_none() {
        return Err(Error::InvalidArg("full simulation requires an input tensor".into()));
    }
    if let (false, Some(inp)) = (opts.count_only, input) {
        if inp.shape() != net.input_shape {
            return Err(Error::PlanMismatch(format!(
                "input {} does not match network input {}",
                inp.shape(),
                net.input_shape
            )));
        }
    }

    let mask_index: HashMap<usize, usize> = net
        .weighted_layers()
        .into_iter()
        .enumerate()
        .map(|(j, li)| (li, j))
        .collect();

    let mut v = SimVisitor {
        net,
        plan,
        geom,
        cfg,
        mask,
        input: if opts.count_only { None } else { input },
        opts,
        counters: CounterSet::new(net.layers.len()),
        core_used: vec![0; geom.core_count],
        held: HashMap::new(),
        tmem_occupancy: 0,
        step: 0,
        first_pass_roles: Vec::new(),
        recording_first_pass: true,
        trace: Vec::new(),
        mask_index,
    };

    let group_outputs = lpt::walk_schedule(net, plan, &mut v)?;
    v.recording_first_pass = false;

    let mut output: Option<QTensor> = None;
    if let Some(tail) = plan.tail_start {
        // Global reduce: every group output streams through the NMP once,
        // accumulating in NMP-side registers (modeled outside the 72 KB
        // activation budget; the classifier head is not tiled).
        let l = &net.layers[tail];
        debug_assert!(is_global_reduce(net, tail));
        let reduce_in = if tail == 0 { net.input_shape } else { net.shapes()[tail - 1] };
        let folds = reduce_in.c.div_ceil(geom.channel_depth) as u64;
        v.charge_layer(tail, &AccessCounters {
            ocim_read: reduce_in.elements() as u64,
            ocim_write: net.shapes()[tail].elements() as u64,
            cycles: reduce_in.h as u64 * folds,
            ..Default::default()
        });

        let mut cur: Option<QTensor> = if !opts.count_only {
            let ch = reduce_in.c;
            let mut acc = vec![0i64; ch];
            let mut mx = vec![0i32; ch];
            for (_, t) in &group_outputs {
                if let Some(d) = &t.data {
                    for val_idx in 0..d.values.len() {
                        let cc = val_idx % ch;
                        let x = d.values[val_idx];
                        acc[cc] += x as i64;
                        mx[cc] = mx[cc].max(x);
                    }
                }
            }
            let k2 = (l.kernel * l.kernel) as i64;
            let vals: Vec<i32> = if l.kind == LayerKind::PoolMax {
                mx
            } else {
                acc.iter().map(|s| (s / k2) as i32).collect()
            };
            Some(QTensor {
                height: 1,
                width: 1,
                channels: ch,
                bit_width: 8,
                signed: group_outputs.first().is_some_and(|(_, t)| t.signed),
                values: vals,
            })
        } else {
            None
        };

        let mut produced: Vec<Option<QTensor>> = vec![cur.clone()];
        for i in tail + 1..net.layers.len() {
            let li = &net.layers[i];
            let inp_shape = net.input_shape_of(i);
            let c = count_layer_accesses(net, geom, i, (inp_shape.h, inp_shape.w));
            v.charge_layer(i, &c);
            if let Some(ref cur_t) = cur {
                let w = materialize_layer_weights(net, cfg, mask, i);
                let skip = match li.kind {
                    LayerKind::ResidualAdd => {
                        let src = li.source.unwrap();
                        if src < tail {
                            return Err(Error::PlanMismatch(format!(
                                "residual edge ({src}, {i}) crosses into the global tail"
                            )));
                        }
                        produced[src - tail]
                            .as_ref()
                            .map(|t| crate::refconv::skip_operand(net, &w, i, t))
                    }
                    _ => None,
                };
                cur = Some(crate::refconv::exec_layer_tile(net, &w, i, cur_t, skip.as_ref())?);
            }
            produced.push(cur.clone());
        }
        output = cur;
    } else if !opts.count_only {
        // No tail: stitch group outputs back into the final map.
        let out_shape = net.output_shape();
        let (gth, gtw) = plan.group_output_tile(net);
        let mut map = QTensor {
            height: out_shape.h,
            width: out_shape.w,
            channels: out_shape.c,
            bit_width: 8,
            signed: group_outputs.first().is_some_and(|(_, t)| t.signed),
            values: vec![0; out_shape.elements()],
        };
        for ((gi, gj), t) in &group_outputs {
            if let Some(d) = &t.data {
                let (h0, w0) = (gi * gth, gj * gtw);
                for h in 0..d.height {
                    for w in 0..d.width {
                        let dst = map.idx(h0 + h, w0 + w, 0);
                        let src = d.idx(h, w, 0);
                        map.values[dst..dst + d.channels]
                            .copy_from_slice(&d.values[src..src + d.channels]);
                    }
                }
            }
        }
        output = Some(map);
    }

    v.charge_overhead(&AccessCounters {
        offchip_write: net.output_shape().elements() as u64,
        ..Default::default()
    });

    debug_assert!(v.counters.sum_check());
    let trace = if v.opts.trace { Some(std::mem::take(&mut v.trace)) } else { None };
    Ok(SimResult {
        output,
        counters: v.counters,
        first_pass_roles: v.first_pass_roles,
        trace,
    })
}

/// Materializes the weights of a single layer (tail layers execute at map
/// scale through the golden helpers).
fn materialize_layer_weights(
    net: &NetworkSpec,
    cfg: &WeightGenConfig,
    mask: &Supermask,
    layer: usize,
) -> crate::hnn::MaskedWeights {
    let mut layers: Vec<Option<WeightTensor>> = vec![None; net.layers.len()];
    let weighted = net.weighted_layers();
    if let Some(j) = weighted.iter().position(|li| *li == layer) {
        let l = &net.layers[layer];
        let (k, cin, cout) = match l.kind {
            LayerKind::ResidualAdd => {
                let p = l.projection.as_ref().unwrap();
                (p.kernel, net.skip_in_channels(layer), p.out_ch)
            }
            _ => (l.kernel, l.in_channels, l.out_channels),
        };
        let ml = &mask.layers[j];
        let mut values = vec![0i32; k * k * cin * cout];
        for (idx, val) in values.iter_mut().enumerate() {
            if ml.get(idx) {
                let co = idx % cout;
                let ci = (idx / cout) % cin;
                let kw = (idx / (cout * cin)) % k;
                let kh = idx / (cout * cin * k);
                *val = generate_weight(cfg, layer, (kh, kw, ci, co));
            }
        }
        layers[layer] = Some(WeightTensor { kernel: k, in_channels: cin, out_channels: cout, values });
    }
    crate::hnn::MaskedWeights { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnn::{materialize, Supermask, WeightGenConfig};
    use crate::lpt::plan_lpt;
    use crate::netspec::{builtin_network, LayerSpec, QuantSpec, Shape};
    use crate::refconv::run_reference;

    fn geom() -> CoreGeometry {
        CoreGeometry::default()
    }

    pub(crate) fn random_input(net: &NetworkSpec, seed: u64) -> QTensor {
        let s = net.input_shape;
        let mut t = QTensor::zeros(s.h, s.w, s.c);
        for (i, v) in t.values.iter_mut().enumerate() {
            let mut x = seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
            x ^= x >> 30;
            x = x.wrapping_mul(0xbf58476d1ce4e5b9);
            x ^= x >> 27;
            *v = (x % 256) as i32;
        }
        t
    }

    #[test]
    fn toy_vgg_matches_golden_bitwise() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(42, &net, 0.5).unwrap();
        let input = random_input(&net, 7);

        let weights = materialize(&cfg, &mask, &net).unwrap();
        let golden = run_reference(&net, &weights, &input, &plan).unwrap();
        let sim = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        assert_eq!(sim.output.unwrap(), golden.output);
    }

    #[test]
    fn toy_vgg_roles_alternate_with_zero_tmem() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(1, &net, 0.5).unwrap();
        let sim =
            simulate(&net, &plan, &g, &cfg, &mask, None, SimOptions { count_only: true, trace: false })
                .unwrap();
        assert_eq!(sim.first_pass_roles.len(), 12);
        for pair in sim.first_pass_roles.windows(2) {
            assert_eq!(pair[1].icim, pair[0].ocim, "activation locality between layers");
            assert_ne!(pair[0].icim, pair[0].ocim);
        }
        assert_eq!(sim.counters.total.tmem_read, 0);
        assert_eq!(sim.counters.total.tmem_write, 0);
    }

    #[test]
    fn counters_match_analytic_model() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(3, &net, 0.4).unwrap();
        let sim =
            simulate(&net, &plan, &g, &cfg, &mask, None, SimOptions { count_only: true, trace: false })
                .unwrap();
        let want = expected_counters(&net, &plan, &g);
        assert_eq!(sim.counters.per_layer, want.per_layer);
        assert_eq!(sim.counters.overhead, want.overhead);
        assert_eq!(sim.counters.total, want.total);
        assert!(sim.counters.sum_check());
    }

    #[test]
    fn single_conv_pass_counts() {
        // One conv3x3 on a 16x8x128 tile with 8 output channels: 3*3 pixel
        // passes x 16 rows x 1 fold x 1 group = 144 row activations; element
        // reads are 9x the tile.
        let net = NetworkSpec::new(
            Shape { h: 16, w: 8, c: 128 },
            vec![LayerSpec::conv(3, 1, 8, QuantSpec::identity())],
        )
        .unwrap();
        let g = geom();
        let c = count_layer_accesses(&net, &g, 0, (16, 8));
        assert_eq!(c.cycles, 144);
        assert_eq!(c.icim_read, 9 * 16 * 8 * 128);
        assert_eq!(c.ocim_write, 16 * 8 * 8);
        let net1 = NetworkSpec::new(
            Shape { h: 16, w: 8, c: 128 },
            vec![LayerSpec::conv(1, 1, 8, QuantSpec::identity())],
        )
        .unwrap();
        let c1 = count_layer_accesses(&net1, &g, 0, (16, 8));
        // K=1: 16 row activations per output-channel group.
        assert_eq!(c1.cycles, 16);
        assert_eq!(c.cycles, 9 * c1.cycles);
    }

    /// Two residual blocks that force multi-tile execution, a projection
    /// shortcut, a TC event at the first block's add, and an identity skip
    /// whose source is the TC boundary itself (the alias park path).
    fn tc_exercise_net() -> NetworkSpec {
        let q = |relu| QuantSpec::per_layer(1, 7, relu);
        NetworkSpec::new(
            Shape { h: 64, w: 64, c: 4 },
            vec![
                LayerSpec::conv(3, 1, 32, q(true)),                 // 0
                LayerSpec::conv(1, 1, 32, q(true)),                 // 1 block input
                LayerSpec::conv(3, 2, 64, q(true)),                 // 2 strided
                LayerSpec::conv(1, 1, 64, q(false)),                // 3
                LayerSpec::residual_add(
                    1,
                    q(true),
                    Some(crate::netspec::Projection {
                        kernel: 1,
                        stride: 2,
                        out_ch: 64,
                        quant: q(false),
                    }),
                ),                                                   // 4 <- TC placed here
                LayerSpec::conv(1, 1, 64, q(true)),                 // 5
                LayerSpec::conv(3, 1, 64, q(false)),                // 6
                LayerSpec::residual_add(4, q(true), None),          // 7 alias park of the concat
                LayerSpec::conv(3, 1, 32, q(true)),                 // 8
            ],
        )
        .unwrap()
    }

    #[test]
    fn tc_network_matches_golden_bitwise() {
        let net = tc_exercise_net();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        assert!(!plan.tc_events.is_empty(), "plan must exercise TC");
        assert!(plan.tile_grid.0 * plan.tile_grid.1 > 1, "plan must be multi-tile");
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(9, &net, 0.6).unwrap();
        let input = random_input(&net, 3);

        let weights = materialize(&cfg, &mask, &net).unwrap();
        let golden = run_reference(&net, &weights, &input, &plan).unwrap();
        assert_eq!(golden.output, *golden.layer_maps.last().unwrap(), "order invariance");

        let sim = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        assert_eq!(sim.output.unwrap(), golden.output, "simulator vs golden");

        let want = expected_counters(&net, &plan, &g);
        assert_eq!(sim.counters.total, want.total);
        assert_eq!(sim.counters.per_layer, want.per_layer);
    }

    #[test]
    fn tc_network_matches_golden_under_strided_placement() {
        use crate::lpt::{plan_lpt_opts, PlannerOptions, TcPlacement};
        let net = tc_exercise_net();
        let g = geom();
        let plan = plan_lpt_opts(
            &net,
            &g,
            &PlannerOptions { tc_placement: TcPlacement::AfterStridedOp, ..Default::default() },
        )
        .unwrap();
        assert!(!plan.tc_events.is_empty());
        // Mid-block TC: the projected skip is pending across the join.
        assert!(plan.tc_events.iter().any(|e| e.after_layer == 2), "TC right after the strided conv");
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(17, &net, 0.4).unwrap();
        let input = random_input(&net, 23);

        let weights = materialize(&cfg, &mask, &net).unwrap();
        let golden = run_reference(&net, &weights, &input, &plan).unwrap();
        let sim = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        assert_eq!(sim.output.unwrap(), golden.output);

        let want = expected_counters(&net, &plan, &g);
        assert_eq!(sim.counters.total, want.total);
    }

    #[test]
    fn tc_after_standalone_pool_matches_golden() {
        // A shrink outside any residual block places the TC immediately
        // after the shrinking layer.
        let q = |relu| QuantSpec::per_layer(1, 7, relu);
        let net = NetworkSpec::new(
            Shape { h: 32, w: 32, c: 8 },
            vec![
                LayerSpec::conv(3, 1, 32, q(true)),
                LayerSpec::pool_max(3, 2),
                LayerSpec::conv(3, 1, 32, q(true)),
                LayerSpec::conv(3, 1, 32, q(false)),
            ],
        )
        .unwrap();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        assert!(plan.tc_events.iter().any(|e| e.after_layer == 1), "TC right after the pool");
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(2, &net, 0.5).unwrap();
        let input = random_input(&net, 31);
        let weights = materialize(&cfg, &mask, &net).unwrap();
        let golden = run_reference(&net, &weights, &input, &plan).unwrap();
        let sim = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        assert_eq!(sim.output.unwrap(), golden.output);
        let want = expected_counters(&net, &plan, &g);
        assert_eq!(sim.counters.total, want.total);
    }

    #[test]
    fn count_only_counters_equal_full_run_counters() {
        let net = tc_exercise_net();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(5, &net, 0.5).unwrap();
        let input = random_input(&net, 11);
        let full = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        let count =
            simulate(&net, &plan, &g, &cfg, &mask, None, SimOptions { count_only: true, trace: false })
                .unwrap();
        assert_eq!(full.counters.total, count.counters.total);
        assert_eq!(full.counters.per_layer, count.counters.per_layer);
    }

    #[test]
    fn empty_network_moves_data_without_compute() {
        let net = NetworkSpec::new(
            Shape { h: 8, w: 8, c: 4 },
            vec![LayerSpec {
                kind: LayerKind::Input,
                kernel: 1,
                stride: 1,
                in_channels: 0,
                out_channels: 0,
                padding_mode: crate::netspec::PaddingMode::Block,
                quant: QuantSpec::identity(),
                source: None,
                projection: None,
            }],
        )
        .unwrap();
        let g = geom();
        let plan = plan_lpt(&net, &g).unwrap();
        let cfg = WeightGenConfig::default();
        let mask = Supermask::random(0, &net, 0.5).unwrap();
        let input = random_input(&net, 1);
        let sim = simulate(&net, &plan, &g, &cfg, &mask, Some(&input), SimOptions::default()).unwrap();
        assert_eq!(sim.output.unwrap(), input);
        let t = sim.counters.total;
        assert_eq!(t.cycles, 0);
        assert_eq!(t.icim_read, 0);
        assert_eq!(t.tmem_read + t.tmem_write, 0);
        assert_eq!(t.wbuf_access + t.mmem_read, 0);
        assert!(t.offchip_read > 0 && t.ocim_write > 0);
    }
}
