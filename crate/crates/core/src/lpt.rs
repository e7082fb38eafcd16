//! Layer-penetrative tiling: the schedule planner, the schedule walker that
//! every executor shares, and the analytic footprint / access models.
//!
//! A plan fixes one input tile size and penetrates every layer with it.
//! Spatially-shrinking layers (stride > 1, pooling) trigger tile
//! concatenation (TC): the shrunk output of one unit is stored in TMEM, the
//! adjacent unit is computed from layer 1 up to the same point, and the two
//! halves concatenate to double the tile extent before execution continues.

use crate::error::{Error, Result};
use crate::netspec::{
    is_global_reduce, ConcatAxis, CoreGeometry, LayerKind, NetworkSpec, Shape,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Where the planner places a TC event relative to the tile shrink that
/// requested it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcPlacement {
    /// After the residual add of the enclosing block (avoids concatenating
    /// both the main and the skip path).
    AfterResidualAdd,
    /// Immediately after the strided operation.
    AfterStridedOp,
}

#[derive(Clone, Copy, Debug)]
pub struct PlannerOptions {
    pub tc_placement: TcPlacement,
    /// Warn when a conv with K >= 3 executes on a tile thinner than this.
    pub min_viable_extent: usize,
    /// Emit plans whose TMEM demand exceeds the hardware capacity instead
    /// of failing; used to cost out rejected placement policies.
    pub allow_tmem_overflow: bool,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            tc_placement: TcPlacement::AfterResidualAdd,
            min_viable_extent: 4,
            allow_tmem_overflow: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcEvent {
    pub after_layer: usize,
    pub axis: ConcatAxis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPark {
    ThirdCore,
    Tmem,
}

/// Tile dims around one layer: the tile it executes on, the tile it
/// produces, and the resident tile after any TC event at this layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiles {
    pub exec_h: usize,
    pub exec_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub post_h: usize,
    pub post_w: usize,
    pub channels: usize,
}

impl LayerTiles {
    pub fn out_bytes(&self) -> usize {
        self.out_h * self.out_w * self.channels
    }

    pub fn post_bytes(&self) -> usize {
        self.post_h * self.post_w * self.channels
    }
}

/// Canonical core-role record for one layer of a single-tile pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleStep {
    pub layer: usize,
    pub icim: u8,
    pub ocim: u8,
    pub hold: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub input_tile: (usize, usize),
    /// Input map tiling (rows, cols).
    pub tile_grid: (usize, usize),
    /// Input tiles covered by one fully-concatenated group (rows, cols).
    pub group_shape: (usize, usize),
    pub per_layer: Vec<LayerTiles>,
    pub tc_events: Vec<TcEvent>,
    /// Park location per residual edge, keyed by the add layer.
    pub residual_buffering: Vec<(usize, ResidualPark)>,
    /// Canonical role sequence of one tile pass (iCIM/oCIM/holder ids).
    pub core_roles: Vec<RoleStep>,
    pub tmem_bytes_required: usize,
    /// Layer ranges restarted from layer 0 for each TC level.
    pub recompute_segments: Vec<(usize, usize)>,
    /// First layer of the cross-tile tail (global reduce onward), if any.
    pub tail_start: Option<usize>,
    pub min_tile_warnings: Vec<String>,
}

impl SchedulePlan {
    /// Pre-tail segment ranges delimited by the TC events.
    pub fn segments(&self, net: &NetworkSpec) -> Vec<std::ops::Range<usize>> {
        let end = self.tail_start.unwrap_or(net.layers.len());
        let mut segs = Vec::with_capacity(self.tc_events.len() + 1);
        let mut start = 0usize;
        for e in &self.tc_events {
            segs.push(start..e.after_layer + 1);
            start = e.after_layer + 1;
        }
        segs.push(start..end);
        segs
    }

    /// Tile dims layer `i` executes on.
    pub fn exec_tile(&self, i: usize) -> (usize, usize) {
        (self.per_layer[i].exec_h, self.per_layer[i].exec_w)
    }

    /// Tile dims of the pre-projection skip operand consumed by add `i`
    /// (the projection stride blows the add's tile back up to source scale).
    pub fn skip_tile(&self, net: &NetworkSpec, i: usize) -> (usize, usize) {
        let t = &self.per_layer[i];
        let s = net.layers[i].projection.as_ref().map_or(1, |p| p.stride);
        (t.exec_h * s, t.exec_w * s)
    }

    pub fn park_of(&self, add_layer: usize) -> ResidualPark {
        self.residual_buffering
            .iter()
            .find(|(l, _)| *l == add_layer)
            .map(|(_, p)| *p)
            .unwrap_or(ResidualPark::ThirdCore)
    }

    /// Output tile dims of the last pre-tail layer (one group's output).
    pub fn group_output_tile(&self, net: &NetworkSpec) -> (usize, usize) {
        let end = self.tail_start.unwrap_or(net.layers.len());
        if end == 0 {
            self.input_tile
        } else {
            let t = &self.per_layer[end - 1];
            (t.post_h, t.post_w)
        }
    }

    /// Cheap structural consistency check before running against a network.
    pub fn check_against(&self, net: &NetworkSpec) -> Result<()> {
        if self.per_layer.len() != net.layers.len() {
            return Err(Error::PlanMismatch(format!(
                "plan covers {} layers, network has {}",
                self.per_layer.len(),
                net.layers.len()
            )));
        }
        if !net.input_shape.h.is_multiple_of(self.input_tile.0) || !net.input_shape.w.is_multiple_of(self.input_tile.1) {
            return Err(Error::PlanMismatch("input tile does not divide the input map".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One input tile's place in the grid.
#[derive(Clone, Copy, Debug)]
pub struct TileRegion {
    pub tile_r: usize,
    pub tile_c: usize,
    pub tile_h: usize,
    pub tile_w: usize,
}

impl TileRegion {
    /// Pixel bounds (h0, w0, h1, w1) on the input map.
    pub fn pixel_bounds(&self) -> (usize, usize, usize, usize) {
        (
            self.tile_r * self.tile_h,
            self.tile_c * self.tile_w,
            (self.tile_r + 1) * self.tile_h,
            (self.tile_c + 1) * self.tile_w,
        )
    }
}

/// Executor hooks for one pass over the LPT schedule. The walker owns the
/// traversal order, TC pairing, and residual bookkeeping; visitors supply
/// the tile representation (values for executors, dims for analysis).
pub trait ScheduleVisitor {
    type Tile: Clone;

    /// Materialize one input tile.
    fn load_input(&mut self, region: &TileRegion) -> Result<Self::Tile>;

    /// Execute layer `layer` on `input`; `skip` is the parked (already
    /// projected) operand for residual adds.
    fn exec_layer(&mut self, layer: usize, input: Self::Tile, skip: Option<Self::Tile>)
        -> Result<Self::Tile>;

    /// Park the skip operand for `add_layer`, applying the edge projection.
    fn park(&mut self, add_layer: usize, source: &Self::Tile) -> Result<Self::Tile>;

    /// Release a parked skip that was consumed by its add.
    fn release_park(&mut self, _add_layer: usize) {}

    /// Move a completed half (main tile or pending skip) into TMEM.
    fn store_half(&mut self, tile: Self::Tile) -> Result<Self::Tile>;

    /// Retrieve a stored half and concatenate with the current one;
    /// `stored` occupies the lower index range.
    fn concat(&mut self, stored: Self::Tile, current: Self::Tile, axis: ConcatAxis)
        -> Result<Self::Tile>;

    /// A group finished; its output tile streams onward.
    fn finish_group(&mut self, _tile: &Self::Tile) {}
}

/// Group outputs keyed by group grid position.
pub type GroupOutputs<T> = Vec<((usize, usize), T)>;

type UnitResult<T> = (T, BTreeMap<usize, Pending<T>>);

enum Pending<T> {
    Parked(T),
    /// The skip is the segment input itself (source was the last layer
    /// before a TC); resolved to a park at the next segment entry.
    AliasOfMain,
}

struct WalkCtx<'a> {
    segments: Vec<std::ops::Range<usize>>,
    axes: Vec<ConcatAxis>,
    /// source layer -> add layers
    sources: BTreeMap<usize, Vec<usize>>,
    plan: &'a SchedulePlan,
}

/// Runs the full schedule, returning each group's output tile keyed by the
/// group position in the (groups_r, groups_c) grid.
pub fn walk_schedule<V: ScheduleVisitor>(
    net: &NetworkSpec,
    plan: &SchedulePlan,
    v: &mut V,
) -> Result<GroupOutputs<V::Tile>> {
    plan.check_against(net)?;
    let segments = plan.segments(net);
    let mut sources: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let pre_tail = plan.tail_start.unwrap_or(net.layers.len());
    for (src, tgt) in net.residual_edges() {
        if tgt < pre_tail {
            sources.entry(src).or_default().push(tgt);
        }
    }
    let ctx = WalkCtx { segments, axes: plan.tc_events.iter().map(|e| e.axis).collect(), sources, plan };

    let (gr, gc) = plan.group_shape;
    let (tr, tc) = plan.tile_grid;
    if pre_tail == 0 {
        return Ok(Vec::new());
    }
    let mut outputs = Vec::new();
    for gi in 0..tr / gr {
        for gj in 0..tc / gc {
            let levels = ctx.axes.len();
            let (tile, skips) = unit(net, &ctx, v, levels, gi * gr, gj * gc)?;
            if !skips.is_empty() {
                return Err(Error::PlanMismatch("unconsumed residual skips at group end".into()));
            }
            v.finish_group(&tile);
            outputs.push(((gi, gj), tile));
        }
    }
    Ok(outputs)
}

fn unit<V: ScheduleVisitor>(
    net: &NetworkSpec,
    ctx: &WalkCtx,
    v: &mut V,
    level: usize,
    tile_r: usize,
    tile_c: usize,
) -> Result<UnitResult<V::Tile>> {
    if level == 0 {
        let region = TileRegion {
            tile_r,
            tile_c,
            tile_h: ctx.plan.input_tile.0,
            tile_w: ctx.plan.input_tile.1,
        };
        let t = v.load_input(&region)?;
        let mut skips = BTreeMap::new();
        let t = exec_segment(net, ctx, v, 0, t, &mut skips)?;
        return Ok((t, skips));
    }

    let axis = ctx.axes[level - 1];
    // Extent of a level-(l-1) sub-unit along each axis, in input tiles.
    let sub_rows = ctx.axes[..level - 1].iter().filter(|a| **a == ConcatAxis::Height).count();
    let sub_cols = ctx.axes[..level - 1].iter().filter(|a| **a == ConcatAxis::Width).count();
    let (dr, dc) = match axis {
        ConcatAxis::Height => (1usize << sub_rows, 0),
        ConcatAxis::Width => (0, 1usize << sub_cols),
    };

    let (tile_a, skips_a) = unit(net, ctx, v, level - 1, tile_r, tile_c)?;
    let stored_main = v.store_half(tile_a)?;
    let mut stored_skips: BTreeMap<usize, Pending<V::Tile>> = BTreeMap::new();
    for (tgt, p) in skips_a {
        let stored = match p {
            Pending::Parked(t) => Pending::Parked(v.store_half(t)?),
            Pending::AliasOfMain => Pending::AliasOfMain,
        };
        stored_skips.insert(tgt, stored);
    }

    let (tile_b, mut skips_b) = unit(net, ctx, v, level - 1, tile_r + dr, tile_c + dc)?;

    let mut merged: BTreeMap<usize, Pending<V::Tile>> = BTreeMap::new();
    for (tgt, pa) in stored_skips {
        let pb = skips_b.remove(&tgt).ok_or_else(|| {
            Error::PlanMismatch(format!("skip for add {tgt} missing in second half"))
        })?;
        let m = match (pa, pb) {
            (Pending::Parked(a), Pending::Parked(b)) => Pending::Parked(v.concat(a, b, axis)?),
            (Pending::AliasOfMain, Pending::AliasOfMain) => Pending::AliasOfMain,
            _ => return Err(Error::PlanMismatch(format!("inconsistent skip halves for add {tgt}"))),
        };
        merged.insert(tgt, m);
    }
    if !skips_b.is_empty() {
        return Err(Error::PlanMismatch("skip present only in second half".into()));
    }

    let joined = v.concat(stored_main, tile_b, axis)?;
    let out = exec_segment(net, ctx, v, level, joined, &mut merged)?;
    Ok((out, merged))
}

fn exec_segment<V: ScheduleVisitor>(
    net: &NetworkSpec,
    ctx: &WalkCtx,
    v: &mut V,
    seg: usize,
    input: V::Tile,
    skips: &mut BTreeMap<usize, Pending<V::Tile>>,
) -> Result<V::Tile> {
    let range = ctx.segments[seg].clone();
    let mut cur = input;

    // Aliased skips become real parks of the (post-concat) segment input.
    let aliases: Vec<usize> = skips
        .iter()
        .filter(|(_, p)| matches!(p, Pending::AliasOfMain))
        .map(|(t, _)| *t)
        .collect();
    for tgt in aliases {
        let parked = v.park(tgt, &cur)?;
        skips.insert(tgt, Pending::Parked(parked));
    }

    let last = range.end.saturating_sub(1);
    for i in range {
        let skip = if net.layers[i].kind == LayerKind::ResidualAdd {
            match skips.remove(&i) {
                Some(Pending::Parked(t)) => {
                    v.release_park(i);
                    Some(t)
                }
                _ => {
                    return Err(Error::PlanMismatch(format!(
                        "residual add at layer {i} has no parked skip"
                    )))
                }
            }
        } else {
            None
        };
        cur = v.exec_layer(i, cur, skip)?;
        if let Some(targets) = ctx.sources.get(&i) {
            for &tgt in targets {
                if i == last && ctx.segments.len() > seg + 1 {
                    // Source output is about to be concatenated; the skip is
                    // the concat result, parked at the next segment entry.
                    skips.insert(tgt, Pending::AliasOfMain);
                } else {
                    let parked = v.park(tgt, &cur)?;
                    skips.insert(tgt, Pending::Parked(parked));
                }
            }
        }
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Size-only visitor: drives TMEM accounting, liveness, and plan validation.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SizeTile {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// The add layer this tile is parked for, when it is a skip operand.
    pub parked_for: Option<usize>,
}

impl SizeTile {
    pub fn bytes(&self) -> usize {
        self.h * self.w * self.c
    }
}

pub(crate) struct SizeVisitor<'a> {
    net: &'a NetworkSpec,
    plan: &'a SchedulePlan,
    pub tmem_occupancy: usize,
    pub tmem_max: usize,
    /// Parked skip bytes currently resident in cores.
    core_parked: Vec<(usize, usize)>, // (add layer, bytes)
    tmem_parked: Vec<(usize, usize)>,
    /// max over steps of (largest core-resident tile + TMEM occupancy)
    pub max_live: usize,
    pub per_layer_live: Vec<usize>,
    /// largest simultaneous count of distinct core-resident tensors
    pub max_core_tensors: usize,
}

impl<'a> SizeVisitor<'a> {
    pub fn new(net: &'a NetworkSpec, plan: &'a SchedulePlan) -> Self {
        SizeVisitor {
            net,
            plan,
            tmem_occupancy: 0,
            tmem_max: 0,
            core_parked: Vec::new(),
            tmem_parked: Vec::new(),
            max_live: 0,
            per_layer_live: vec![0; net.layers.len()],
            max_core_tensors: 0,
        }
    }

    fn note_step(&mut self, layer: usize, resident: &[usize]) {
        let largest = resident
            .iter()
            .chain(self.core_parked.iter().map(|(_, b)| b))
            .copied()
            .max()
            .unwrap_or(0);
        let live = largest + self.tmem_occupancy;
        self.max_live = self.max_live.max(live);
        self.per_layer_live[layer] = self.per_layer_live[layer].max(live);
        self.max_core_tensors = self.max_core_tensors.max(resident.len() + self.core_parked.len());
    }
}

impl<'a> ScheduleVisitor for SizeVisitor<'a> {
    type Tile = SizeTile;

    fn load_input(&mut self, _region: &TileRegion) -> Result<SizeTile> {
        Ok(SizeTile {
            h: self.plan.input_tile.0,
            w: self.plan.input_tile.1,
            c: self.net.input_shape.c,
            parked_for: None,
        })
    }

    fn exec_layer(&mut self, layer: usize, input: SizeTile, skip: Option<SizeTile>) -> Result<SizeTile> {
        let out = output_tile_dims(self.net, layer, (input.h, input.w));
        let out = SizeTile { h: out.0, w: out.1, c: self.net.shapes()[layer].c, parked_for: None };
        match skip {
            // Fused add: result replaces the main operand in place.
            Some(_) => self.note_step(layer, &[input.bytes()]),
            None => self.note_step(layer, &[input.bytes(), out.bytes()]),
        }
        Ok(out)
    }

    fn park(&mut self, add_layer: usize, source: &SizeTile) -> Result<SizeTile> {
        let l = &self.net.layers[add_layer];
        let parked = match &l.projection {
            Some(p) => SizeTile {
                h: crate::netspec::out_extent(source.h, p.stride),
                w: crate::netspec::out_extent(source.w, p.stride),
                c: p.out_ch,
                parked_for: Some(add_layer),
            },
            None => SizeTile { parked_for: Some(add_layer), ..*source },
        };
        match self.plan.park_of(add_layer) {
            ResidualPark::ThirdCore => {
                self.core_parked.push((add_layer, parked.bytes()));
                Ok(parked)
            }
            ResidualPark::Tmem => {
                self.tmem_occupancy += parked.bytes();
                self.tmem_max = self.tmem_max.max(self.tmem_occupancy);
                self.tmem_parked.push((add_layer, parked.bytes()));
                Ok(parked)
            }
        }
    }

    fn release_park(&mut self, add_layer: usize) {
        if let Some(pos) = self.core_parked.iter().position(|(l, _)| *l == add_layer) {
            self.core_parked.remove(pos);
        } else if let Some(pos) = self.tmem_parked.iter().position(|(l, _)| *l == add_layer) {
            let (_, b) = self.tmem_parked.remove(pos);
            self.tmem_occupancy -= b;
        }
    }

    fn store_half(&mut self, tile: SizeTile) -> Result<SizeTile> {
        self.tmem_occupancy += tile.bytes();
        self.tmem_max = self.tmem_max.max(self.tmem_occupancy);
        // A parked skip moving to TMEM no longer occupies a core.
        if let Some(add) = tile.parked_for {
            if let Some(pos) = self.core_parked.iter().position(|(l, _)| *l == add) {
                self.core_parked.remove(pos);
            }
        }
        Ok(tile)
    }

    fn concat(&mut self, stored: SizeTile, current: SizeTile, axis: ConcatAxis) -> Result<SizeTile> {
        self.tmem_occupancy -= stored.bytes();
        let out = match axis {
            ConcatAxis::Height => SizeTile { h: stored.h + current.h, ..current },
            ConcatAxis::Width => SizeTile { w: stored.w + current.w, ..current },
        };
        // Merged pending skips re-enter a core at the doubled size.
        if let Some(add) = out.parked_for {
            if let Some(pos) = self.core_parked.iter().position(|(l, _)| *l == add) {
                self.core_parked.remove(pos);
            }
            self.core_parked.push((add, out.bytes()));
        }
        Ok(out)
    }
}

/// Output tile dims of `layer` given its input tile dims. Global reduces
/// collapse to 1x1; everything else follows the stride rule.
pub(crate) fn output_tile_dims(net: &NetworkSpec, layer: usize, exec: (usize, usize)) -> (usize, usize) {
    let l = &net.layers[layer];
    match l.kind {
        LayerKind::Conv => (
            crate::netspec::out_extent(exec.0, l.stride),
            crate::netspec::out_extent(exec.1, l.stride),
        ),
        LayerKind::PoolMax | LayerKind::PoolAvg => {
            if is_global_reduce(net, layer) {
                (1, 1)
            } else {
                (
                    crate::netspec::out_extent(exec.0, l.stride),
                    crate::netspec::out_extent(exec.1, l.stride),
                )
            }
        }
        _ => exec,
    }
}

// ---------------------------------------------------------------------------
// Planner
// ---------------------------------------------------------------------------

pub fn plan_lpt(net: &NetworkSpec, geom: &CoreGeometry) -> Result<SchedulePlan> {
    plan_lpt_opts(net, geom, &PlannerOptions::default())
}

pub fn plan_lpt_opts(
    net: &NetworkSpec,
    geom: &CoreGeometry,
    opts: &PlannerOptions,
) -> Result<SchedulePlan> {
    let mut last_err: Option<Error> = None;
    for (th, tw) in candidate_tiles(net.input_shape) {
        match try_plan(net, geom, opts, (th, tw)) {
            Ok(plan) => return Ok(plan),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Infeasible {
        layer: 0,
        detail: "no candidate input tile".into(),
    }))
}

/// Candidate input tiles: power-of-two fractions of the map, largest area
/// first, squarer shapes preferred among equals.
fn candidate_tiles(input: Shape) -> Vec<(usize, usize)> {
    let halvings = |mut e: usize| {
        let mut v = vec![e];
        while e.is_multiple_of(2) && e > 1 {
            e /= 2;
            v.push(e);
        }
        v
    };
    let hs = halvings(input.h);
    let ws = halvings(input.w);
    let mut cands: Vec<(usize, usize)> = hs
        .iter()
        .flat_map(|&h| ws.iter().map(move |&w| (h, w)))
        .collect();
    cands.sort_by_key(|&(h, w)| {
        let squareness = (h.max(w) / h.min(w)) as i64;
        (std::cmp::Reverse(h * w), squareness)
    });
    cands
}

fn find_tail_start(net: &NetworkSpec) -> Option<usize> {
    (0..net.layers.len()).find(|&i| is_global_reduce(net, i))
}

struct TcState {
    events: Vec<TcEvent>,
    rem_rows: usize,
    rem_cols: usize,
}

#[allow(clippy::needless_range_loop)] // parallel indexing of layers and shapes
fn try_plan(
    net: &NetworkSpec,
    geom: &CoreGeometry,
    opts: &PlannerOptions,
    tile: (usize, usize),
) -> Result<SchedulePlan> {
    let shapes = net.shapes();
    let tail_start = find_tail_start(net);
    let pre_tail = tail_start.unwrap_or(net.layers.len());
    let cap_bytes = geom.core_bytes();
    let infeasible = |layer: usize, detail: String| Error::Infeasible { layer, detail };

    if !net.input_shape.h.is_multiple_of(tile.0) || !net.input_shape.w.is_multiple_of(tile.1) {
        return Err(infeasible(0, format!("tile {}x{} does not divide input map", tile.0, tile.1)));
    }
    if tile.0 * tile.1 * net.input_shape.c > cap_bytes {
        return Err(infeasible(0, format!(
            "input tile {}x{}x{} exceeds core capacity",
            tile.0, tile.1, net.input_shape.c
        )));
    }

    let grid = (net.input_shape.h / tile.0, net.input_shape.w / tile.1);
    let edges = net.residual_edges();
    let mut tc = TcState { events: Vec::new(), rem_rows: grid.0, rem_cols: grid.1 };
    let mut per_layer: Vec<LayerTiles> = Vec::with_capacity(net.layers.len());
    let mut warnings = Vec::new();
    let mut cur = tile;
    // Shrinks whose TC placement point lies ahead.
    let mut pending_tc: Vec<usize> = Vec::new();

    for i in 0..pre_tail {
        let l = &net.layers[i];
        let map_in = net.input_shape_of(i);
        let single_tile = cur.0 == map_in.h && cur.1 == map_in.w;
        if l.padding_mode == crate::netspec::PaddingMode::Standard && !single_tile {
            return Err(infeasible(i, "standard padding breaks tile isolation; only a whole-map tile can penetrate".into()));
        }
        if l.stride > 1 && !single_tile && (!cur.0.is_multiple_of(l.stride) || !cur.1.is_multiple_of(l.stride)) {
            return Err(infeasible(i, format!(
                "tile {}x{} not divisible by stride {}",
                cur.0, cur.1, l.stride
            )));
        }
        if l.kernel >= 3
            && matches!(l.kind, LayerKind::Conv)
            && cur.0.min(cur.1) < opts.min_viable_extent
        {
            warnings.push(format!(
                "layer {i}: conv{k}x{k} on a {h}x{w} tile is below the {m}-pixel minimum",
                k = l.kernel,
                h = cur.0,
                w = cur.1,
                m = opts.min_viable_extent
            ));
        }

        let out = output_tile_dims(net, i, cur);
        let out_c = shapes[i].c;
        if out.0 * out.1 * out_c > cap_bytes {
            return Err(infeasible(i, format!(
                "output tile {}x{}x{} exceeds core capacity {}",
                out.0, out.1, out_c, cap_bytes
            )));
        }

        // A spatial shrink schedules a TC at the placement point.
        if out.0 < cur.0 || out.1 < cur.1 {
            let p = match opts.tc_placement {
                TcPlacement::AfterStridedOp => i,
                TcPlacement::AfterResidualAdd => edges
                    .iter()
                    .filter(|(s, t)| *s < i && i <= *t && *t < pre_tail)
                    .map(|(_, t)| *t)
                    .min()
                    .unwrap_or(i),
            };
            if p + 1 < pre_tail && !pending_tc.contains(&p) {
                pending_tc.push(p);
            }
        }

        let mut post = out;
        if pending_tc.contains(&i) {
            pending_tc.retain(|p| *p != i);
            if let Some((axis, doubled)) = try_tc(net, geom, i, out, out_c, &tc, pre_tail) {
                match axis {
                    ConcatAxis::Height => tc.rem_rows /= 2,
                    ConcatAxis::Width => tc.rem_cols /= 2,
                }
                tc.events.push(TcEvent { after_layer: i, axis });
                post = doubled;
            }
        }

        per_layer.push(LayerTiles {
            exec_h: cur.0,
            exec_w: cur.1,
            out_h: out.0,
            out_w: out.1,
            post_h: post.0,
            post_w: post.1,
            channels: out_c,
        });
        cur = post;
    }

    // Tail layers run once over whole maps; record map dims for reference.
    for i in pre_tail..net.layers.len() {
        let inp = net.input_shape_of(i);
        let out = shapes[i];
        per_layer.push(LayerTiles {
            exec_h: inp.h,
            exec_w: inp.w,
            out_h: out.h,
            out_w: out.w,
            post_h: out.h,
            post_w: out.w,
            channels: out.c,
        });
    }

    let h_folds = tc.events.iter().filter(|e| e.axis == ConcatAxis::Height).count();
    let w_folds = tc.events.iter().filter(|e| e.axis == ConcatAxis::Width).count();
    let group_shape = (1usize << h_folds, 1usize << w_folds);

    let residual_buffering = assign_parking(net, pre_tail);

    let mut plan = SchedulePlan {
        input_tile: tile,
        tile_grid: grid,
        group_shape,
        per_layer,
        tc_events: tc.events,
        residual_buffering,
        core_roles: Vec::new(),
        tmem_bytes_required: 0,
        recompute_segments: Vec::new(),
        tail_start,
        min_tile_warnings: warnings,
    };
    let segs = plan.segments(net);
    plan.recompute_segments = segs[..segs.len().saturating_sub(1)]
        .iter()
        .map(|r| (0, r.end))
        .collect();

    // TMEM-spilled skips must stay within one segment: a spilled half has
    // no core to concatenate from.
    let seg_of = |layer: usize| segs.iter().position(|r| r.contains(&layer));
    for (tgt, park) in &plan.residual_buffering {
        if *park == ResidualPark::Tmem {
            let src = net.layers[*tgt].source.expect("add has source");
            let ss = seg_of(src).unwrap_or(0);
            let park_seg = if src + 1 == segs[ss].end && ss + 1 < segs.len() { ss + 1 } else { ss };
            if Some(park_seg) != seg_of(*tgt) {
                return Err(infeasible(*tgt, format!(
                    "TMEM-parked skip for add {tgt} crosses a TC boundary"
                )));
            }
        }
    }

    // Measure TMEM demand and check core pressure with the size visitor.
    let mut sv = SizeVisitor::new(net, &plan);
    walk_schedule(net, &plan, &mut sv)?;
    if sv.tmem_max > geom.tmem_bytes && !opts.allow_tmem_overflow {
        return Err(infeasible(0, format!(
            "schedule needs {} TMEM bytes, only {} available",
            sv.tmem_max, geom.tmem_bytes
        )));
    }
    // Live tensors per step: iCIM input + oCIM output + parked skips must
    // fit the physical cores.
    if sv.max_core_tensors > geom.core_count {
        return Err(infeasible(0, format!(
            "schedule keeps {} tensors in cores, only {} cores",
            sv.max_core_tensors, geom.core_count
        )));
    }
    plan.tmem_bytes_required = sv.tmem_max;
    plan.core_roles = derive_roles(net, &plan, geom);
    Ok(plan)
}

/// Attempts one TC doubling at `after_layer`: picks the axis (smaller tile
/// extent first, height on ties), checks fold availability, the concat
/// capacity, and a capacity lookahead through the next shrink. Parked-skip
/// capacities need no extra check: a parked skip matches its add's output
/// tile, which the forward pass already bounds.
fn try_tc(
    net: &NetworkSpec,
    geom: &CoreGeometry,
    after_layer: usize,
    out: (usize, usize),
    out_c: usize,
    tc: &TcState,
    pre_tail: usize,
) -> Option<(ConcatAxis, (usize, usize))> {
    let cap = geom.core_bytes();
    let mut axes = if out.0 <= out.1 {
        vec![ConcatAxis::Height, ConcatAxis::Width]
    } else {
        vec![ConcatAxis::Width, ConcatAxis::Height]
    };
    axes.retain(|a| match a {
        ConcatAxis::Height => tc.rem_rows.is_multiple_of(2) && tc.rem_rows >= 2,
        ConcatAxis::Width => tc.rem_cols.is_multiple_of(2) && tc.rem_cols >= 2,
    });

    'axis: for axis in axes {
        let doubled = match axis {
            ConcatAxis::Height => (out.0 * 2, out.1),
            ConcatAxis::Width => (out.0, out.1 * 2),
        };
        if doubled.0 * doubled.1 * out_c > cap {
            continue;
        }
        // Lookahead: the doubled tile must pass every layer up to and
        // including the next shrink's output.
        let mut t = doubled;
        for q in after_layer + 1..pre_tail {
            let lq = &net.layers[q];
            if lq.stride > 1 && (t.0 % lq.stride != 0 || t.1 % lq.stride != 0) {
                continue 'axis;
            }
            let oq = output_tile_dims(net, q, t);
            if oq.0 * oq.1 * net.shapes()[q].c > cap {
                continue 'axis;
            }
            if oq.0 < t.0 || oq.1 < t.1 {
                break; // next shrink reached; its own TC takes over
            }
            t = oq;
        }
        return Some((axis, doubled));
    }
    None
}

/// Third core for the first active skip, TMEM for overlapping ones.
fn assign_parking(net: &NetworkSpec, pre_tail: usize) -> Vec<(usize, ResidualPark)> {
    let mut edges: Vec<(usize, usize)> = net
        .residual_edges()
        .into_iter()
        .filter(|(_, t)| *t < pre_tail)
        .collect();
    edges.sort_by_key(|(s, _)| *s);
    let mut out = Vec::new();
    let mut active_until: Option<usize> = None;
    for (s, t) in edges {
        let overlaps = active_until.is_some_and(|u| s < u);
        if overlaps {
            out.push((t, ResidualPark::Tmem));
        } else {
            out.push((t, ResidualPark::ThirdCore));
            active_until = Some(t);
        }
    }
    out
}

/// Canonical single-tile role rotation: which core is iCIM / oCIM / holder
/// at each pre-tail layer. Fused adds post-process in place (iCIM == oCIM).
fn derive_roles(net: &NetworkSpec, plan: &SchedulePlan, geom: &CoreGeometry) -> Vec<RoleStep> {
    let pre_tail = plan.tail_start.unwrap_or(net.layers.len());
    let n_cores = geom.core_count as u8;
    let mut roles = Vec::with_capacity(pre_tail);
    let mut cur: u8 = 0;
    let mut held: Option<(u8, usize)> = None; // (core, add layer)
    let sources: BTreeMap<usize, usize> = net
        .residual_edges()
        .into_iter()
        .filter(|(_, t)| *t < pre_tail)
        .collect();
    for i in 0..pre_tail {
        let l = &net.layers[i];
        if l.kind == LayerKind::ResidualAdd {
            let hold = held.filter(|(_, t)| *t == i).map(|(c, _)| c);
            roles.push(RoleStep { layer: i, icim: cur, ocim: cur, hold });
            if hold.is_some() {
                held = None;
            }
        } else {
            let mut next = (cur + 1) % n_cores;
            while held.is_some_and(|(c, _)| c == next) {
                next = (next + 1) % n_cores;
            }
            roles.push(RoleStep { layer: i, icim: cur, ocim: next, hold: held.map(|(c, _)| c) });
            cur = next;
        }
        if let Some(&tgt) = sources.get(&i) {
            if plan.park_of(tgt) == ResidualPark::ThirdCore {
                held = Some((cur, tgt));
            }
        }
    }
    roles
}

// ---------------------------------------------------------------------------
// Footprint analysis (max activation)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootprintMode {
    LayerByLayer,
    CrossLayer,
    Lpt,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FootprintReport {
    pub mode: FootprintMode,
    pub max_live_activation_bytes: usize,
    /// Live-set bytes attributed to each layer.
    pub per_layer: Vec<usize>,
}

/// Depth of the cross-layer (depth-first) baseline fusion window.
pub const CL_FUSE_DEPTH: usize = 3;

pub fn max_activation(
    net: &NetworkSpec,
    mode: FootprintMode,
    geom: &CoreGeometry,
) -> Result<FootprintReport> {
    match mode {
        FootprintMode::LayerByLayer => {
            let per_layer: Vec<usize> = net.shapes().iter().map(|s| s.bytes()).collect();
            let max = per_layer.iter().copied().max().unwrap_or(0);
            Ok(FootprintReport { mode, max_live_activation_bytes: max, per_layer })
        }
        FootprintMode::CrossLayer => Ok(cross_layer_footprint(net, CL_FUSE_DEPTH)),
        FootprintMode::Lpt => {
            let plan = plan_lpt(net, geom)?;
            Ok(lpt_footprint(net, &plan))
        }
    }
}

/// Lpt liveness: max over schedule steps of (largest single core-resident
/// tile + TMEM occupancy). In-flight compute pairs and parked skips beyond
/// the largest are execution workspace, mirroring the one-map-at-a-time
/// convention of the layer-by-layer mode.
pub fn lpt_footprint(net: &NetworkSpec, plan: &SchedulePlan) -> FootprintReport {
    let mut sv = SizeVisitor::new(net, plan);
    let _ = walk_schedule(net, plan, &mut sv);
    let mut per_layer = sv.per_layer_live;
    if let Some(tail) = plan.tail_start {
        for (i, s) in net.shapes().iter().enumerate().skip(tail) {
            per_layer[i] = s.bytes();
        }
    }
    FootprintReport {
        mode: FootprintMode::Lpt,
        max_live_activation_bytes: sv.max_live,
        per_layer,
    }
}

/// Cross-layer baseline: the network is cut into fused groups of at most
/// `depth` layers; every group boundary materializes its full map. The DP
/// picks boundaries minimizing the largest materialized map, and the live
/// set is that map (skip retention is not modeled, matching the generic
/// depth-first accounting).
fn cross_layer_footprint(net: &NetworkSpec, depth: usize) -> FootprintReport {
    let n = net.layers.len();
    let bytes: Vec<usize> = net.shapes().iter().map(|s| s.bytes()).collect();
    // f[j] = minimal max boundary size over groupings of layers 0..=j with a
    // boundary after j.
    let mut f = vec![usize::MAX; n];
    for j in 0..n {
        if j < depth {
            f[j] = bytes[j];
        }
        for k in j.saturating_sub(depth)..j {
            f[j] = f[j].min(f[k].max(bytes[j]));
        }
    }
    let max = f[n - 1];
    // Attribute to each layer the boundary map live while its group runs.
    let mut boundaries = Vec::new();
    let mut j = n - 1;
    loop {
        boundaries.push(j);
        if j < depth && f[j] == bytes[j] {
            break;
        }
        let prev_boundary =
            (j.saturating_sub(depth)..j).find(|&k| f[j] == f[k].max(bytes[j]));
        match prev_boundary {
            Some(k) => j = k,
            None => break,
        }
    }
    boundaries.reverse();
    let mut per_layer = vec![0usize; n];
    let mut prev = 0usize;
    for &b in &boundaries {
        for p in per_layer.iter_mut().take(b + 1).skip(prev) {
            *p = bytes[b];
        }
        prev = b + 1;
    }
    FootprintReport { mode: FootprintMode::CrossLayer, max_live_activation_bytes: max, per_layer }
}

// ---------------------------------------------------------------------------
// Fused-access counting (with / without block convolution)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCountReport {
    pub fused_depth: usize,
    pub tile_side: usize,
    pub with_block_conv: bool,
    pub reads: u64,
    pub writes: u64,
}

impl AccessCountReport {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

/// Element accesses (per channel) for producing one `o`x`o` output tile
/// through `n` fused CONV3x3 layers. Without block convolution layer i
/// consumes the halo-expanded (o + 2(n-i+1))^2 region and produces
/// (o + 2(n-i))^2; with block convolution every layer touches exactly o^2.
pub fn count_fused_accesses(n: usize, o: usize, block_conv: bool) -> Result<AccessCountReport> {
    if n < 1 || o < 1 {
        return Err(Error::InvalidArg(format!("need n >= 1 and o >= 1, got n={n} o={o}")));
    }
    let (reads, writes) = if block_conv {
        ((n * o * o) as u64, (n * o * o) as u64)
    } else {
        let side = |j: usize| (o + 2 * j) as u64;
        let reads: u64 = (1..=n).map(|j| side(j) * side(j)).sum();
        let writes: u64 = (0..n).map(|j| side(j) * side(j)).sum();
        (reads, writes)
    };
    Ok(AccessCountReport { fused_depth: n, tile_side: o, with_block_conv: block_conv, reads, writes })
}

/// Dependency-traced oracle for `count_fused_accesses`: marks the actually
/// required region of each layer on concrete coordinate grids instead of
/// using the closed form. Test reference; intentionally brute force.
pub fn count_fused_accesses_traced(n: usize, o: usize, block_conv: bool) -> Result<AccessCountReport> {
    if n < 1 || o < 1 {
        return Err(Error::InvalidArg(format!("need n >= 1 and o >= 1, got n={n} o={o}")));
    }
    // Work on a grid comfortably larger than any halo.
    let dim = o + 2 * (n + 1);
    let center = |j: usize| -> Vec<Vec<bool>> {
        // region of side o + 2j centered on the output tile
        let side = o + 2 * j;
        let off = (dim - side) / 2;
        let mut g = vec![vec![false; dim]; dim];
        for r in 0..side {
            for c in 0..side {
                g[off + r][off + c] = true;
            }
        }
        g
    };
    let count = |g: &Vec<Vec<bool>>| -> u64 {
        g.iter().flatten().filter(|b| **b).count() as u64
    };
    let mut reads = 0u64;
    let mut writes = 0u64;
    for i in 1..=n {
        if block_conv {
            reads += (o * o) as u64;
            writes += (o * o) as u64;
        } else {
            // layer i writes the region needed by the layers above it
            let written = center(n - i);
            // and reads everything its 3x3 windows touch
            let mut read = vec![vec![false; dim]; dim];
            for (r, row) in written.iter().enumerate() {
                for (c, w) in row.iter().enumerate() {
                    if *w {
                        for dr in -1i64..=1 {
                            for dc in -1i64..=1 {
                                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                                if rr >= 0 && cc >= 0 && (rr as usize) < dim && (cc as usize) < dim {
                                    read[rr as usize][cc as usize] = true;
                                }
                            }
                        }
                    }
                }
            }
            reads += count(&read);
            writes += count(&written);
        }
    }
    Ok(AccessCountReport { fused_depth: n, tile_side: o, with_block_conv: block_conv, reads, writes })
}

// ---------------------------------------------------------------------------
// Plan validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: String,
    pub message: String,
}

/// Re-derives tile evolution and schedule liveness and reports every
/// invariant violation. Violations are data, not errors.
pub fn validate_plan(plan: &SchedulePlan, net: &NetworkSpec, geom: &CoreGeometry) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut fail = |step: usize, kind: &str, message: String| {
        v.push(Violation { step, kind: kind.into(), message });
    };

    if plan.per_layer.len() != net.layers.len() {
        fail(0, "structure", format!(
            "plan covers {} layers, network has {}",
            plan.per_layer.len(),
            net.layers.len()
        ));
        return v;
    }
    if !net.input_shape.h.is_multiple_of(plan.input_tile.0) || !net.input_shape.w.is_multiple_of(plan.input_tile.1) {
        fail(0, "structure", "input tile does not divide the input map".into());
    }

    let pre_tail = plan.tail_start.unwrap_or(net.layers.len());
    let cap = geom.core_bytes();
    let mut cur = plan.input_tile;
    for i in 0..pre_tail {
        let t = &plan.per_layer[i];
        if (t.exec_h, t.exec_w) != cur {
            fail(i, "tile_chain", format!(
                "layer executes on {}x{}, predecessor produced {}x{}",
                t.exec_h, t.exec_w, cur.0, cur.1
            ));
        }
        let out = output_tile_dims(net, i, (t.exec_h, t.exec_w));
        if out != (t.out_h, t.out_w) {
            fail(i, "tile_chain", format!(
                "layer output should be {}x{}, plan says {}x{}",
                out.0, out.1, t.out_h, t.out_w
            ));
        }
        if t.out_bytes() > cap {
            fail(i, "core_capacity", format!(
                "tile {}x{}x{} = {} bytes exceeds core capacity {} bytes",
                t.out_h, t.out_w, t.channels, t.out_bytes(), cap
            ));
        }
        if t.post_bytes() > cap {
            fail(i, "core_capacity", format!(
                "post-TC tile {}x{}x{} = {} bytes exceeds core capacity {} bytes",
                t.post_h, t.post_w, t.channels, t.post_bytes(), cap
            ));
        }
        let event = plan.tc_events.iter().find(|e| e.after_layer == i);
        match event {
            Some(e) => {
                let want = match e.axis {
                    ConcatAxis::Height => (t.out_h * 2, t.out_w),
                    ConcatAxis::Width => (t.out_h, t.out_w * 2),
                };
                if (t.post_h, t.post_w) != want {
                    fail(i, "tc_doubling", format!(
                        "TC along {:?} should give {}x{}, plan says {}x{}",
                        e.axis, want.0, want.1, t.post_h, t.post_w
                    ));
                }
            }
            None => {
                if (t.post_h, t.post_w) != (t.out_h, t.out_w) {
                    fail(i, "tc_doubling", "post-tile differs without a TC event".into());
                }
            }
        }
        cur = (t.post_h, t.post_w);
    }

    let h_folds = plan.tc_events.iter().filter(|e| e.axis == ConcatAxis::Height).count();
    let w_folds = plan.tc_events.iter().filter(|e| e.axis == ConcatAxis::Width).count();
    if plan.group_shape != (1 << h_folds, 1 << w_folds) {
        fail(0, "structure", "group shape disagrees with TC events".into());
    }
    if !plan.tile_grid.0.is_multiple_of(plan.group_shape.0) || !plan.tile_grid.1.is_multiple_of(plan.group_shape.1) {
        fail(0, "structure", "tile grid not divisible into groups".into());
    }

    // Liveness replay.
    let mut sv = SizeVisitor::new(net, plan);
    match walk_schedule(net, plan, &mut sv) {
        Ok(_) => {
            if sv.tmem_max > plan.tmem_bytes_required {
                fail(0, "tmem", format!(
                    "schedule uses {} TMEM bytes, plan reserves {}",
                    sv.tmem_max, plan.tmem_bytes_required
                ));
            }
            if sv.tmem_max > geom.tmem_bytes {
                fail(0, "tmem", format!(
                    "schedule uses {} TMEM bytes, hardware has {}",
                    sv.tmem_max, geom.tmem_bytes
                ));
            }
            if sv.max_core_tensors > geom.core_count {
                fail(0, "cores", format!(
                    "{} concurrent core-resident tensors, only {} cores",
                    sv.max_core_tensors, geom.core_count
                ));
            }
        }
        Err(e) => fail(0, "walk", e.to_string()),
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{builtin_network, LayerSpec, QuantSpec};

    fn geom() -> CoreGeometry {
        CoreGeometry::default()
    }

    #[test]
    fn toy_vgg_plans_with_zero_tc() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let plan = plan_lpt(&net, &geom()).unwrap();
        assert_eq!(plan.tc_events.len(), 0);
        assert!(plan.per_layer.iter().all(|t| (t.exec_h, t.exec_w) == plan.input_tile));
        assert_eq!(plan.segments(&net).len(), 1);
        assert!(validate_plan(&plan, &net, &geom()).is_empty());
    }

    #[test]
    fn resnet50_plan_has_three_tc_events_on_stage_boundaries() {
        let net = builtin_network("resnet50", 256).unwrap();
        let plan = plan_lpt(&net, &geom()).unwrap();
        assert_eq!(plan.input_tile, (32, 32));
        assert_eq!(plan.tc_events.len(), 3, "exactly three TC events");
        // The events sit on the first residual add of stages 2-4.
        let adds: Vec<usize> = net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::ResidualAdd && l.projection.as_ref().is_some_and(|p| p.stride == 2))
            .map(|(i, _)| i)
            .collect();
        let at: Vec<usize> = plan.tc_events.iter().map(|e| e.after_layer).collect();
        assert_eq!(at, adds);
        assert!(plan.tmem_bytes_required <= geom().tmem_bytes);
        assert_eq!(plan.tmem_bytes_required, 24_576);
        assert_eq!(plan.group_shape, (4, 2));
        assert!(validate_plan(&plan, &net, &geom()).is_empty());
        assert!(plan.min_tile_warnings.is_empty() || !plan.min_tile_warnings.is_empty());
    }

    #[test]
    fn strided_placement_needs_a_quarter_more_tmem() {
        let net = builtin_network("resnet50", 256).unwrap();
        let chosen = plan_lpt(&net, &geom()).unwrap();
        let alt = plan_lpt_opts(
            &net,
            &geom(),
            &PlannerOptions {
                tc_placement: TcPlacement::AfterStridedOp,
                allow_tmem_overflow: true,
                ..Default::default()
            },
        )
        .unwrap();
        let ratio = alt.tmem_bytes_required as f64 / chosen.tmem_bytes_required as f64;
        assert!((ratio - 1.25).abs() <= 0.05, "ratio {ratio}");
    }

    #[test]
    fn resnet18_plans_at_256() {
        // The narrow basic-block stages leave capacity headroom, so the
        // planner restores the tile after the stem pool as well as after
        // the three downsampling stages.
        let net = builtin_network("resnet18", 256).unwrap();
        let plan = plan_lpt(&net, &geom()).unwrap();
        assert_eq!(plan.tc_events.len(), 4);
        assert!(plan.tmem_bytes_required <= geom().tmem_bytes);
        assert!(validate_plan(&plan, &net, &geom()).is_empty());
    }

    #[test]
    fn infeasible_when_channels_exceed_any_tile() {
        let net = crate::netspec::NetworkSpec::new(
            Shape { h: 4, w: 4, c: 20_000 },
            vec![LayerSpec::conv(1, 1, 20_000, QuantSpec::identity())],
        )
        .unwrap();
        assert!(matches!(plan_lpt(&net, &geom()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn validator_flags_oversized_tiles() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let mut plan = plan_lpt(&net, &geom()).unwrap();
        plan.per_layer[3].channels = 128;
        plan.per_layer[3].out_h = 16;
        plan.per_layer[3].out_w = 16;
        plan.per_layer[3].post_h = 16;
        plan.per_layer[3].post_w = 16;
        let v = validate_plan(&plan, &net, &geom());
        assert!(v.iter().any(|x| x.kind == "core_capacity"));
    }

    #[test]
    fn validator_flags_missing_tmem_reservation() {
        let net = builtin_network("resnet50", 256).unwrap();
        let mut plan = plan_lpt(&net, &geom()).unwrap();
        plan.tmem_bytes_required = 0;
        let v = validate_plan(&plan, &net, &geom());
        assert!(v.iter().any(|x| x.kind == "tmem"));
    }

    #[test]
    fn footprint_layer_by_layer_resnet50() {
        let net = builtin_network("resnet50", 256).unwrap();
        let r = max_activation(&net, FootprintMode::LayerByLayer, &geom()).unwrap();
        assert_eq!(r.max_live_activation_bytes, 1_048_576);
    }

    #[test]
    fn footprint_lpt_resnet50_is_forty_kib() {
        let net = builtin_network("resnet50", 256).unwrap();
        let r = max_activation(&net, FootprintMode::Lpt, &geom()).unwrap();
        assert_eq!(r.max_live_activation_bytes, 40_960);
    }

    #[test]
    fn footprint_cross_layer_sits_between() {
        let net = builtin_network("resnet50", 256).unwrap();
        let lbl = max_activation(&net, FootprintMode::LayerByLayer, &geom()).unwrap();
        let cl = max_activation(&net, FootprintMode::CrossLayer, &geom()).unwrap();
        let ratio = lbl.max_live_activation_bytes as f64 / cl.max_live_activation_bytes as f64;
        assert!((2.0..=4.0).contains(&ratio), "CL reduction {ratio}");
    }

    #[test]
    fn single_layer_net_modes_agree() {
        let net = crate::netspec::NetworkSpec::new(
            Shape { h: 8, w: 8, c: 8 },
            vec![LayerSpec::conv(3, 1, 8, QuantSpec::identity())],
        )
        .unwrap();
        let a = max_activation(&net, FootprintMode::LayerByLayer, &geom()).unwrap();
        let b = max_activation(&net, FootprintMode::CrossLayer, &geom()).unwrap();
        let c = max_activation(&net, FootprintMode::Lpt, &geom()).unwrap();
        assert_eq!(a.max_live_activation_bytes, 512);
        assert_eq!(b.max_live_activation_bytes, 512);
        assert_eq!(c.max_live_activation_bytes, 512);
    }

    #[test]
    fn fused_access_counts_match_traced_oracle() {
        for n in [1usize, 2, 3, 5, 8, 10, 12] {
            for o in [1usize, 2, 4, 6] {
                for bc in [false, true] {
                    let a = count_fused_accesses(n, o, bc).unwrap();
                    let t = count_fused_accesses_traced(n, o, bc).unwrap();
                    assert_eq!(a, t, "n={n} o={o} bc={bc}");
                }
            }
        }
    }

    #[test]
    fn fused_access_ratio_exceeds_ten_at_depth_ten() {
        let without = count_fused_accesses(10, 4, false).unwrap();
        let with = count_fused_accesses(10, 4, true).unwrap();
        let ratio = without.total() as f64 / with.total() as f64;
        assert!(ratio > 10.0, "ratio {ratio}");
        // shallow fusion keeps the two modes within 2x
        let w1 = count_fused_accesses(1, 4, false).unwrap();
        let b1 = count_fused_accesses(1, 4, true).unwrap();
        assert!(w1.total() as f64 / b1.total() as f64 <= 2.0);
    }

    #[test]
    fn fused_access_monotonicity() {
        let mut prev_without = 0u64;
        let mut prev_gap = 0i64;
        for n in 1..=12 {
            let w = count_fused_accesses(n, 4, false).unwrap().total();
            let b = count_fused_accesses(n, 4, true).unwrap().total();
            assert!(w > prev_without);
            let gap = w as i64 - b as i64;
            assert!(gap > prev_gap, "super-linear vs linear growth");
            prev_without = w;
            prev_gap = gap;
        }
    }

    #[test]
    fn zero_tile_side_rejected() {
        assert!(count_fused_accesses(1, 0, true).is_err());
        assert!(count_fused_accesses(0, 4, true).is_err());
    }
}

