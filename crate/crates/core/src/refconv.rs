//! Golden functional engine: direct integer convolution, block convolution
//! over tile grids, tile concatenation, and whole-network execution in
//! penetration order. Everything here favors clarity over speed; it is the
//! bitwise reference the architectural simulator is checked against.

use crate::error::{Error, Result};
use crate::hnn::{MaskedWeights, WeightTensor};
use crate::lpt::{self, SchedulePlan, TileRegion};
use crate::netspec::{
    requantize, saturating_add8, ConcatAxis, LayerKind, LayerSpec, NetworkSpec, PaddingMode,
    QTensor,
};

/// Uniform tiling of a feature map. Concatenating the tiles in grid order
/// reconstructs the map exactly.
#[derive(Clone, Debug)]
pub struct TileGrid {
    pub tiles: Vec<QTensor>,
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
}

impl TileGrid {
    pub fn split(map: &QTensor, tile_h: usize, tile_w: usize) -> Result<Self> {
        if tile_h == 0 || tile_w == 0 || !map.height.is_multiple_of(tile_h) || !map.width.is_multiple_of(tile_w) {
            return Err(Error::InvalidTensor(format!(
                "map {}x{} not divisible into {}x{} tiles",
                map.height, map.width, tile_h, tile_w
            )));
        }
        let rows = map.height / tile_h;
        let cols = map.width / tile_w;
        let mut tiles = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut values = Vec::with_capacity(tile_h * tile_w * map.channels);
                for h in 0..tile_h {
                    for w in 0..tile_w {
                        let base = map.idx(r * tile_h + h, c * tile_w + w, 0);
                        values.extend_from_slice(&map.values[base..base + map.channels]);
                    }
                }
                tiles.push(QTensor {
                    height: tile_h,
                    width: tile_w,
                    channels: map.channels,
                    bit_width: map.bit_width,
                    signed: map.signed,
                    values,
                });
            }
        }
        Ok(TileGrid { tiles, rows, cols, tile_h, tile_w })
    }

    pub fn join(&self) -> QTensor {
        let (h, w) = (self.rows * self.tile_h, self.cols * self.tile_w);
        let ch = self.tiles[0].channels;
        let mut out = QTensor {
            height: h,
            width: w,
            channels: ch,
            bit_width: self.tiles[0].bit_width,
            signed: self.tiles[0].signed,
            values: vec![0; h * w * ch],
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                let t = &self.tiles[r * self.cols + c];
                for th in 0..self.tile_h {
                    for tw in 0..self.tile_w {
                        let src = t.idx(th, tw, 0);
                        let dst = out.idx(r * self.tile_h + th, c * self.tile_w + tw, 0);
                        out.values[dst..dst + ch].copy_from_slice(&t.values[src..src + ch]);
                    }
                }
            }
        }
        out
    }

    pub fn tile(&self, r: usize, c: usize) -> &QTensor {
        &self.tiles[r * self.cols + c]
    }
}

/// Direct same-padded integer convolution with the fixed post-processing
/// chain (per-channel scale/shift, optional ReLU, saturating 8-bit quantize).
/// The kernel is center-anchored: output (r, c) reads input rows
/// r*s - K/2 ..= r*s + K/2, zeros beyond the map border.
pub fn conv_standard(input: &QTensor, weights: &WeightTensor, layer: &LayerSpec) -> Result<QTensor> {
    if weights.in_channels != input.channels {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!(
                "weights expect {} input channels, tensor has {}",
                weights.in_channels, input.channels
            ),
        });
    }
    if weights.kernel != layer.kernel || weights.out_channels != layer.out_channels {
        return Err(Error::ShapeMismatch { layer: 0, detail: "weights do not match layer".into() });
    }
    Ok(conv_tile(input, weights, layer.stride, &layer.quant))
}

/// The shared conv kernel: valid for whole maps (standard padding) and for
/// single tiles (block padding), which are the same computation on
/// different extents.
#[allow(clippy::needless_range_loop)] // output and accumulator arrays are co-indexed
pub(crate) fn conv_tile(
    input: &QTensor,
    weights: &WeightTensor,
    stride: usize,
    quant: &crate::netspec::QuantSpec,
) -> QTensor {
    let k = weights.kernel;
    let pad = k / 2;
    let (oh, ow) = (crate::netspec::out_extent(input.height, stride), crate::netspec::out_extent(input.width, stride));
    let cout = weights.out_channels;
    let cin = input.channels;
    let mut out = QTensor {
        height: oh,
        width: ow,
        channels: cout,
        bit_width: 8,
        signed: !quant.relu,
        values: vec![0; oh * ow * cout],
    };
    let mut acc = vec![0i64; cout];
    for r in 0..oh {
        for c in 0..ow {
            acc.fill(0);
            for kh in 0..k {
                let ih = (r * stride + kh) as isize - pad as isize;
                if ih < 0 || ih >= input.height as isize {
                    continue;
                }
                for kw in 0..k {
                    let iw = (c * stride + kw) as isize - pad as isize;
                    if iw < 0 || iw >= input.width as isize {
                        continue;
                    }
                    let base = input.idx(ih as usize, iw as usize, 0);
                    for ci in 0..cin {
                        let x = input.values[base + ci] as i64;
                        if x == 0 {
                            continue;
                        }
                        let wbase = ((kh * k + kw) * cin + ci) * cout;
                        for (co, a) in acc.iter_mut().enumerate() {
                            *a += x * weights.values[wbase + co] as i64;
                        }
                    }
                }
            }
            let obase = out.idx(r, c, 0);
            for co in 0..cout {
                out.values[obase + co] =
                    requantize(acc[co], quant.mult_for(co), quant.shift_for(co), quant.relu);
            }
        }
    }
    out
}

/// Block convolution: every tile is convolved in isolation with inner-tile
/// zero padding, so no data crosses tile boundaries.
pub fn conv_blocked(grid: &TileGrid, weights: &WeightTensor, layer: &LayerSpec) -> Result<TileGrid> {
    if layer.padding_mode != PaddingMode::Block {
        return Err(Error::InvalidArg("conv_blocked requires padding_mode=block".into()));
    }
    if layer.stride > 1 && (grid.tile_h < layer.stride || grid.tile_w < layer.stride) {
        return Err(Error::InvalidTensor(format!(
            "tile {}x{} smaller than stride {}",
            grid.tile_h, grid.tile_w, layer.stride
        )));
    }
    let mut tiles = Vec::with_capacity(grid.tiles.len());
    for t in &grid.tiles {
        tiles.push(conv_tile(t, weights, layer.stride, &layer.quant));
    }
    Ok(TileGrid {
        tile_h: tiles[0].height,
        tile_w: tiles[0].width,
        tiles,
        rows: grid.rows,
        cols: grid.cols,
    })
}

/// Per-tile pooling with the same padding rule as conv. Max pooling pads
/// with zero; average pooling divides by the full K*K window (truncating).
/// A global reduce (`global`) collapses the whole extent to 1x1 instead of
/// sliding windows.
pub(crate) fn pool_tile(input: &QTensor, layer: &LayerSpec, global: bool) -> QTensor {
    let k = layer.kernel;
    let pad = k / 2;
    let stride = layer.stride;
    let ch = input.channels;
    if global {
        let mut out = QTensor {
            height: 1,
            width: 1,
            channels: ch,
            bit_width: 8,
            signed: input.signed,
            values: vec![0; ch],
        };
        for cc in 0..ch {
            let v = if layer.kind == LayerKind::PoolMax {
                let mut m = 0i32;
                for h in 0..input.height {
                    for w in 0..input.width {
                        m = m.max(input.get(h, w, cc));
                    }
                }
                m
            } else {
                let mut s = 0i64;
                for h in 0..input.height {
                    for w in 0..input.width {
                        s += input.get(h, w, cc) as i64;
                    }
                }
                (s / (k * k) as i64) as i32
            };
            out.set(0, 0, cc, v);
        }
        return out;
    }
    let (oh, ow) = (
        crate::netspec::out_extent(input.height, stride),
        crate::netspec::out_extent(input.width, stride),
    );
    let mut out = QTensor {
        height: oh,
        width: ow,
        channels: ch,
        bit_width: 8,
        signed: input.signed,
        values: vec![0; oh * ow * ch],
    };
    for r in 0..oh {
        for c in 0..ow {
            for cc in 0..ch {
                let v: i32 = if layer.kind == LayerKind::PoolMax {
                    let mut m = 0i32; // zero padding participates in the max
                    for kh in 0..k {
                        let ih = (r * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= input.height as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let iw = (c * stride + kw) as isize - pad as isize;
                            if iw < 0 || iw >= input.width as isize {
                                continue;
                            }
                            m = m.max(input.get(ih as usize, iw as usize, cc));
                        }
                    }
                    m
                } else {
                    let mut s = 0i64;
                    for kh in 0..k {
                        let ih = (r * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= input.height as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let iw = (c * stride + kw) as isize - pad as isize;
                            if iw < 0 || iw >= input.width as isize {
                                continue;
                            }
                            s += input.get(ih as usize, iw as usize, cc) as i64;
                        }
                    }
                    (s / (k * k) as i64) as i32
                };
                out.set(r, c, cc, v);
            }
        }
    }
    out
}

/// Doubles the extent along `axis`; `stored` (the earlier-scheduled tile)
/// occupies the lower index range.
pub fn tile_concat(stored: &QTensor, current: &QTensor, axis: ConcatAxis) -> Result<QTensor> {
    let dims_ok = match axis {
        ConcatAxis::Height => stored.width == current.width && stored.channels == current.channels,
        ConcatAxis::Width => stored.height == current.height && stored.channels == current.channels,
    };
    if !dims_ok || stored.signed != current.signed {
        return Err(Error::InvalidTensor(format!(
            "concat dim mismatch: {}x{}x{} vs {}x{}x{}",
            stored.height, stored.width, stored.channels, current.height, current.width, current.channels
        )));
    }
    match axis {
        ConcatAxis::Height => {
            let mut values = stored.values.clone();
            values.extend_from_slice(&current.values);
            Ok(QTensor {
                height: stored.height + current.height,
                width: stored.width,
                channels: stored.channels,
                bit_width: stored.bit_width,
                signed: stored.signed,
                values,
            })
        }
        ConcatAxis::Width => {
            let w = stored.width + current.width;
            let mut out = QTensor {
                height: stored.height,
                width: w,
                channels: stored.channels,
                bit_width: stored.bit_width,
                signed: stored.signed,
                values: vec![0; stored.height * w * stored.channels],
            };
            for h in 0..stored.height {
                let d0 = out.idx(h, 0, 0);
                let s0 = stored.idx(h, 0, 0);
                let n = stored.width * stored.channels;
                out.values[d0..d0 + n].copy_from_slice(&stored.values[s0..s0 + n]);
                let d1 = out.idx(h, stored.width, 0);
                let c0 = current.idx(h, 0, 0);
                let m = current.width * current.channels;
                out.values[d1..d1 + m].copy_from_slice(&current.values[c0..c0 + m]);
            }
            Ok(out)
        }
    }
}

/// Splits a concatenated tile back into halves (test hook for TC).
pub fn tile_split(t: &QTensor, axis: ConcatAxis) -> (QTensor, QTensor) {
    match axis {
        ConcatAxis::Height => {
            let h = t.height / 2;
            let n = h * t.width * t.channels;
            let a = QTensor {
                height: h,
                width: t.width,
                channels: t.channels,
                bit_width: t.bit_width,
                signed: t.signed,
                values: t.values[..n].to_vec(),
            };
            let b = QTensor { values: t.values[n..].to_vec(), ..a.clone() };
            (a, b)
        }
        ConcatAxis::Width => {
            let w = t.width / 2;
            let mut a = QTensor {
                height: t.height,
                width: w,
                channels: t.channels,
                bit_width: t.bit_width,
                signed: t.signed,
                values: Vec::with_capacity(t.height * w * t.channels),
            };
            let mut b = a.clone();
            for h in 0..t.height {
                let base = t.idx(h, 0, 0);
                let mid = t.idx(h, w, 0);
                let end = t.idx(h, t.width - 1, t.channels - 1) + 1;
                a.values.extend_from_slice(&t.values[base..mid]);
                b.values.extend_from_slice(&t.values[mid..end]);
            }
            (a, b)
        }
    }
}

/// Residual add of two quantized operands in saturating 8-bit arithmetic.
pub(crate) fn residual_add_tile(main: &QTensor, skip: &QTensor, relu: bool) -> Result<QTensor> {
    if main.shape() != skip.shape() {
        return Err(Error::InvalidTensor(format!(
            "residual operands differ: {} vs {}",
            main.shape(),
            skip.shape()
        )));
    }
    let mut out = QTensor {
        height: main.height,
        width: main.width,
        channels: main.channels,
        bit_width: 8,
        signed: !relu,
        values: vec![0; main.values.len()],
    };
    for (o, (a, b)) in out.values.iter_mut().zip(main.values.iter().zip(skip.values.iter())) {
        *o = saturating_add8(*a, *b, relu);
    }
    Ok(out)
}

/// Executes one layer on one tile (or whole map — same computation).
pub(crate) fn exec_layer_tile(
    net: &NetworkSpec,
    weights: &MaskedWeights,
    layer_idx: usize,
    input: &QTensor,
    skip: Option<&QTensor>,
) -> Result<QTensor> {
    let l = &net.layers[layer_idx];
    match l.kind {
        LayerKind::Input => Ok(input.clone()),
        LayerKind::Conv | LayerKind::Fc => {
            Ok(conv_tile(input, weights.layer(layer_idx), l.stride, &l.quant))
        }
        LayerKind::PoolMax | LayerKind::PoolAvg => {
            Ok(pool_tile(input, l, crate::netspec::is_global_reduce(net, layer_idx)))
        }
        LayerKind::ResidualAdd => {
            let skip = skip.ok_or_else(|| Error::PlanMismatch(format!(
                "layer {layer_idx}: residual add without a parked skip"
            )))?;
            residual_add_tile(input, skip, l.quant.relu)
        }
    }
}

/// Skip operand for a residual edge: the projection conv applied to the
/// parked source tile, or the source tile itself.
pub(crate) fn skip_operand(
    net: &NetworkSpec,
    weights: &MaskedWeights,
    add_layer: usize,
    parked: &QTensor,
) -> QTensor {
    let l = &net.layers[add_layer];
    match &l.projection {
        Some(p) => conv_tile(parked, weights.layer(add_layer), p.stride, &p.quant),
        None => parked.clone(),
    }
}

/// Result of a reference run: the penetration-order output plus the
/// layer-by-layer blocked maps used for order-invariance cross-checks.
pub struct ReferenceRun {
    pub output: QTensor,
    /// Output map of every layer under plain layer-by-layer blocked
    /// execution of the same tiling (the order-invariance oracle).
    pub layer_maps: Vec<QTensor>,
}

/// Executes the network in LPT order under `plan` and, independently, layer
/// by layer over full maps with the same per-layer tiling. Both paths must
/// agree bitwise; the caller gets both for cross-checking.
pub fn run_reference(
    net: &NetworkSpec,
    weights: &MaskedWeights,
    input: &QTensor,
    plan: &SchedulePlan,
) -> Result<ReferenceRun> {
    plan.check_against(net)?;
    if input.shape() != net.input_shape {
        return Err(Error::PlanMismatch(format!(
            "input {} does not match network input {}",
            input.shape(),
            net.input_shape
        )));
    }
    let layer_maps = run_layer_by_layer(net, weights, input, plan)?;
    let output = run_penetration(net, weights, input, plan)?;
    Ok(ReferenceRun { output, layer_maps })
}

/// Layer-by-layer blocked execution over whole maps: for every layer, split
/// the current map into the plan's tiles, apply the operator per tile, join.
pub fn run_layer_by_layer(
    net: &NetworkSpec,
    weights: &MaskedWeights,
    input: &QTensor,
    plan: &SchedulePlan,
) -> Result<Vec<QTensor>> {
    let mut maps: Vec<QTensor> = Vec::with_capacity(net.layers.len());
    let mut cur = input.clone();
    for (i, l) in net.layers.iter().enumerate() {
        let tail = plan.tail_start.is_some_and(|t| i >= t);
        let cfg = plan.exec_tile(i);
        let out = if tail || l.padding_mode == PaddingMode::Standard {
            // Tail layers (global reduce onward) and standard-padding layers
            // operate on the whole map.
            let skip = match l.kind {
                LayerKind::ResidualAdd => {
                    let src = l.source.unwrap();
                    Some(skip_operand(net, weights, i, &maps[src]))
                }
                _ => None,
            };
            exec_layer_tile(net, weights, i, &cur, skip.as_ref())?
        } else {
            let grid = TileGrid::split(&cur, cfg.0, cfg.1)?;
            let skip_grid = match l.kind {
                LayerKind::ResidualAdd => {
                    let src = l.source.unwrap();
                    let (sh, sw) = plan.skip_tile(net, i);
                    Some(TileGrid::split(&maps[src], sh, sw)?)
                }
                _ => None,
            };
            let mut tiles = Vec::with_capacity(grid.tiles.len());
            for (ti, t) in grid.tiles.iter().enumerate() {
                let skip = skip_grid
                    .as_ref()
                    .map(|g| skip_operand(net, weights, i, &g.tiles[ti]));
                tiles.push(exec_layer_tile(net, weights, i, t, skip.as_ref())?);
            }
            TileGrid {
                tile_h: tiles[0].height,
                tile_w: tiles[0].width,
                tiles,
                rows: grid.rows,
                cols: grid.cols,
            }
            .join()
        };
        maps.push(out.clone());
        cur = out;
    }
    Ok(maps)
}

/// Penetration-order execution: one input tile runs through every layer of
/// a segment before the next tile starts; TC events pair completed units.
fn run_penetration(
    net: &NetworkSpec,
    weights: &MaskedWeights,
    input: &QTensor,
    plan: &SchedulePlan,
) -> Result<QTensor> {
    struct Golden<'a> {
        net: &'a NetworkSpec,
        weights: &'a MaskedWeights,
        input: &'a QTensor,
        tmem_tiles: usize,
    }

    impl<'a> lpt::ScheduleVisitor for Golden<'a> {
        type Tile = QTensor;

        fn load_input(&mut self, region: &TileRegion) -> Result<QTensor> {
            let (h0, w0, h1, w1) = region.pixel_bounds();
            let ch = self.input.channels;
            let mut values = Vec::with_capacity((h1 - h0) * (w1 - w0) * ch);
            for h in h0..h1 {
                for w in w0..w1 {
                    let base = self.input.idx(h, w, 0);
                    values.extend_from_slice(&self.input.values[base..base + ch]);
                }
            }
            Ok(QTensor {
                height: h1 - h0,
                width: w1 - w0,
                channels: ch,
                bit_width: self.input.bit_width,
                signed: self.input.signed,
                values,
            })
        }

        fn exec_layer(&mut self, layer: usize, input: QTensor, skip: Option<QTensor>) -> Result<QTensor> {
            exec_layer_tile(self.net, self.weights, layer, &input, skip.as_ref())
        }

        fn park(&mut self, add_layer: usize, source: &QTensor) -> Result<QTensor> {
            Ok(skip_operand(self.net, self.weights, add_layer, source))
        }

        fn store_half(&mut self, tile: QTensor) -> Result<QTensor> {
            self.tmem_tiles += 1;
            Ok(tile)
        }

        fn concat(&mut self, stored: QTensor, current: QTensor, axis: ConcatAxis) -> Result<QTensor> {
            self.tmem_tiles -= 1;
            tile_concat(&stored, &current, axis)
        }
    }

    let mut v = Golden { net, weights, input, tmem_tiles: 0 };
    let group_outputs = lpt::walk_schedule(net, plan, &mut v)?;

    // Reassemble the group outputs into the pre-tail map, then run the tail
    // (global reduce onward) once over the whole map.
    let tail = plan.tail_start.unwrap_or(net.layers.len());
    let pre_tail_shape = if tail == 0 { net.input_shape } else { net.shapes()[tail - 1] };
    let mut map = if tail == 0 {
        input.clone()
    } else {
        let (gth, gtw) = plan.group_output_tile(net);
        let mut map = QTensor {
            height: pre_tail_shape.h,
            width: pre_tail_shape.w,
            channels: pre_tail_shape.c,
            bit_width: 8,
            signed: group_outputs.first().is_some_and(|(_, t)| t.signed),
            values: vec![0; pre_tail_shape.elements()],
        };
        for ((gi, gj), tile) in &group_outputs {
            debug_assert_eq!((tile.height, tile.width), (gth, gtw));
            let (h0, w0) = (gi * gth, gj * gtw);
            for h in 0..tile.height {
                for w in 0..tile.width {
                    let dst = map.idx(h0 + h, w0 + w, 0);
                    let src = tile.idx(h, w, 0);
                    map.values[dst..dst + tile.channels]
                        .copy_from_slice(&tile.values[src..src + tile.channels]);
                }
            }
        }
        map
    };

    let mut produced: Vec<QTensor> = Vec::new();
    for i in tail..net.layers.len() {
        let l = &net.layers[i];
        let skip = match l.kind {
            LayerKind::ResidualAdd => {
                let src = l.source.unwrap();
                if src < tail {
                    return Err(Error::PlanMismatch(format!(
                        "residual edge ({src}, {i}) crosses into the global tail"
                    )));
                }
                Some(skip_operand(net, weights, i, &produced[src - tail]))
            }
            _ => None,
        };
        map = exec_layer_tile(net, weights, i, &map, skip.as_ref())?;
        produced.push(map.clone());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnn::{materialize, Supermask, WeightGenConfig};
    use crate::netspec::{builtin_network, QuantSpec};

    fn ident_weights(ch: usize) -> WeightTensor {
        // 1x1 identity: w[0,0,c,c] = 1
        let mut values = vec![0i32; ch * ch];
        for c in 0..ch {
            values[c * ch + c] = 1;
        }
        WeightTensor { kernel: 1, in_channels: ch, out_channels: ch, values }
    }

    fn ones_weights(k: usize, cin: usize, cout: usize) -> WeightTensor {
        WeightTensor { kernel: k, in_channels: cin, out_channels: cout, values: vec![1; k * k * cin * cout] }
    }

    fn tensor_u8(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> i32) -> QTensor {
        let mut t = QTensor::zeros(h, w, c);
        for hh in 0..h {
            for ww in 0..w {
                for cc in 0..c {
                    t.set(hh, ww, cc, f(hh, ww, cc));
                }
            }
        }
        t
    }

    #[test]
    fn identity_conv_preserves_input() {
        let input = tensor_u8(5, 4, 3, |h, w, c| ((h * 7 + w * 3 + c) % 200) as i32);
        let layer = LayerSpec::conv(1, 1, 3, QuantSpec::identity());
        let out = conv_standard(&input, &ident_weights(3), &layer).unwrap();
        assert_eq!(out.values, input.values);
    }

    #[test]
    fn zero_weights_zero_output() {
        let input = tensor_u8(4, 4, 2, |_, _, _| 9);
        let w = WeightTensor { kernel: 3, in_channels: 2, out_channels: 5, values: vec![0; 90] };
        let layer = LayerSpec::conv(3, 1, 5, QuantSpec::identity());
        let out = conv_standard(&input, &w, &layer).unwrap();
        assert!(out.values.iter().all(|v| *v == 0));
    }

    #[test]
    fn ones_kernel_center_is_nine() {
        let input = tensor_u8(3, 3, 1, |_, _, _| 1);
        let layer = LayerSpec::conv(3, 1, 1, QuantSpec::identity());
        let out = conv_standard(&input, &ones_weights(3, 1, 1), &layer).unwrap();
        assert_eq!(out.get(1, 1, 0), 9);
        assert_eq!(out.get(0, 0, 0), 4); // corner sees a 2x2 valid window
    }

    #[test]
    fn single_tile_blocked_equals_standard() {
        let input = tensor_u8(8, 8, 4, |h, w, c| ((h * 31 + w * 17 + c * 5) % 256) as i32);
        let layer = LayerSpec::conv(3, 1, 6, QuantSpec::per_layer(1, 4, true));
        let w = WeightTensor {
            kernel: 3,
            in_channels: 4,
            out_channels: 6,
            values: (0..3 * 3 * 4 * 6).map(|i: i32| (i * 37) % 15 - 7).collect(),
        };
        let grid = TileGrid::split(&input, 8, 8).unwrap();
        let blocked = conv_blocked(&grid, &w, &layer).unwrap().join();
        let standard = conv_standard(&input, &w, &layer).unwrap();
        assert_eq!(blocked, standard);
    }

    #[test]
    fn blocked_tile_edges_differ_from_standard_exactly_on_crossing_fields() {
        // Small positive inputs, no saturation: any receptive field crossing
        // a tile border must change the sum.
        let input = tensor_u8(16, 16, 1, |h, w, _| 1 + ((h + w) % 2) as i32);
        let layer = LayerSpec::conv(3, 1, 1, QuantSpec::identity());
        let w = ones_weights(3, 1, 1);
        let grid = TileGrid::split(&input, 8, 8).unwrap();
        let blocked = conv_blocked(&grid, &w, &layer).unwrap().join();
        let standard = conv_standard(&input, &w, &layer).unwrap();
        for h in 0..16usize {
            for ww in 0..16usize {
                let crosses = {
                    // receptive field [h-1, h+1] x [w-1, w+1] crosses the 8x8
                    // tile border iff the pixel is adjacent to it (but not
                    // the map border, where both pad identically)
                    let tile_edge_h = h % 8 == 7 && h + 1 < 16 || h % 8 == 0 && h > 0;
                    let tile_edge_w = ww % 8 == 7 && ww + 1 < 16 || ww % 8 == 0 && ww > 0;
                    tile_edge_h || tile_edge_w
                };
                let differs = blocked.get(h, ww, 0) != standard.get(h, ww, 0);
                assert_eq!(differs, crosses, "at ({h}, {ww})");
            }
        }
    }

    #[test]
    fn modifying_one_tile_only_changes_that_output_tile() {
        let mut input = tensor_u8(8, 8, 2, |h, w, c| ((h * 13 + w * 7 + c) % 250) as i32);
        let layer = LayerSpec::conv(3, 1, 3, QuantSpec::per_layer(1, 2, true));
        let w = WeightTensor {
            kernel: 3,
            in_channels: 2,
            out_channels: 3,
            values: (0..54).map(|i: i32| i % 13 - 6).collect(),
        };
        let base = conv_blocked(&TileGrid::split(&input, 4, 4).unwrap(), &w, &layer).unwrap();
        input.set(1, 6, 0, 251); // tile (0, 1)
        let changed = conv_blocked(&TileGrid::split(&input, 4, 4).unwrap(), &w, &layer).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let same = base.tile(r, c) == changed.tile(r, c);
                assert_eq!(same, !(r == 0 && c == 1), "tile ({r}, {c})");
            }
        }
    }

    #[test]
    fn per_channel_quantization_scales_each_output_channel() {
        let input = tensor_u8(2, 2, 1, |_, _, _| 100);
        // 1x1 conv fanning one channel out to three, weight 1 everywhere.
        let w = WeightTensor { kernel: 1, in_channels: 1, out_channels: 3, values: vec![1; 3] };
        let quant = QuantSpec {
            mult: vec![1, 2, 3],
            shift: vec![0, 1, 4],
            relu: true,
        };
        let layer = LayerSpec { quant, ..LayerSpec::conv(1, 1, 3, QuantSpec::identity()) };
        let out = conv_standard(&input, &w, &layer).unwrap();
        // channel 0: 100*1 >> 0 = 100; channel 1: 100*2 >> 1 = 100;
        // channel 2: round(100*3 / 16) = 19 (round half up)
        assert_eq!(out.get(0, 0, 0), 100);
        assert_eq!(out.get(0, 0, 1), 100);
        assert_eq!(out.get(0, 0, 2), 19);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = tensor_u8(8, 4, 3, |h, w, c| ((h * 11 + w + c) % 256) as i32);
        let b = tensor_u8(8, 4, 3, |h, w, c| ((h + w * 19 + c) % 256) as i32);
        let cat = tile_concat(&a, &b, ConcatAxis::Width).unwrap();
        assert_eq!((cat.height, cat.width), (8, 8));
        let (a2, b2) = tile_split(&cat, ConcatAxis::Width);
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        let cat = tile_concat(&a, &b, ConcatAxis::Height).unwrap();
        assert_eq!((cat.height, cat.width), (16, 4));
        let (a2, b2) = tile_split(&cat, ConcatAxis::Height);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn concat_dim_mismatch_is_an_error() {
        let a = tensor_u8(8, 4, 3, |_, _, _| 1);
        let b = tensor_u8(7, 4, 3, |_, _, _| 1);
        assert!(tile_concat(&a, &b, ConcatAxis::Width).is_err());
    }

    #[test]
    fn toy_vgg_single_tile_equals_layer_composition() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let mask = Supermask::random(21, &net, 0.5).unwrap();
        let cfg = WeightGenConfig::default();
        let weights = materialize(&cfg, &mask, &net).unwrap();
        let input = tensor_u8(16, 16, 3, |h, w, c| ((h * 37 + w * 11 + c * 3) % 256) as i32);

        let plan = crate::lpt::plan_lpt(&net, &crate::netspec::CoreGeometry::default()).unwrap();
        let run = run_reference(&net, &weights, &input, &plan).unwrap();

        let mut cur = input;
        for (i, l) in net.layers.iter().enumerate() {
            cur = conv_tile(&cur, weights.layer(i), l.stride, &l.quant);
        }
        assert_eq!(run.output, cur);
        assert_eq!(run.layer_maps.last().unwrap(), &run.output);
    }
}
