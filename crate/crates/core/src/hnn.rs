//! Hidden-network weight path: deterministic pseudo-random weights, packed
//! binary supermasks, and materialized (masked) weight tensors.
//!
//! Weight values are a pure function of (seed, layer, coordinate). The
//! generator is counter-based rather than a sequential stream so that the
//! simulator can regenerate any weight pixel in any order and always see
//! the same value. The mixer is the splitmix64 finalizer, hand-rolled here
//! because bit-exact cross-platform stability is part of the contract.

use crate::error::{Error, Result};
use crate::netspec::{LayerKind, NetworkSpec};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    /// Uniform over the full signed range of `weight_bits`.
    UniformSigned,
    /// Random sign with fixed full-scale magnitude.
    SignConstant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightGenConfig {
    pub seed: u64,
    pub weight_bits: u32,
    pub distribution: WeightDistribution,
}

impl WeightGenConfig {
    pub fn new(seed: u64, weight_bits: u32, distribution: WeightDistribution) -> Result<Self> {
        if !(1..=8).contains(&weight_bits) {
            return Err(Error::InvalidArg(format!("weight_bits {weight_bits} outside [1, 8]")));
        }
        Ok(WeightGenConfig { seed, weight_bits, distribution })
    }
}

impl Default for WeightGenConfig {
    fn default() -> Self {
        WeightGenConfig { seed: 0, weight_bits: 4, distribution: WeightDistribution::UniformSigned }
    }
}

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

#[inline]
fn coord_hash(seed: u64, salt: u64, layer: usize, coord: (usize, usize, usize, usize)) -> u64 {
    let (kh, kw, cin, cout) = coord;
    let mut h = mix64(seed ^ salt);
    h = mix64(h ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ (kh as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
    h = mix64(h ^ (kw as u64).wrapping_mul(0xaef1_7502_b3de_9d0b));
    h = mix64(h ^ (cin as u64).wrapping_mul(0x8664_f205_d2c7_e195));
    mix64(h ^ (cout as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
}

const WEIGHT_SALT: u64 = 0x5747_454e; // "WGEN"
const MASK_SALT: u64 = 0x4d4d_454d; // "MMEM"

/// Deterministic weight for one coordinate. Total: never fails, identical
/// across machines and call orders.
pub fn generate_weight(
    cfg: &WeightGenConfig,
    layer: usize,
    coord: (usize, usize, usize, usize),
) -> i32 {
    let h = coord_hash(cfg.seed, WEIGHT_SALT, layer, coord);
    let half = 1i64 << (cfg.weight_bits - 1);
    match cfg.distribution {
        WeightDistribution::UniformSigned => ((h & ((1 << cfg.weight_bits) - 1)) as i64 - half) as i32,
        WeightDistribution::SignConstant => {
            let q = (half - 1).max(1) as i32;
            if h & 1 == 0 {
                q
            } else {
                -q
            }
        }
    }
}

/// Packed per-layer supermask. `layers[j]` corresponds to the j-th weighted
/// layer of the network it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Supermask {
    pub layers: Vec<MaskLayer>,
    pub seed: u64,
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskLayer {
    bit_count: usize,
    words: Vec<u64>,
}

impl MaskLayer {
    fn all_zero(bit_count: usize) -> Self {
        MaskLayer { bit_count, words: vec![0; bit_count.div_ceil(64)] }
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.bit_count);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Measured ones fraction.
    pub fn sparsity(&self) -> f64 {
        if self.bit_count == 0 {
            0.0
        } else {
            self.popcount() as f64 / self.bit_count as f64
        }
    }
}

impl Supermask {
    /// Samples per-layer masks with exactly `round(sparsity * bits)` ones,
    /// chosen by a keyed hash over bit indices; deterministic in the seed.
    pub fn random(seed: u64, net: &NetworkSpec, sparsity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::InvalidArg(format!("sparsity {sparsity} outside [0, 1]")));
        }
        let mut layers = Vec::new();
        for li in net.weighted_layers() {
            let bits = layer_weight_elements(net, li);
            let ones = (sparsity * bits as f64).round() as usize;
            let mut mask = MaskLayer::all_zero(bits);
            if ones >= bits {
                for i in 0..bits {
                    mask.set(i);
                }
            } else if ones > 0 {
                // Keyed priority per bit; take the `ones` smallest. Ties are
                // broken by index via the sort key.
                let mut prio: Vec<(u64, u32)> = (0..bits)
                    .map(|i| (coord_hash(seed, MASK_SALT, li, (i, 0, 0, 0)), i as u32))
                    .collect();
                prio.select_nth_unstable(ones - 1);
                for &(_, i) in &prio[..ones] {
                    mask.set(i as usize);
                }
            }
            layers.push(mask);
        }
        Ok(Supermask { layers, seed, sparsity })
    }

    pub fn ones(net: &NetworkSpec) -> Self {
        let mut m = Supermask::random(0, net, 0.0).expect("sparsity 0 is valid");
        for layer in &mut m.layers {
            for i in 0..layer.bit_count {
                layer.set(i);
            }
        }
        m.sparsity = 1.0;
        m
    }

    pub fn matches(&self, net: &NetworkSpec) -> Result<()> {
        let weighted = net.weighted_layers();
        if weighted.len() != self.layers.len() {
            return Err(Error::MaskMismatch(format!(
                "mask has {} layers, network has {} weighted layers",
                self.layers.len(),
                weighted.len()
            )));
        }
        for (j, &li) in weighted.iter().enumerate() {
            let want = layer_weight_elements(net, li);
            if self.layers[j].bit_count != want {
                return Err(Error::MaskMismatch(format!(
                    "layer {li}: mask has {} bits, expected {want}",
                    self.layers[j].bit_count
                )));
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"ALCM";
    const VERSION: u32 = 1;

    /// Raw little-endian packed bits per layer behind a small header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.sparsity.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.bit_count as u64).to_le_bytes());
        }
        for l in &self.layers {
            let nbytes = l.bit_count.div_ceil(8);
            for b in 0..nbytes {
                let word = l.words[b / 8];
                out.push((word >> ((b % 8) * 8)) as u8);
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > raw.len() {
                return Err(Error::MalformedFile("truncated supermask file".into()));
            }
            let s = &raw[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != Self::MAGIC {
            return Err(Error::MalformedFile("bad supermask magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != Self::VERSION {
            return Err(Error::MalformedFile(format!("unsupported supermask version {version}")));
        }
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let sparsity = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let layer_count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut counts = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            counts.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let mut layers = Vec::with_capacity(layer_count);
        for bits in counts {
            let nbytes = bits.div_ceil(8);
            let bytes = take(nbytes)?;
            let mut l = MaskLayer::all_zero(bits);
            for (b, &byte) in bytes.iter().enumerate() {
                l.words[b / 8] |= (byte as u64) << ((b % 8) * 8);
            }
            // Padding bits beyond bit_count must be zero.
            if bits % 64 != 0 {
                if let Some(last) = l.words.last() {
                    if last >> (bits % 64) != 0 {
                        return Err(Error::MalformedFile("nonzero padding bits in mask".into()));
                    }
                }
            }
            layers.push(l);
        }
        if pos != raw.len() {
            return Err(Error::MalformedFile("trailing bytes in supermask file".into()));
        }
        Ok(Supermask { layers, seed, sparsity })
    }
}

fn layer_weight_elements(net: &NetworkSpec, layer: usize) -> usize {
    let l = &net.layers[layer];
    let skip_c = if l.kind == LayerKind::ResidualAdd && l.projection.is_some() {
        net.skip_in_channels(layer)
    } else {
        0
    };
    l.weight_elements(skip_c)
}

/// Dense weight tensor for one layer, indexed (kh, kw, cin, cout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightTensor {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub values: Vec<i32>,
}

impl WeightTensor {
    #[inline]
    pub fn get(&self, kh: usize, kw: usize, cin: usize, cout: usize) -> i32 {
        self.values[((kh * self.kernel + kw) * self.in_channels + cin) * self.out_channels + cout]
    }

    pub fn elements(&self) -> usize {
        self.values.len()
    }
}

/// Flat bit index for a weight coordinate, matching the supermask layout.
#[inline]
pub fn mask_bit_index(kernel: usize, in_channels: usize, out_channels: usize, coord: (usize, usize, usize, usize)) -> usize {
    let (kh, kw, cin, cout) = coord;
    ((kh * kernel + kw) * in_channels + cin) * out_channels + cout
}

/// Effective weights of the hidden network: random weight times mask bit.
#[derive(Clone, Debug)]
pub struct MaskedWeights {
    /// Indexed by network layer; `None` for unweighted layers.
    pub layers: Vec<Option<WeightTensor>>,
}

impl MaskedWeights {
    pub fn layer(&self, i: usize) -> &WeightTensor {
        self.layers[i].as_ref().expect("layer has weights")
    }
}

/// Materializes masked weights for every weighted layer of the network.
pub fn materialize(cfg: &WeightGenConfig, mask: &Supermask, net: &NetworkSpec) -> Result<MaskedWeights> {
    mask.matches(net)?;
    let weighted = net.weighted_layers();
    let mut layers: Vec<Option<WeightTensor>> = vec![None; net.layers.len()];
    for (j, &li) in weighted.iter().enumerate() {
        let l = &net.layers[li];
        let (k, cin, cout) = match l.kind {
            LayerKind::ResidualAdd => {
                let p = l.projection.as_ref().unwrap();
                (p.kernel, net.skip_in_channels(li), p.out_ch)
            }
            _ => (l.kernel, l.in_channels, l.out_channels),
        };
        let ml = &mask.layers[j];
        let mut values = vec![0i32; k * k * cin * cout];
        let mut idx = 0usize;
        for kh in 0..k {
            for kw in 0..k {
                for ci in 0..cin {
                    for co in 0..cout {
                        if ml.get(idx) {
                            values[idx] = generate_weight(cfg, li, (kh, kw, ci, co));
                        }
                        idx += 1;
                    }
                }
            }
        }
        layers[li] = Some(WeightTensor { kernel: k, in_channels: cin, out_channels: cout, values });
    }
    Ok(MaskedWeights { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{builtin_network, LayerSpec, NetworkSpec, QuantSpec, Shape};

    fn small_net() -> NetworkSpec {
        NetworkSpec::new(
            Shape { h: 8, w: 8, c: 16 },
            vec![LayerSpec::conv(3, 1, 32, QuantSpec::identity())],
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let cfg = WeightGenConfig::default();
        let a = generate_weight(&cfg, 3, (1, 2, 7, 9));
        let b = generate_weight(&cfg, 3, (1, 2, 7, 9));
        assert_eq!(a, b);
        for layer in 0..4 {
            for co in 0..64 {
                let v = generate_weight(&cfg, layer, (0, 0, 0, co));
                assert!((-8..=7).contains(&v));
            }
        }
    }

    #[test]
    fn sign_constant_is_two_valued() {
        let cfg = WeightGenConfig::new(7, 4, WeightDistribution::SignConstant).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..256 {
            seen.insert(generate_weight(&cfg, 0, (0, 0, i, 0)));
        }
        assert_eq!(seen, [7, -7].into_iter().collect());
    }

    #[test]
    fn uniform_histogram_is_flat() {
        // 10^6 draws over 16 values: each bin within 1% of 62500.
        let cfg = WeightGenConfig::default();
        let mut bins = [0u32; 16];
        for i in 0..1_000_000usize {
            let v = generate_weight(&cfg, 0, (0, 0, i % 1000, i / 1000));
            bins[(v + 8) as usize] += 1;
        }
        for b in bins {
            assert!((b as f64 - 62_500.0).abs() <= 625.0, "bin count {b}");
        }
    }

    #[test]
    fn sparsity_popcount_is_exact() {
        // 3x3x16x32 layer: 4608 bits; 0.3 * 4608 = 1382.4 rounds to 1382.
        let net = small_net();
        let m = Supermask::random(11, &net, 0.3).unwrap();
        assert_eq!(m.layers[0].bit_count(), 4608);
        assert_eq!(m.layers[0].popcount(), 1382);
        assert!((m.layers[0].sparsity() - 0.3).abs() <= 1.0 / 4608.0);
    }

    #[test]
    fn sparsity_extremes() {
        let net = small_net();
        let zero = Supermask::random(1, &net, 0.0).unwrap();
        assert_eq!(zero.layers[0].popcount(), 0);
        let cfg = WeightGenConfig::default();
        let w = materialize(&cfg, &zero, &net).unwrap();
        assert!(w.layer(0).values.iter().all(|v| *v == 0));

        let full = Supermask::random(1, &net, 1.0).unwrap();
        assert_eq!(full.layers[0].popcount(), 4608);
        let w = materialize(&cfg, &full, &net).unwrap();
        let l = w.layer(0);
        for kh in 0..3 {
            for kw in 0..3 {
                for ci in 0..16 {
                    for co in 0..32 {
                        assert_eq!(l.get(kh, kw, ci, co), generate_weight(&cfg, 0, (kh, kw, ci, co)));
                    }
                }
            }
        }
    }

    #[test]
    fn half_sparse_mask_nonzero_count() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let m = Supermask::random(5, &net, 0.5).unwrap();
        let w = materialize(&WeightGenConfig::default(), &m, &net).unwrap();
        let nonzero = w.layer(0).values.iter().filter(|v| **v != 0).count();
        // Zero-valued random weights also count as masked-in bits, so the
        // nonzero count is popcount minus mask positions whose weight is 0.
        let l = w.layer(0);
        let mut masked_zero = 0usize;
        let mut idx = 0usize;
        for kh in 0..3 {
            for kw in 0..3 {
                for ci in 0..l.in_channels {
                    for co in 0..l.out_channels {
                        if m.layers[0].get(idx)
                            && generate_weight(&WeightGenConfig::default(), 0, (kh, kw, ci, co)) == 0
                        {
                            masked_zero += 1;
                        }
                        idx += 1;
                    }
                }
            }
        }
        assert_eq!(nonzero + masked_zero, m.layers[0].popcount());
    }

    #[test]
    fn mask_file_round_trip() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        let m = Supermask::random(99, &net, 0.37).unwrap();
        let dir = std::env::temp_dir().join("alcim_mask_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.mask");
        m.save(&p).unwrap();
        let back = Supermask::load(&p).unwrap();
        assert_eq!(m, back);
        back.matches(&net).unwrap();
    }

    #[test]
    fn mask_size_mismatch_rejected() {
        let net = small_net();
        let other = builtin_network("toy_vgg", 16).unwrap();
        let m = Supermask::random(1, &other, 0.5).unwrap();
        assert!(m.matches(&net).is_err());
    }

    #[test]
    fn materialize_is_idempotent_under_remask() {
        // Masking already-masked weights with the same mask changes nothing.
        let net = small_net();
        let m = Supermask::random(3, &net, 0.4).unwrap();
        let w = materialize(&WeightGenConfig::default(), &m, &net).unwrap();
        let l = w.layer(0);
        let mut remasked = l.values.clone();
        for (i, v) in remasked.iter_mut().enumerate() {
            if !m.layers[0].get(i) {
                *v = 0;
            }
        }
        assert_eq!(remasked, l.values);
    }
}
