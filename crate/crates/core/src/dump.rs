//! Text dumps of masked networks, optionally with optimizer state.
//!
//! The layout is described in `docs/dump-format.md`. In short: a header of
//! `key value` lines, a `---` separator, then one `kind layer base64` line
//! per array. Masks are packed bits (LSB first, row-major); every real array
//! is little-endian `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use crate::error::{Error, Result};
use crate::network::{Activation, LayerSpec, Mask, MaskedNetwork};
use crate::tensor::Tensor;

pub const MAGIC: &str = "prunelab-dump";
pub const VERSION: u32 = 1;

/// Momentum buffers carried by checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub weights: Vec<Tensor<f64>>,
    pub biases: Vec<Tensor<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub method: String,
    pub seed: u64,
    pub network: MaskedNetwork<f64>,
    /// Free-form header entries; keys must be single words.
    pub extra: BTreeMap<String, String>,
    pub momentum: Option<Momentum>,
}

impl Dump {
    pub fn new(method: impl Into<String>, seed: u64, network: MaskedNetwork<f64>) -> Self {
        Dump { method: method.into(), seed, network, extra: BTreeMap::new(), momentum: None }
    }

    pub fn to_text(&self) -> String {
        let net = &self.network;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "method {}", self.method);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "sparsity {}", net.sparsity());
        let _ = writeln!(out, "layers {}", net.depth());
        for (l, spec) in net.layers().iter().enumerate() {
            let _ = writeln!(out, "layer {l} {} {} {}", spec.fan_in, spec.fan_out, spec.activation.as_str());
        }
        let _ = writeln!(out, "momentum {}", if self.momentum.is_some() { 1 } else { 0 });
        for (k, v) in &self.extra {
            let _ = writeln!(out, "extra {k} {v}");
        }
        out.push_str("---\n");
        for l in 0..net.depth() {
            let _ = writeln!(out, "mask {l} {}", STANDARD.encode(pack_bits(net.masks()[l].bits())));
            let _ = writeln!(out, "weight {l} {}", STANDARD.encode(f64_bytes(net.weights()[l].data())));
            let _ = writeln!(out, "bias {l} {}", STANDARD.encode(f64_bytes(net.biases()[l].data())));
            if let Some(m) = &self.momentum {
                let _ = writeln!(out, "momentum_weight {l} {}", STANDARD.encode(f64_bytes(m.weights[l].data())));
                let _ = writeln!(out, "momentum_bias {l} {}", STANDARD.encode(f64_bytes(m.biases[l].data())));
            }
        }
        out
    }

    /// Parses a dump. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(origin, msg);
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.split_whitespace().collect()))
                .ok_or_else(|| Error::format(origin, format!("unexpected end of file, expected {what}")))
        };
        let (_, magic) = next("the magic line")?;
        if magic.len() != 2 || magic[0] != MAGIC {
            return Err(bad("not a prunelab dump".into()));
        }
        if magic[1] != VERSION.to_string() {
            return Err(bad(format!("unsupported version {}", magic[1])));
        }
        let field = |(line, parts): (usize, Vec<&str>), key: &str| -> Result<String> {
            match parts.as_slice() {
                [k, v] if *k == key => Ok(v.to_string()),
                _ => Err(Error::format(origin, format!("line {line}: expected `{key} <value>`"))),
            }
        };
        let number = |s: String, line_key: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::format(origin, format!("{line_key}: `{s}` is not an integer")))
        };
        let method = field(next("method")?, "method")?;
        let seed = number(field(next("seed")?, "seed")?, "seed")?;
        let sparsity_line = next("sparsity")?;
        let sparsity_at = sparsity_line.0;
        let sparsity: f64 = field(sparsity_line, "sparsity")?.parse().map_err(|_| bad(format!("line {sparsity_at}: sparsity is not a number")))?;
        let depth = number(field(next("layers")?, "layers")?, "layers")? as usize;
        let mut specs = Vec::with_capacity(depth);
        for l in 0..depth {
            let (line, parts) = next("a layer line")?;
            let spec = match parts.as_slice() {
                ["layer", idx, fan_in, fan_out, act] if idx.parse() == Ok(l) => {
                    let fan_in = fan_in.parse().map_err(|_| bad(format!("line {line}: bad fan-in")))?;
                    let fan_out = fan_out.parse().map_err(|_| bad(format!("line {line}: bad fan-out")))?;
                    let act = Activation::parse(act).ok_or_else(|| bad(format!("line {line}: unknown activation `{act}`")))?;
                    LayerSpec::new(fan_in, fan_out, act)
                }
                _ => return Err(bad(format!("line {line}: expected `layer {l} <fan_in> <fan_out> <activation>`"))),
            };
            specs.push(spec);
        }
        let has_momentum = field(next("momentum")?, "momentum")? == "1";
        let mut extra = BTreeMap::new();
        loop {
            let (line, parts) = next("`---`")?;
            match parts.as_slice() {
                ["---"] => break,
                ["extra", k, rest @ ..] => {
                    extra.insert(k.to_string(), rest.join(" "));
                }
                _ => return Err(bad(format!("line {line}: unexpected header entry"))),
            }
        }
        let mut masks = Vec::with_capacity(depth);
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        let mut mom_w = Vec::new();
        let mut mom_b = Vec::new();
        for (l, spec) in specs.iter().enumerate() {
            let mut array = |kind: &str| -> Result<Vec<u8>> {
                let (line, parts) = next(kind)?;
                match parts.as_slice() {
                    [k, idx, payload] if *k == kind && idx.parse() == Ok(l) => STANDARD.decode(payload).map_err(|e| bad(format!("line {line}: {e}"))),
                    _ => Err(bad(format!("line {line}: expected `{kind} {l} <base64>`"))),
                }
            };
            let (rows, cols) = (spec.fan_out, spec.fan_in);
            let bits = unpack_bits(&array("mask")?, rows * cols).ok_or_else(|| bad(format!("mask {l} has the wrong length")))?;
            masks.push(Mask::from_bits(rows, cols, bits)?);
            let shaped = |bytes: Vec<u8>, shape: Vec<usize>, what: &str| -> Result<Tensor<f64>> {
                let data = bytes_f64(&bytes).ok_or_else(|| bad(format!("{what} {l} is not a whole number of f64 values")))?;
                Tensor::new(shape, data).map_err(|_| bad(format!("{what} {l} has the wrong length")))
            };
            weights.push(shaped(array("weight")?, vec![rows, cols], "weight")?);
            biases.push(shaped(array("bias")?, vec![rows], "bias")?);
            if has_momentum {
                mom_w.push(shaped(array("momentum_weight")?, vec![rows, cols], "momentum_weight")?);
                mom_b.push(shaped(array("momentum_bias")?, vec![rows], "momentum_bias")?);
            }
        }
        let network = MaskedNetwork::from_parts(specs, weights, biases, masks)?;
        if network.sparsity() != sparsity {
            return Err(bad(format!("header sparsity {sparsity} disagrees with the masks ({})", network.sparsity())));
        }
        let momentum = has_momentum.then_some(Momentum { weights: mom_w, biases: mom_b });
        Ok(Dump { method, seed, network, extra, momentum })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Packs bits eight to a byte, least significant bit first.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i))).collect()
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_f64(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::InitScheme;
    use crate::pruning::{remove, score_magnitude, Direction};

    fn pruned_net() -> MaskedNetwork {
        let mut net = MaskedNetwork::initialize(&LayerSpec::mlp(&[7, 5, 3]), InitScheme::default(), 4).unwrap();
        let z = score_magnitude(&net).unwrap();
        net.set_masks(remove(&z, 0.4, Direction::Lowest).unwrap()).unwrap();
        net
    }

    #[test]
    fn bit_packing() {
        assert_eq!(pack_bits(&[true, false, true, true, false, false, false, false, true]), vec![0b1101, 1]);
        assert_eq!(unpack_bits(&[0b1101, 1], 9).unwrap(), vec![true, false, true, true, false, false, false, false, true]);
        assert!(unpack_bits(&[0], 9).is_none());
    }

    #[test]
    fn round_trip() {
        let mut dump = Dump::new("magnitude", 99, pruned_net());
        dump.extra.insert("note".into(), "two words".into());
        let back = Dump::parse(&dump.to_text(), "mem").unwrap();
        assert_eq!(back, dump);
        assert_eq!(back.network.sparsity(), dump.network.sparsity());
    }

    #[test]
    fn round_trip_with_momentum() {
        let net = pruned_net();
        let mut dump = Dump::new("ckpt", 1, net.clone());
        dump.momentum = Some(Momentum { weights: net.weights().iter().map(|w| w.map(|v| v * 0.5)).collect(), biases: net.biases().to_vec() });
        assert_eq!(Dump::parse(&dump.to_text(), "mem").unwrap(), dump);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Dump::parse("hello 1\n", "f").unwrap_err().to_string().contains("f"));
        let text = Dump::new("m", 0, pruned_net()).to_text();
        let tampered = text.replacen("sparsity 0.4", "sparsity 0.5", 1);
        assert!(Dump::parse(&tampered, "f").is_err());
        let truncated: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(Dump::parse(&truncated, "f").is_err());
    }
}
