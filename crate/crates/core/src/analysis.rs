//! Diagnostics for pruned networks: effective sparsity, neuron collapse,
//! per-layer reports and path norms.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{self, Bindings};
use crate::network::{bias_name, mask_name, weight_name, Mask, MaskedNetwork, INPUT_NAME};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Enumeration is refused above this many (dense) input-to-output paths.
pub const PATH_LIMIT: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConnectivity {
    pub weights: usize,
    pub pruned: usize,
    /// Unpruned weights that carry no signal from input to output.
    pub disconnected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveSparsityReport {
    pub actual_sparsity: f64,
    pub effective_sparsity: f64,
    pub disconnected_count: usize,
    pub per_layer: Vec<LayerConnectivity>,
    /// Per layer, the unpruned weights that lie on an input-to-output path.
    pub connected: Vec<Mask>,
}

impl EffectiveSparsityReport {
    /// Unpruned weights that still lie on some input-to-output path.
    pub fn effective_unpruned(&self) -> usize {
        self.per_layer.iter().map(|l| l.weights - l.pruned - l.disconnected).sum()
    }
}

/// Counts unpruned weights that are cut off from the input or the output.
///
/// The probe sets unpruned weights to 1, pruned ones and all biases to 0, and
/// feeds a single all-ones example. The gradient of the summed logits with
/// respect to a weight is then the number of input-to-output paths through
/// it, which is exact in floating point, so a weight is disconnected exactly
/// when its gradient is zero.
pub fn effective_sparsity<T: Scalar>(net: &MaskedNetwork<T>) -> Result<EffectiveSparsityReport> {
    let mut ng = net.graph(None);
    let r = ng.graph.sum(ng.logits);
    ng.graph.set_output(r);
    let mut inputs: Bindings<f64> = Bindings::new();
    for (l, m) in net.masks().iter().enumerate() {
        inputs.insert(weight_name(l), m.to_tensor());
        inputs.insert(mask_name(l), m.to_tensor());
        inputs.insert(bias_name(l), Tensor::zeros(vec![m.rows()]));
    }
    inputs.insert(INPUT_NAME.to_string(), Tensor::ones(vec![1, net.input_dim()]));
    let names: Vec<String> = (0..net.depth()).map(weight_name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let grads = graph::gradient(&ng.graph, &inputs, &refs)?;
    let connected: Vec<Mask> = net
        .masks()
        .iter()
        .zip(&names)
        .map(|(m, name)| {
            let bits = m.bits().iter().zip(grads[name].data()).map(|(&keep, &d)| keep && d != 0.0).collect();
            Mask::from_bits(m.rows(), m.cols(), bits).expect("same shape")
        })
        .collect();
    let per_layer: Vec<LayerConnectivity> = net
        .masks()
        .iter()
        .zip(&connected)
        .map(|(m, c)| LayerConnectivity { weights: m.len(), pruned: m.pruned(), disconnected: m.kept() - c.kept() })
        .collect();
    let total = net.total_weights() as f64;
    let disconnected_count: usize = per_layer.iter().map(|l| l.disconnected).sum();
    Ok(EffectiveSparsityReport {
        actual_sparsity: net.sparsity(),
        effective_sparsity: (net.pruned_weights() + disconnected_count) as f64 / total,
        disconnected_count,
        per_layer,
        connected,
    })
}

/// Effective unpruned weights of `shuffled` over those of `unmodified`.
pub fn effective_param_ratio<T: Scalar>(shuffled: &MaskedNetwork<T>, unmodified: &MaskedNetwork<T>) -> Result<f64> {
    if shuffled.layers() != unmodified.layers() {
        return Err(Error::Shape("effective parameter ratio needs two networks of the same architecture".into()));
    }
    let denom = effective_sparsity(unmodified)?.effective_unpruned();
    if denom == 0 {
        return Err(Error::Degenerate("the reference network has no effective weights".into()));
    }
    Ok(effective_sparsity(shuffled)?.effective_unpruned() as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronCollapseCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Fraction of non-input neurons whose incoming weights are pruned at a
/// rate of at least each threshold. Output units are included.
pub fn neuron_collapse<T: Scalar>(net: &MaskedNetwork<T>, thresholds: &[f64]) -> Result<NeuronCollapseCurve> {
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("thresholds must be ascending within [0, 1]".into()));
    }
    let neuron_sparsity: Vec<f64> = net
        .masks()
        .iter()
        .flat_map(|m| m.bits().chunks(m.cols()).map(|row| row.iter().filter(|&&k| !k).count() as f64 / row.len() as f64).collect::<Vec<_>>())
        .collect();
    let n = neuron_sparsity.len() as f64;
    let fractions = thresholds.iter().map(|&t| neuron_sparsity.iter().filter(|&&s| s >= t).count() as f64 / n).collect();
    Ok(NeuronCollapseCurve { thresholds: thresholds.to_vec(), fractions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub layer: String,
    pub weights: usize,
    pub pruned: usize,
    pub sparsity: f64,
    /// Set when every weight of the layer is pruned.
    pub fully_pruned: bool,
}

pub const LAYER_REPORT_HEADER: &str = "layer,weights,pruned,sparsity,flag";

/// One row per layer followed by an `overall` row.
pub fn layerwise_report<T: Scalar>(net: &MaskedNetwork<T>) -> Vec<LayerRow> {
    let mut rows: Vec<LayerRow> = net
        .masks()
        .iter()
        .enumerate()
        .map(|(l, m)| LayerRow {
            layer: format!("layer{l}"),
            weights: m.len(),
            pruned: m.pruned(),
            sparsity: m.pruned() as f64 / m.len() as f64,
            fully_pruned: m.pruned() == m.len(),
        })
        .collect();
    rows.push(LayerRow {
        layer: "overall".into(),
        weights: net.total_weights(),
        pruned: net.pruned_weights(),
        sparsity: net.sparsity(),
        fully_pruned: net.pruned_weights() == net.total_weights(),
    });
    rows
}

pub fn layerwise_csv(rows: &[LayerRow]) -> String {
    let mut out = format!("{LAYER_REPORT_HEADER}\n");
    for r in rows {
        let flag = if r.fully_pruned { "FULLY_PRUNED" } else { "" };
        let _ = writeln!(out, "{},{},{},{},{}", r.layer, r.weights, r.pruned, r.sparsity, flag);
    }
    out
}

fn path_count<T: Scalar>(net: &MaskedNetwork<T>) -> u128 {
    net.layers().iter().fold(net.input_dim() as u128, |acc, s| acc.saturating_mul(s.fan_out as u128))
}

/// Calls `f(neurons, product)` for every input-to-output path of unpruned
/// edges, where `neurons[ℓ]` is the path's neuron at depth ℓ (0 = input) and
/// `product` is the product of the edge magnitudes.
fn for_each_path<T: Scalar>(net: &MaskedNetwork<T>, mut f: impl FnMut(&[usize], f64)) -> Result<()> {
    let paths = path_count(net);
    if paths > PATH_LIMIT {
        return Err(Error::TooManyPaths { paths, limit: PATH_LIMIT });
    }
    let w: Vec<Tensor<f64>> = (0..net.depth()).map(|l| net.effective_weights(l).to_f64()).collect();
    fn walk(w: &[Tensor<f64>], neurons: &mut Vec<usize>, product: f64, f: &mut dyn FnMut(&[usize], f64)) {
        let depth = neurons.len() - 1;
        if depth == w.len() {
            f(neurons, product);
            return;
        }
        let from = neurons[depth];
        let (rows, cols) = w[depth].dims2().expect("matrix");
        for to in 0..rows {
            let v = w[depth].data()[to * cols + from];
            if v != 0.0 {
                neurons.push(to);
                walk(w, neurons, product * v.abs(), f);
                neurons.pop();
            }
        }
    }
    for i in 0..net.input_dim() {
        walk(&w, &mut vec![i], 1.0, &mut f);
    }
    Ok(())
}

/// Sum over input-to-output paths of the product of `|w|` along the path,
/// counting unpruned edges only.
pub fn path_norm<T: Scalar>(net: &MaskedNetwork<T>) -> Result<f64> {
    let mut total = 0.0;
    for_each_path(net, |_, p| total += p)?;
    Ok(total)
}

/// Sum of the path products over the paths through one weight
/// (`index` is row-major in the `fan_out × fan_in` matrix of `layer`).
pub fn synflow_score_oracle<T: Scalar>(net: &MaskedNetwork<T>, layer: usize, index: usize) -> Result<f64> {
    let spec = net.layers().get(layer).ok_or_else(|| Error::Config(format!("no layer {layer}")))?;
    if index >= spec.weight_count() {
        return Err(Error::Config(format!("layer {layer} has no weight {index}")));
    }
    let (to, from) = (index / spec.fan_in, index % spec.fan_in);
    let mut total = 0.0;
    for_each_path(net, |n, p| {
        if n[layer] == from && n[layer + 1] == to {
            total += p;
        }
    })?;
    Ok(total)
}

/// For every weight, the sum of the path products over the paths through it,
/// from a single enumeration of all paths.
pub fn path_contributions<T: Scalar>(net: &MaskedNetwork<T>) -> Result<Vec<Tensor<f64>>> {
    let mut acc: Vec<Vec<f64>> = net.layers().iter().map(|s| vec![0.0; s.weight_count()]).collect();
    let fan_in: Vec<usize> = net.layers().iter().map(|s| s.fan_in).collect();
    for_each_path(net, |n, p| {
        for (l, a) in acc.iter_mut().enumerate() {
            a[n[l + 1] * fan_in[l] + n[l]] += p;
        }
    })?;
    net.layers().iter().zip(acc).map(|(s, a)| Tensor::matrix(s.fan_out, s.fan_in, a)).collect()
}
