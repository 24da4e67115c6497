//! Masked fully-connected networks.
//!
//! Weights are stored `fan_out × fan_in`, row-major. The forward pass always
//! uses `w ⊙ m`, so a pruned weight contributes nothing to outputs or to
//! gradients regardless of the value stored under it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{self, Bindings, Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "none" => Some(Activation::None),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec { fan_in, fan_out, activation }
    }

    pub fn weight_count(&self) -> usize {
        self.fan_in * self.fan_out
    }

    /// ReLU hidden layers and a linear output layer through the given widths.
    pub fn mlp(widths: &[usize]) -> Vec<LayerSpec> {
        let n = widths.len().saturating_sub(1);
        (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::None } else { Activation::Relu };
                LayerSpec::new(widths[i], widths[i + 1], act)
            })
            .collect()
    }

    /// 784 → 300 → 100 → 10.
    pub fn lenet_300_100() -> Vec<LayerSpec> {
        Self::mlp(&[784, 300, 100, 10])
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.fan_in == 0 || s.fan_out == 0 {
            return Err(Error::Config(format!("layer {i} has a zero fan-in or fan-out")));
        }
        if i > 0 && specs[i - 1].fan_out != s.fan_in {
            return Err(Error::Config(format!("layer {i} expects {} inputs but layer {} produces {}", s.fan_in, i - 1, specs[i - 1].fan_out)));
        }
    }
    if specs.last().map(|s| s.activation) != Some(Activation::None) {
        return Err(Error::Config("the last layer must have no activation (logits)".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum InitScheme {
    /// Normal with variance `2 / fan_in`.
    #[default]
    KaimingNormalFanIn,
    /// Normal with the same variance in every layer.
    FixedVariance(f64),
}

impl InitScheme {
    pub fn variance(&self, fan_in: usize) -> f64 {
        match *self {
            InitScheme::KaimingNormalFanIn => 2.0 / fan_in as f64,
            InitScheme::FixedVariance(v) => v,
        }
    }
}

/// Binary keep (true) / prune (false) pattern over one weight matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Shape(format!("{} mask bits for a {rows}×{cols} layer", bits.len())));
        }
        Ok(Mask { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        self.bits[i] = keep;
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pruned(&self) -> usize {
        self.len() - self.kept()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("mask dimensions are positive")
    }

    /// Positions kept by both masks.
    pub fn and(&self, other: &Mask) -> Mask {
        Mask { rows: self.rows, cols: self.cols, bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect() }
    }
}

/// Loss used when differentiating a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Mean softmax cross-entropy against one-hot (or probability) targets.
    CrossEntropy,
    /// Mean squared error between logits and targets.
    SquaredError,
}

pub fn weight_name(layer: usize) -> String {
    format!("w{layer}")
}

pub fn bias_name(layer: usize) -> String {
    format!("b{layer}")
}

pub fn mask_name(layer: usize) -> String {
    format!("m{layer}")
}

pub const INPUT_NAME: &str = "x";
pub const TARGET_NAME: &str = "y";

/// A network wired into a [`Graph`]: input `x`, weights `w{ℓ}`, masks `m{ℓ}`,
/// biases `b{ℓ}` and (with a loss) targets `y`.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    pub graph: Graph,
    pub logits: NodeId,
    pub loss: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedNetwork<T = f64> {
    layers: Vec<LayerSpec>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
    masks: Vec<Mask>,
}

/// Gradients of a loss with respect to the weights (already masked) and biases.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub loss: T,
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

fn sample_weights<T: Scalar>(spec: &LayerSpec, std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let data = (0..spec.weight_count())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::new(vec![spec.fan_out, spec.fan_in], data).expect("validated layer dimensions")
}

impl<T: Scalar> MaskedNetwork<T> {
    /// Weights drawn from the scheme, zero biases, nothing pruned.
    pub fn initialize(specs: &[LayerSpec], scheme: InitScheme, seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        if let InitScheme::FixedVariance(v) = scheme {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("fixed variance must be positive, got {v}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = specs.iter().map(|s| sample_weights(s, scheme.variance(s.fan_in).sqrt(), &mut rng)).collect();
        let biases = specs.iter().map(|s| Tensor::zeros(vec![s.fan_out])).collect();
        let masks = specs.iter().map(|s| Mask::ones(s.fan_out, s.fan_in)).collect();
        Ok(MaskedNetwork { layers: specs.to_vec(), weights, biases, masks })
    }

    /// Assembles a network from explicit parameters.
    pub fn from_parts(layers: Vec<LayerSpec>, weights: Vec<Tensor<T>>, biases: Vec<Tensor<T>>, masks: Vec<Mask>) -> Result<Self> {
        validate_specs(&layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() || masks.len() != layers.len() {
            return Err(Error::Shape("parameter lists must have one entry per layer".into()));
        }
        for (i, s) in layers.iter().enumerate() {
            if weights[i].shape() != [s.fan_out, s.fan_in] {
                return Err(Error::Shape(format!("layer {i} weight shape {:?}", weights[i].shape())));
            }
            if biases[i].shape() != [s.fan_out] {
                return Err(Error::Shape(format!("layer {i} bias shape {:?}", biases[i].shape())));
            }
            if masks[i].rows != s.fan_out || masks[i].cols != s.fan_in {
                return Err(Error::Shape(format!("layer {i} mask is {}×{}", masks[i].rows, masks[i].cols)));
            }
        }
        Ok(MaskedNetwork { layers, weights, biases, masks })
    }

    /// Fresh weights from `scheme`, zero biases, masks kept exactly.
    pub fn reinitialize(&self, scheme: InitScheme, seed: u64) -> Result<Self> {
        let mut fresh = Self::initialize(&self.layers, scheme, seed)?;
        fresh.masks = self.masks.clone();
        Ok(fresh)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn set_masks(&mut self, masks: Vec<Mask>) -> Result<()> {
        if masks.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} masks for {} layers", masks.len(), self.layers.len())));
        }
        for (i, (m, s)) in masks.iter().zip(&self.layers).enumerate() {
            if m.rows != s.fan_out || m.cols != s.fan_in {
                return Err(Error::Shape(format!("mask {i} is {}×{}, layer is {}×{}", m.rows, m.cols, s.fan_out, s.fan_in)));
            }
        }
        self.masks = masks;
        Ok(())
    }

    pub fn set_weights(&mut self, layer: usize, w: Tensor<T>) -> Result<()> {
        if w.shape() != self.weights[layer].shape() {
            return Err(Error::Shape(format!("layer {layer} weight shape {:?}", w.shape())));
        }
        self.weights[layer] = w;
        Ok(())
    }

    pub fn set_biases(&mut self, layer: usize, b: Tensor<T>) -> Result<()> {
        if b.shape() != self.biases[layer].shape() {
            return Err(Error::Shape(format!("layer {layer} bias shape {:?}", b.shape())));
        }
        self.biases[layer] = b;
        Ok(())
    }

    /// `w ⊙ m` for one layer.
    pub fn effective_weights(&self, layer: usize) -> Tensor<T> {
        let m = &self.masks[layer];
        let w = &self.weights[layer];
        let data = w.data().iter().zip(m.bits()).map(|(&v, &k)| if k { v } else { T::zero() }).collect();
        Tensor::new(w.shape().to_vec(), data).expect("same shape as weights")
    }

    /// Copy with pruned positions overwritten by zero and masks left in place.
    pub fn zero_pruned(&self) -> Self {
        let mut out = self.clone();
        out.weights = (0..self.depth()).map(|l| self.effective_weights(l)).collect();
        out
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    pub fn pruned_weights(&self) -> usize {
        self.masks.iter().map(Mask::pruned).sum()
    }

    /// Fraction of weight-matrix entries pruned; biases are not counted.
    pub fn sparsity(&self) -> f64 {
        self.pruned_weights() as f64 / self.total_weights() as f64
    }

    pub fn layerwise_sparsity(&self) -> Vec<f64> {
        self.masks.iter().map(|m| m.pruned() as f64 / m.len() as f64).collect()
    }

    /// Graph computing logits (and optionally a loss) from bound parameters.
    pub fn graph(&self, loss: Option<Loss>) -> NetworkGraph {
        let mut g = Graph::new();
        let mut h = g.input(INPUT_NAME);
        for (l, spec) in self.layers.iter().enumerate() {
            let w = g.input(&weight_name(l));
            let m = g.input(&mask_name(l));
            let b = g.input(&bias_name(l));
            let wm = g.mul(w, m);
            let z = g.matmul_transb(h, wm);
            h = g.add_bias(z, b);
            if spec.activation == Activation::Relu {
                h = g.relu(h);
            }
        }
        let logits = h;
        let loss = loss.map(|kind| {
            let y = g.input(TARGET_NAME);
            match kind {
                Loss::CrossEntropy => g.softmax_cross_entropy(logits, y),
                Loss::SquaredError => g.mean_squared_error(logits, y),
            }
        });
        if loss.is_none() {
            g.set_output(logits);
        }
        NetworkGraph { graph: g, logits, loss }
    }

    /// Parameter and mask bindings for [`Self::graph`].
    pub fn parameter_bindings(&self) -> Bindings<T> {
        let mut b = Bindings::new();
        for l in 0..self.depth() {
            b.insert(weight_name(l), self.weights[l].clone());
            b.insert(mask_name(l), self.masks[l].to_tensor());
            b.insert(bias_name(l), self.biases[l].clone());
        }
        b
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        match batch.dims2() {
            Some((_, d)) if d == self.input_dim() => Ok(()),
            _ => Err(Error::Shape(format!("batch shape {:?}, network expects n × {}", batch.shape(), self.input_dim()))),
        }
    }

    /// Logits `n × fan_out` for a batch `n × fan_in`, using masked weights.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let ng = self.graph(None);
        let mut inputs = self.parameter_bindings();
        inputs.insert(INPUT_NAME.to_string(), batch.clone());
        graph::evaluate(&ng.graph, &inputs)
    }

    /// Loss and its gradients with respect to every weight matrix and bias.
    /// Weight gradients vanish at pruned positions.
    pub fn loss_gradients(&self, batch: &Tensor<T>, targets: &Tensor<T>, loss: Loss) -> Result<ParamGrads<T>> {
        self.check_batch(batch)?;
        let ng = self.graph(Some(loss));
        let mut inputs = self.parameter_bindings();
        inputs.insert(INPUT_NAME.to_string(), batch.clone());
        inputs.insert(TARGET_NAME.to_string(), targets.clone());
        let names: Vec<String> = (0..self.depth()).flat_map(|l| [weight_name(l), bias_name(l)]).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let tape = graph::forward(&ng.graph, &inputs)?;
        let value = tape.output().item().expect("losses are scalar");
        let mut grads = tape.backward(&refs)?;
        let mut weights = Vec::with_capacity(self.depth());
        let mut biases = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            weights.push(grads.remove(&weight_name(l)).expect("requested"));
            biases.push(grads.remove(&bias_name(l)).expect("requested"));
        }
        Ok(ParamGrads { loss: value, weights, biases })
    }
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (r, &c) in labels.iter().enumerate() {
        data[r * classes + c] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data).expect("labels nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MaskedNetwork {
        MaskedNetwork::initialize(&LayerSpec::mlp(&[6, 5, 3]), InitScheme::KaimingNormalFanIn, 11).unwrap()
    }

    #[test]
    fn kaiming_layer_variances() {
        let specs = LayerSpec::lenet_300_100();
        let v: Vec<f64> = specs.iter().map(|s| InitScheme::KaimingNormalFanIn.variance(s.fan_in)).collect();
        assert_eq!(v, vec![2.0 / 784.0, 2.0 / 300.0, 2.0 / 100.0]);
        let net = MaskedNetwork::<f64>::initialize(&specs, InitScheme::KaimingNormalFanIn, 3).unwrap();
        for (w, var) in net.weights().iter().zip(&v) {
            let n = w.numel() as f64;
            let emp = w.data().iter().map(|x| x * x).sum::<f64>() / n;
            assert!((emp / var - 1.0).abs() < 0.1, "empirical {emp} vs {var}");
        }
    }

    #[test]
    fn fixed_variance_sample_variance() {
        let specs = LayerSpec::mlp(&[200, 150, 100, 10]);
        let net = MaskedNetwork::<f64>::initialize(&specs, InitScheme::FixedVariance(1.0), 5).unwrap();
        for (w, s) in net.weights().iter().zip(&specs) {
            if s.fan_in < 100 {
                continue;
            }
            let n = w.numel() as f64;
            let mean = w.data().iter().sum::<f64>() / n;
            let var = w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 0.05, "variance {var}");
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(toy(), toy());
        let other = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 5, 3]), InitScheme::KaimingNormalFanIn, 12).unwrap();
        assert_ne!(toy().weights(), other.weights());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MaskedNetwork::<f64>::initialize(&[], InitScheme::default(), 0).is_err());
        let zero = [LayerSpec::new(0, 3, Activation::None)];
        assert!(MaskedNetwork::<f64>::initialize(&zero, InitScheme::default(), 0).is_err());
        let relu_out = [LayerSpec::new(3, 3, Activation::Relu)];
        assert!(MaskedNetwork::<f64>::initialize(&relu_out, InitScheme::default(), 0).is_err());
        let chain = [LayerSpec::new(3, 4, Activation::Relu), LayerSpec::new(5, 2, Activation::None)];
        assert!(MaskedNetwork::<f64>::initialize(&chain, InitScheme::default(), 0).is_err());
    }

    #[test]
    fn fully_pruned_net_outputs_biases() {
        let mut net = toy();
        net.set_biases(1, Tensor::vector(vec![0.5, -1.0, 2.0])).unwrap();
        let masks = net.layers().iter().map(|s| Mask::zeros(s.fan_out, s.fan_in)).collect();
        net.set_masks(masks).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|v| v as f64).collect()).unwrap();
        let out = net.predict(&x).unwrap();
        assert_eq!(out.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layers = vec![LayerSpec::new(3, 3, Activation::None)];
        let net = MaskedNetwork::from_parts(layers, vec![Tensor::identity(3)], vec![Tensor::zeros(vec![3])], vec![Mask::ones(3, 3)]).unwrap();
        let x = Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn masking_equals_zeroing() {
        let mut net = toy();
        let mut masks = net.masks().to_vec();
        masks[0].set(7, false);
        masks[1].set(2, false);
        net.set_masks(masks).unwrap();
        let mut explicit = toy();
        let mut w0 = explicit.weights()[0].data().to_vec();
        w0[7] = 0.0;
        explicit.set_weights(0, Tensor::matrix(5, 6, w0).unwrap()).unwrap();
        let mut w1 = explicit.weights()[1].data().to_vec();
        w1[2] = 0.0;
        explicit.set_weights(1, Tensor::matrix(3, 5, w1).unwrap()).unwrap();
        let x = Tensor::matrix(4, 6, (0..24).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(net.predict(&x).unwrap(), explicit.predict(&x).unwrap());
    }

    #[test]
    fn sparsity_accounting() {
        let layers = vec![LayerSpec::new(2, 2, Activation::None)];
        let mut net = MaskedNetwork::<f64>::initialize(&layers, InitScheme::default(), 0).unwrap();
        assert_eq!(net.sparsity(), 0.0);
        net.set_masks(vec![Mask::from_bits(2, 2, vec![true, true, false, true]).unwrap()]).unwrap();
        assert_eq!(net.sparsity(), 0.25);

        // layers of 10 and 30 weights at layerwise sparsity 0.5 and 0
        let mut net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[2, 5, 6]), InitScheme::default(), 0).unwrap();
        let mut m0 = Mask::ones(5, 2);
        for i in 0..5 {
            m0.set(i, false);
        }
        net.set_masks(vec![m0, Mask::ones(6, 5)]).unwrap();
        assert_eq!(net.layerwise_sparsity(), vec![0.5, 0.0]);
        assert_eq!(net.sparsity(), 5.0 / 40.0);
    }

    #[test]
    fn reinitialize_keeps_masks() {
        let mut net = toy();
        let mut masks = net.masks().to_vec();
        masks[0].set(0, false);
        masks[1].set(4, false);
        net.set_masks(masks).unwrap();
        let fresh = net.reinitialize(InitScheme::KaimingNormalFanIn, 99).unwrap();
        assert_eq!(fresh.masks(), net.masks());
        assert_ne!(fresh.weights(), net.weights());
        assert_eq!(fresh.sparsity(), net.sparsity());
        assert!(fresh.biases().iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn pruned_gradients_vanish() {
        let mut net = toy();
        let mut masks = net.masks().to_vec();
        masks[0].set(3, false);
        net.set_masks(masks).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|v| v as f64 / 7.0).collect()).unwrap();
        let y = one_hot(&[0, 2], 3);
        let g = net.loss_gradients(&x, &y, Loss::CrossEntropy).unwrap();
        assert_eq!(g.weights[0].data()[3], 0.0);
        assert!(g.loss > 0.0);
    }
}
