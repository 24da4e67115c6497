#![allow(dead_code)]

use prunelab::network::{Activation, InitScheme, LayerSpec, Mask, MaskedNetwork};
use prunelab::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random MLP with 1..=max_layers layers and widths in 2..=max_width,
/// random biases, and (when `density` is given) i.i.d. Bernoulli masks.
pub fn random_net(rng: &mut ChaCha8Rng, max_layers: usize, max_width: usize, density: Option<f64>) -> MaskedNetwork {
    let depth = rng.random_range(1..=max_layers);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=max_width)).collect();
    let specs = LayerSpec::mlp(&widths);
    let mut net = MaskedNetwork::initialize(&specs, InitScheme::KaimingNormalFanIn, rng.random()).unwrap();
    for l in 0..depth {
        let b = net.biases()[l].map(|_| 0.0);
        let data = b.data().iter().map(|_| 0.1 * normal(rng)).collect();
        net.set_biases(l, Tensor::new(b.shape().to_vec(), data).unwrap()).unwrap();
    }
    if let Some(p) = density {
        let masks = specs.iter().map(|s| random_mask(rng, s.fan_out, s.fan_in, p)).collect();
        net.set_masks(masks).unwrap();
    }
    net
}

pub fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> Mask {
    Mask::from_bits(rows, cols, (0..rows * cols).map(|_| rng.random_bool(density)).collect()).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let x = Tensor::matrix(n, dim, (0..n * dim).map(|_| normal(rng)).collect()).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (x, labels)
}

/// Plain-loop parameters of a network, independent of the tensor engine.
#[derive(Clone, Debug)]
pub struct RefNet {
    pub layers: Vec<LayerSpec>,
    /// Row-major `fan_out × fan_in`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Multiplies each weight; 0/1 for a mask, any real for a gate.
    pub gate: Vec<Vec<f64>>,
}

impl RefNet {
    pub fn of(net: &MaskedNetwork) -> Self {
        RefNet {
            layers: net.layers().to_vec(),
            w: net.weights().iter().map(|t| t.data().to_vec()).collect(),
            b: net.biases().iter().map(|t| t.data().to_vec()).collect(),
            gate: net.masks().iter().map(|m| m.bits().iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()).collect(),
        }
    }

    /// Mean softmax cross-entropy and the ReLU on/off pattern of every
    /// hidden pre-activation.
    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> (f64, Vec<bool>) {
        let (n, d) = x.dims2().unwrap();
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for r in 0..n {
            let mut h: Vec<f64> = x.data()[r * d..(r + 1) * d].to_vec();
            for (l, spec) in self.layers.iter().enumerate() {
                let mut z = vec![0.0; spec.fan_out];
                for (i, zi) in z.iter_mut().enumerate() {
                    let mut acc = self.b[l][i];
                    for (j, hj) in h.iter().enumerate() {
                        acc += self.w[l][i * spec.fan_in + j] * self.gate[l][i * spec.fan_in + j] * hj;
                    }
                    *zi = acc;
                }
                if spec.activation == Activation::Relu {
                    pattern.extend(z.iter().map(|&v| v > 0.0));
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                h = z;
            }
            let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - h[labels[r]];
        }
        (total / n as f64, pattern)
    }
}

/// Fourth-order central difference of `f` at 0 with step `h`.
pub fn fd4(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Per layer, the unpruned weights whose source neuron is reachable from the
/// input and whose target neuron reaches the output through unpruned edges.
pub fn bfs_connected(net: &MaskedNetwork) -> Vec<Vec<bool>> {
    let depth = net.depth();
    let masks = net.masks();
    let mut forward: Vec<Vec<bool>> = vec![vec![true; net.input_dim()]];
    for m in masks {
        let prev = forward.last().unwrap();
        let next = (0..m.rows()).map(|i| (0..m.cols()).any(|j| prev[j] && m.get(i * m.cols() + j))).collect();
        forward.push(next);
    }
    let mut backward: Vec<Vec<bool>> = vec![Vec::new(); depth + 1];
    backward[depth] = vec![true; net.output_dim()];
    for l in (0..depth).rev() {
        let m = &masks[l];
        backward[l] = (0..m.cols()).map(|j| (0..m.rows()).any(|i| backward[l + 1][i] && m.get(i * m.cols() + j))).collect();
    }
    masks
        .iter()
        .enumerate()
        .map(|(l, m)| {
            (0..m.len())
                .map(|k| {
                    let (i, j) = (k / m.cols(), k % m.cols());
                    m.get(k) && forward[l][j] && backward[l + 1][i]
                })
                .collect()
        })
        .collect()
}
