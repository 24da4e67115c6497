use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Method, ScoreSet, ScoringBatch};
use crate::error::{Error, Result};
use crate::graph::{self, Bindings};
use crate::network::{weight_name, Loss, MaskedNetwork, INPUT_NAME, TARGET_NAME};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn score_set<T: Scalar>(net: &MaskedNetwork<T>, method: Method, per_layer: Vec<Tensor<T>>) -> Result<ScoreSet> {
    let scores = per_layer.iter().map(Tensor::to_f64).collect();
    ScoreSet::new(method, scores, net.masks().to_vec())
}

/// i.i.d. `Uniform(0, 1)` scores.
pub fn score_random<T: Scalar>(net: &MaskedNetwork<T>, seed: u64) -> Result<ScoreSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = net
        .weights()
        .iter()
        .map(|w| {
            let data = (0..w.numel()).map(|_| rng.random::<f64>()).collect();
            Tensor::new(w.shape().to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(Method::Random, scores, net.masks().to_vec())
}

/// `|w|`.
pub fn score_magnitude<T: Scalar>(net: &MaskedNetwork<T>) -> Result<ScoreSet> {
    let z = net.weights().iter().map(|w| w.map(|v| v.abs())).collect();
    score_set(net, Method::Magnitude, z)
}

/// `|g ⊙ w|` with `g` the gradient of `loss` on the given examples, taken
/// at the masked parameters.
pub fn score_snip_with_loss<T: Scalar>(net: &MaskedNetwork<T>, inputs: &Tensor<T>, targets: &Tensor<T>, loss: Loss) -> Result<ScoreSet> {
    if inputs.numel() == 0 {
        return Err(Error::Config("empty scoring batch".into()));
    }
    let grads = net.loss_gradients(inputs, targets, loss)?;
    let z = grads.weights.iter().zip(net.weights()).map(|(g, w)| g.zip_map(w, |a, b| (a * b).abs())).collect::<Result<Vec<_>>>()?;
    score_set(net, Method::Snip, z)
}

/// SNIP: `|g ⊙ w|` under mean softmax cross-entropy on the batch.
pub fn score_snip<T: Scalar>(net: &MaskedNetwork<T>, batch: &ScoringBatch) -> Result<ScoreSet> {
    if batch.is_empty() {
        return Err(Error::Config("empty scoring batch".into()));
    }
    score_snip_with_loss(net, &batch.inputs_as(), &batch.targets(), Loss::CrossEntropy)
}

/// GraSP: `-w ⊙ (H g)` where `H` and `g` are the Hessian and gradient of the
/// mean cross-entropy with respect to the weight matrices. GraSP removes the
/// highest of these scores.
pub fn score_grasp<T: Scalar>(net: &MaskedNetwork<T>, batch: &ScoringBatch) -> Result<ScoreSet> {
    if batch.is_empty() {
        return Err(Error::Config("empty scoring batch".into()));
    }
    let ng = net.graph(Some(Loss::CrossEntropy));
    let mut inputs: Bindings<T> = net.parameter_bindings();
    inputs.insert(INPUT_NAME.to_string(), batch.inputs_as());
    inputs.insert(TARGET_NAME.to_string(), batch.targets());
    let names: Vec<String> = (0..net.depth()).map(weight_name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut hg = graph::hessian_grad_product(&ng.graph, &inputs, &refs)?;
    let z = names
        .iter()
        .zip(net.weights())
        .map(|(name, w)| {
            let h = hg.remove(name).expect("requested");
            w.zip_map(&h, |a, b| -(a * b))
        })
        .collect::<Result<Vec<_>>>()?;
    score_set(net, Method::Grasp, z)
}

/// SynFlow: with every weight replaced by `|w ⊙ m|`, biases zeroed and a
/// single all-ones input, `R` is the sum of the logits and the score is
/// `|∂R/∂w ⊙ w|`. The network passed in is not modified.
pub fn score_synflow<T: Scalar>(net: &MaskedNetwork<T>) -> Result<ScoreSet> {
    let mut ng = net.graph(None);
    let r = ng.graph.sum(ng.logits);
    ng.graph.set_output(r);
    let mut inputs: Bindings<T> = Bindings::new();
    for l in 0..net.depth() {
        inputs.insert(weight_name(l), net.effective_weights(l).map(|v| v.abs()));
        inputs.insert(crate::network::mask_name(l), net.masks()[l].to_tensor());
        inputs.insert(crate::network::bias_name(l), Tensor::zeros(net.biases()[l].shape().to_vec()));
    }
    inputs.insert(INPUT_NAME.to_string(), Tensor::ones(vec![1, net.input_dim()]));
    let names: Vec<String> = (0..net.depth()).map(weight_name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut grads = graph::gradient(&ng.graph, &inputs, &refs)?;
    let z = names
        .iter()
        .zip(net.weights())
        .map(|(name, w)| grads.remove(name).expect("requested").zip_map(w, |g, v| (g * v).abs()))
        .collect::<Result<Vec<_>>>()?;
    score_set(net, Method::Synflow, z)
}

/// Dispatches to the scoring rule for `method`.
pub fn score<T: Scalar>(net: &MaskedNetwork<T>, method: Method, batch: Option<&ScoringBatch>, seed: u64) -> Result<ScoreSet> {
    let need_batch = || batch.ok_or_else(|| Error::Config(format!("{method} needs a scoring batch")));
    match method {
        Method::Random => score_random(net, seed),
        Method::Magnitude => score_magnitude(net),
        Method::Snip => score_snip(net, need_batch()?),
        Method::Grasp => score_grasp(net, need_batch()?),
        Method::Synflow => score_synflow(net),
    }
}
