//! Masked SGD and the train / prune / retrain protocols.
//!
//! Iterations are counted from the start of a learning-rate schedule. The
//! examples seen at iteration `i` depend only on the data seed and `i`: epoch
//! `e` visits the training set in a permutation drawn from
//! `mix(data_seed, e)`, so a run can stop and resume anywhere without
//! carrying RNG state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ablations::{apply_ablation, AblationKind};
use crate::data::Dataset;
use crate::dump::{Dump, Momentum};
use crate::error::{Error, Result};
use crate::network::{one_hot, InitScheme, LayerSpec, Loss, MaskedNetwork};
use crate::pruning::{prune, remove, sample_scoring_batch, score_magnitude, Direction, Method, PruneRequest, Schedule};
use crate::scalar::Scalar;
use crate::seeds::mix;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, factor)`: from epoch `epoch + 1` on (1-based) the rate is
    /// multiplied by `factor`.
    pub drops: Vec<(usize, f64)>,
    pub epochs: usize,
    pub batch_size: usize,
}

impl OptimizerConfig {
    /// LeNet-300-100 on MNIST: plain SGD at 0.1, batch 128, 40 epochs.
    pub fn mnist() -> Self {
        OptimizerConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.0, drops: Vec::new(), epochs: 40, batch_size: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.drops.windows(2).any(|w| w[0].0 > w[1].0) {
            return bad("lr drops must be sorted by epoch");
        }
        if self.drops.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            return bad("lr drop factors must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        Ok(())
    }

    /// Rate in effect during 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.drops.iter().filter(|&&(e, _)| e < epoch).fold(self.learning_rate, |lr, &(_, f)| lr * f)
    }

    /// Mini-batches per epoch; a final partial batch is kept.
    pub fn iterations_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    pub fn total_iterations(&self, examples: usize) -> usize {
        self.epochs * self.iterations_per_epoch(examples)
    }
}

/// Optimizer state that survives between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T = f64> {
    pub iteration: usize,
    pub momentum_weights: Vec<Tensor<T>>,
    pub momentum_biases: Vec<Tensor<T>>,
}

impl<T: Scalar> TrainState<T> {
    /// Iteration 0 with zero momentum.
    pub fn fresh(net: &MaskedNetwork<T>) -> Self {
        TrainState {
            iteration: 0,
            momentum_weights: net.weights().iter().map(|w| Tensor::zeros(w.shape().to_vec())).collect(),
            momentum_biases: net.biases().iter().map(|b| Tensor::zeros(b.shape().to_vec())).collect(),
        }
    }
}

/// Parameters and optimizer state at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub net: MaskedNetwork<T>,
    pub state: TrainState<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Training options besides the optimizer.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Iterations at which to store a checkpoint (taken before the step).
    pub checkpoint_at: Vec<usize>,
    /// Evaluate on the test set after every epoch.
    pub eval_each_epoch: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T = f64> {
    pub net: MaskedNetwork<T>,
    pub state: TrainState<T>,
    pub history: History,
    pub checkpoints: BTreeMap<usize, Checkpoint<T>>,
}

fn epoch_order(n: usize, data_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(data_seed, epoch as u64)));
    order
}

/// Runs SGD from `state.iteration` up to (not including) iteration `stop`.
///
/// Weight gradients, weight decay and momentum are all masked, and pruned
/// weights are zeroed on entry, so pruned weights stay exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn train_until<T: Scalar>(
    net: MaskedNetwork<T>,
    state: TrainState<T>,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &OptimizerConfig,
    data_seed: u64,
    stop: usize,
    options: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let ipe = config.iterations_per_epoch(train.len());
    let mut net = net.zero_pruned();
    let mut state = state;
    let mut history = History::default();
    let mut checkpoints = BTreeMap::new();
    let masks: Vec<Tensor<T>> = net.masks().iter().map(|m| m.to_tensor()).collect();
    let mu = T::from_f64(config.momentum);
    let wd = T::from_f64(config.weight_decay);
    let mut order = Vec::new();
    let mut order_epoch = usize::MAX;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    while state.iteration < stop {
        let it = state.iteration;
        if options.checkpoint_at.contains(&it) {
            checkpoints.insert(it, Checkpoint { net: net.clone(), state: state.clone() });
        }
        let (epoch, pos) = (it / ipe, it % ipe);
        if epoch != order_epoch {
            order = epoch_order(train.len(), data_seed, epoch);
            order_epoch = epoch;
        }
        let end = ((pos + 1) * config.batch_size).min(train.len());
        let (x, labels) = train.batch(&order[pos * config.batch_size..end]);
        let grads = net.loss_gradients(&x.cast(), &one_hot(&labels, train.classes()), Loss::CrossEntropy)?;
        if !grads.loss.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        loss_sum += grads.loss.primal();
        loss_count += 1;
        let lr = T::from_f64(config.lr_at_epoch(epoch + 1));
        for (l, mask) in masks.iter().enumerate() {
            let w = &net.weights()[l];
            let mut g = grads.weights[l].clone();
            if config.weight_decay != 0.0 {
                g = g.zip_map(&w.zip_map(mask, |a, m| a * m)?, |a, b| a + wd * b)?;
            }
            let buf = state.momentum_weights[l].zip_map(&g, |v, d| mu * v + d)?.zip_map(mask, |v, m| v * m)?;
            let new_w = w.zip_map(&buf, |a, v| a - lr * v)?;
            state.momentum_weights[l] = buf;
            net.set_weights(l, new_w)?;
            let bbuf = state.momentum_biases[l].zip_map(&grads.biases[l], |v, d| mu * v + d)?;
            let new_b = net.biases()[l].zip_map(&bbuf, |a, v| a - lr * v)?;
            state.momentum_biases[l] = bbuf;
            net.set_biases(l, new_b)?;
        }
        state.iteration += 1;
        if state.iteration.is_multiple_of(ipe) {
            let test_accuracy = match (options.eval_each_epoch, test) {
                (true, Some(t)) => Some(evaluate(&net, t)?),
                _ => None,
            };
            history.epochs.push(EpochRecord { epoch: epoch + 1, train_loss: loss_sum / loss_count as f64, test_accuracy });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    if options.checkpoint_at.contains(&state.iteration) {
        checkpoints.insert(state.iteration, Checkpoint { net: net.clone(), state: state.clone() });
    }
    Ok(TrainOutcome { net, state, history, checkpoints })
}

/// The full schedule from iteration 0 with fresh optimizer state.
pub fn train<T: Scalar>(
    net: MaskedNetwork<T>,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &OptimizerConfig,
    data_seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    let state = TrainState::fresh(&net);
    train_until(net, state, train, test, config, data_seed, config.total_iterations(train.len()), options)
}

/// Restarts the learning-rate schedule and momentum, keeping the weights,
/// and trains for the whole budget.
pub fn retrain_full_schedule<T: Scalar>(
    net: MaskedNetwork<T>,
    train_set: &Dataset,
    test: Option<&Dataset>,
    config: &OptimizerConfig,
    data_seed: u64,
) -> Result<TrainOutcome<T>> {
    train(net, train_set, test, config, data_seed, &TrainOptions::default())
}

/// Top-1 accuracy of the argmax logit; ties go to the lowest class.
pub fn evaluate<T: Scalar>(net: &MaskedNetwork<T>, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 1000;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(CHUNK) {
        let (x, labels) = data.batch(chunk);
        let logits = net.predict(&x.cast())?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let mut best = 0;
            for c in 1..classes {
                if row[c].primal() > row[best].primal() {
                    best = c;
                }
            }
            correct += (best == label) as usize;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Train and test splits for a protocol.
#[derive(Clone, Copy, Debug)]
pub struct Data<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// Seeds of one protocol run. `init` draws the weights, `data` orders the
/// mini-batches and `cell` drives everything specific to the pruning step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunSeeds {
    pub init: u64,
    pub data: u64,
    pub cell: u64,
}

/// How the network is built and pruned.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneSetup {
    pub layers: Vec<LayerSpec>,
    pub init: InitScheme,
    pub method: Method,
    pub sparsity: f64,
    pub schedule: Schedule,
    pub ablation: AblationKind,
    pub scoring_per_class: usize,
    /// Variance used by the `fixed_variance_init` ablation.
    pub fixed_variance: f64,
}

impl PruneSetup {
    pub fn new(layers: Vec<LayerSpec>, method: Method, sparsity: f64) -> Self {
        PruneSetup {
            layers,
            init: InitScheme::KaimingNormalFanIn,
            method,
            sparsity,
            schedule: Schedule::from_iterations(method.default_iterations()),
            ablation: AblationKind::None,
            scoring_per_class: 10,
            fixed_variance: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub net: MaskedNetwork<f64>,
    pub accuracy: f64,
    pub history: History,
}

/// The network after `k` iterations of dense training.
pub fn pretrain(setup: &PruneSetup, data: Data<'_>, config: &OptimizerConfig, seeds: RunSeeds, k: usize) -> Result<MaskedNetwork<f64>> {
    let net = MaskedNetwork::<f64>::initialize(&setup.layers, setup.init, seeds.init)?;
    if k == 0 {
        return Ok(net);
    }
    let total = config.total_iterations(data.train.len());
    if k > total {
        return Err(Error::Config(format!("prune iteration {k} exceeds the {total} training iterations")));
    }
    let state = TrainState::fresh(&net);
    Ok(train_until(net, state, data.train, None, config, seeds.data, k, &TrainOptions::default())?.net)
}

/// Prunes `trained` (the output of [`pretrain`] at `k`) according to `setup`
/// and applies the post-pruning ablation. Weights are left as they were.
pub fn prune_with_setup(trained: &MaskedNetwork<f64>, k: usize, setup: &PruneSetup, data: Data<'_>, seeds: RunSeeds) -> Result<MaskedNetwork<f64>> {
    setup.ablation.check_method(setup.method)?;
    let scoring_net = if setup.ablation == AblationKind::FixedVarianceInit {
        if k != 0 {
            return Err(Error::Config("fixed_variance_init only applies when pruning at initialization".into()));
        }
        MaskedNetwork::initialize(&setup.layers, InitScheme::FixedVariance(setup.fixed_variance), seeds.init)?
    } else {
        trained.clone()
    };
    let batch = if setup.method.needs_data() { Some(sample_scoring_batch(data.train, setup.scoring_per_class, mix(seeds.cell, 1))?) } else { None };
    let mut req = PruneRequest::new(setup.method, setup.sparsity).schedule(setup.schedule).seed(mix(seeds.cell, 2)).ranking(setup.ablation.ranking());
    if let Some(b) = &batch {
        req = req.batch(b);
    }
    let pruned = prune(&scoring_net, &req)?;
    let mut net = trained.clone();
    net.set_masks(pruned.masks().to_vec())?;
    if setup.ablation.acts_after_pruning() {
        net = apply_ablation(&net, setup.ablation, setup.init, mix(seeds.cell, 3))?;
    }
    Ok(net)
}

/// Train `k` iterations, prune, ablate, retrain on the full schedule and
/// evaluate. `k = 0` prunes at initialization; `k` = the full budget prunes
/// after training.
pub fn prune_at_iteration(setup: &PruneSetup, k: usize, data: Data<'_>, config: &OptimizerConfig, seeds: RunSeeds) -> Result<RunResult> {
    let trained = pretrain(setup, data, config, seeds, k)?;
    finish_from(&trained, k, setup, data, config, seeds)
}

/// [`prune_at_iteration`] starting from an already pretrained network.
pub fn finish_from(
    trained: &MaskedNetwork<f64>,
    k: usize,
    setup: &PruneSetup,
    data: Data<'_>,
    config: &OptimizerConfig,
    seeds: RunSeeds,
) -> Result<RunResult> {
    let net = prune_with_setup(trained, k, setup, data, seeds)?;
    let out = retrain_full_schedule(net, data.train, Some(data.test), config, seeds.data)?;
    let accuracy = evaluate(&out.net, data.test)?;
    Ok(RunResult { net: out.net, accuracy, history: out.history })
}

/// Full training, one-shot magnitude pruning of the trained weights, optional
/// ablation, then retraining on the full schedule.
pub fn magnitude_after_training(
    layers: Vec<LayerSpec>,
    data: Data<'_>,
    config: &OptimizerConfig,
    s: f64,
    seeds: RunSeeds,
    ablation: AblationKind,
) -> Result<RunResult> {
    let mut setup = PruneSetup::new(layers, Method::Magnitude, s);
    setup.ablation = ablation;
    prune_at_iteration(&setup, config.total_iterations(data.train.len()), data, config, seeds)
}

/// Lottery-ticket rewinding: the magnitude mask of the fully trained network
/// installed on the weights from iteration `rewind`, then retrained.
pub fn ltr_baseline(layers: Vec<LayerSpec>, data: Data<'_>, config: &OptimizerConfig, s: f64, rewind: usize, seeds: RunSeeds) -> Result<RunResult> {
    let total = config.total_iterations(data.train.len());
    if rewind > total {
        return Err(Error::MissingCheckpoint(rewind));
    }
    let net = MaskedNetwork::<f64>::initialize(&layers, InitScheme::KaimingNormalFanIn, seeds.init)?;
    let options = TrainOptions { checkpoint_at: vec![rewind], eval_each_epoch: false };
    let mut first = train(net, data.train, None, config, seeds.data, &options)?;
    let masks = remove(&score_magnitude(&first.net)?, s, Direction::Lowest)?;
    let mut ticket = first.checkpoints.remove(&rewind).ok_or(Error::MissingCheckpoint(rewind))?.net;
    ticket.set_masks(masks)?;
    let out = retrain_full_schedule(ticket, data.train, Some(data.test), config, seeds.data)?;
    let accuracy = evaluate(&out.net, data.test)?;
    Ok(RunResult { net: out.net, accuracy, history: out.history })
}

/// Writes a checkpoint in the dump format with momentum buffers and the
/// iteration counter.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint<f64>, seed: u64) -> Result<()> {
    let mut dump = Dump::new("checkpoint", seed, ckpt.net.clone());
    dump.extra.insert("iteration".into(), ckpt.state.iteration.to_string());
    dump.momentum = Some(Momentum { weights: ckpt.state.momentum_weights.clone(), biases: ckpt.state.momentum_biases.clone() });
    dump.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    let dump = Dump::read(path)?;
    let origin = path.display().to_string();
    let iteration =
        dump.extra.get("iteration").and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(&origin, "checkpoint has no iteration counter"))?;
    let momentum = dump.momentum.ok_or_else(|| Error::format(&origin, "checkpoint has no momentum buffers"))?;
    Ok(Checkpoint { net: dump.network, state: TrainState { iteration, momentum_weights: momentum.weights, momentum_biases: momentum.biases } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_gaussian, Split};
    use crate::network::Mask;

    fn toy_data(separation: f64) -> (Dataset, Dataset) {
        (synthetic_gaussian(3, 6, 40, separation, 1, Split::Train).unwrap(), synthetic_gaussian(3, 6, 30, separation, 2, Split::Test).unwrap())
    }

    fn small_config() -> OptimizerConfig {
        OptimizerConfig { learning_rate: 0.05, momentum: 0.9, weight_decay: 1e-3, drops: vec![(2, 0.5)], epochs: 4, batch_size: 16 }
    }

    #[test]
    fn mnist_schedule_lengths() {
        let c = OptimizerConfig::mnist();
        assert_eq!(c.iterations_per_epoch(60_000), 469);
        assert_eq!(c.total_iterations(60_000), 18_760);
    }

    #[test]
    fn lr_drops() {
        let c = OptimizerConfig { drops: vec![(80, 0.1), (120, 0.1)], ..OptimizerConfig::mnist() };
        assert_eq!(c.lr_at_epoch(80), 0.1);
        assert!((c.lr_at_epoch(81) - 0.01).abs() < 1e-15);
        assert!((c.lr_at_epoch(121) - 0.001).abs() < 1e-15);
        let bad = OptimizerConfig { momentum: 1.0, ..OptimizerConfig::mnist() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pruned_weights_stay_zero() {
        let (tr, te) = toy_data(3.0);
        let mut net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 8, 3]), InitScheme::default(), 3).unwrap();
        let mut bits = vec![true; 48];
        bits.iter_mut().step_by(3).for_each(|b| *b = false);
        net.set_masks(vec![Mask::from_bits(8, 6, bits.clone()).unwrap(), Mask::ones(3, 8)]).unwrap();
        let out = train(net, &tr, Some(&te), &small_config(), 5, &TrainOptions::default()).unwrap();
        for (i, &keep) in bits.iter().enumerate() {
            if !keep {
                assert_eq!(out.net.weights()[0].data()[i], 0.0);
                assert_eq!(out.state.momentum_weights[0].data()[i], 0.0);
            }
        }
        assert_eq!(out.state.iteration, 4 * 8);
        assert_eq!(out.history.epochs.len(), 4);
    }

    #[test]
    fn checkpoint_replay_is_bitwise() {
        let (tr, _) = toy_data(3.0);
        let cfg = small_config();
        let net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 8, 3]), InitScheme::default(), 3).unwrap();
        let options = TrainOptions { checkpoint_at: vec![11, 12], eval_each_epoch: false };
        let full = train(net, &tr, None, &cfg, 9, &options).unwrap();
        let c11 = full.checkpoints[&11].clone();
        let resumed = train_until(c11.net, c11.state, &tr, None, &cfg, 9, 12, &TrainOptions::default()).unwrap();
        assert_eq!(resumed.net, full.checkpoints[&12].net);
        assert_eq!(resumed.state, full.checkpoints[&12].state);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &full.checkpoints[&11], 9).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), full.checkpoints[&11]);
    }

    #[test]
    fn learns_separable_data() {
        let (tr, te) = toy_data(6.0);
        let net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 3]), InitScheme::default(), 1).unwrap();
        let before = evaluate(&net, &te).unwrap();
        let out = train(net, &tr, Some(&te), &small_config(), 2, &TrainOptions { eval_each_epoch: true, ..Default::default() }).unwrap();
        assert!(evaluate(&out.net, &te).unwrap() > 0.95, "accuracy went from {before}");
        assert!(out.history.epochs.iter().all(|e| e.test_accuracy.is_some()));
    }

    #[test]
    fn divergence_reports_the_iteration() {
        let (tr, _) = toy_data(3.0);
        let cfg = OptimizerConfig { learning_rate: 1e300, ..small_config() };
        let net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 8, 3]), InitScheme::default(), 3).unwrap();
        assert!(matches!(train(net, &tr, None, &cfg, 0, &TrainOptions::default()), Err(Error::Divergence { .. })));
    }

    #[test]
    fn evaluate_ties_and_constants() {
        let data = synthetic_gaussian(10, 10, 5, 1.0, 0, Split::Test).unwrap();
        let mut net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[10, 10]), InitScheme::default(), 0).unwrap();
        net.set_masks(vec![Mask::zeros(10, 10)]).unwrap();
        assert_eq!(evaluate(&net, &data).unwrap(), 0.1);
        let explicit = net.zero_pruned();
        assert_eq!(evaluate(&explicit, &data).unwrap(), evaluate(&net, &data).unwrap());
    }

    #[test]
    fn ltr_shares_the_magnitude_mask() {
        let (tr, te) = toy_data(3.0);
        let data = Data { train: &tr, test: &te };
        let cfg = OptimizerConfig { epochs: 2, ..small_config() };
        let seeds = RunSeeds { init: 1, data: 2, cell: 3 };
        let layers = LayerSpec::mlp(&[6, 8, 3]);
        let mat = magnitude_after_training(layers.clone(), data, &cfg, 0.5, seeds, AblationKind::None).unwrap();
        let ltr = ltr_baseline(layers.clone(), data, &cfg, 0.5, 0, seeds).unwrap();
        assert_eq!(mat.net.masks(), ltr.net.masks());
        let total = cfg.total_iterations(tr.len());
        let end = ltr_baseline(layers, data, &cfg, 0.5, total, seeds).unwrap();
        assert_eq!(end.accuracy, mat.accuracy);
        assert_eq!(end.net, mat.net);
    }
}
