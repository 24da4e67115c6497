//! Scoring rules, global mask construction and pruning schedules.
//!
//! Pruning alternates two steps: a scoring rule assigns every unpruned weight
//! a real-valued score ([`ScoreSet`]), and [`remove`] turns scores into masks
//! by ranking all surviving weights of the network together. A [`Schedule`]
//! repeats the pair along an exponential density schedule.

mod batch;
mod scores;

pub use batch::{sample_scoring_batch, ScoringBatch};
pub use scores::{score, score_grasp, score_magnitude, score_random, score_snip, score_snip_with_loss, score_synflow};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::ablations::{self, AbsEnd};
use crate::error::{Error, Result};
use crate::network::{Mask, MaskedNetwork};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The five scoring rules for pruning early in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Random,
    Magnitude,
    Snip,
    Grasp,
    Synflow,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Random, Method::Magnitude, Method::Snip, Method::Grasp, Method::Synflow];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Magnitude => "magnitude",
            Method::Snip => "snip",
            Method::Grasp => "grasp",
            Method::Synflow => "synflow",
        }
    }

    /// The end of the ranking a method removes. GraSP prunes its highest scores.
    pub fn standard_direction(self) -> Direction {
        match self {
            Method::Grasp => Direction::Highest,
            _ => Direction::Lowest,
        }
    }

    pub fn needs_data(self) -> bool {
        matches!(self, Method::Snip | Method::Grasp)
    }

    /// Iterations used when a configuration does not say otherwise.
    pub fn default_iterations(self) -> usize {
        match self {
            Method::Synflow => 100,
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown pruning method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Lowest,
    Highest,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Lowest => Direction::Highest,
            Direction::Highest => Direction::Lowest,
        }
    }
}

/// Per-layer scores shaped like the weights. Positions that are already
/// pruned are not scoreable: they carry no meaningful value and are never
/// ranked again.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    method: Method,
    scores: Vec<Tensor<f64>>,
    scoreable: Vec<Mask>,
}

impl ScoreSet {
    pub fn new(method: Method, scores: Vec<Tensor<f64>>, scoreable: Vec<Mask>) -> Result<Self> {
        if scores.len() != scoreable.len() {
            return Err(Error::Shape(format!("{} score layers for {} masks", scores.len(), scoreable.len())));
        }
        for (l, (z, m)) in scores.iter().zip(&scoreable).enumerate() {
            if z.shape() != [m.rows(), m.cols()] {
                return Err(Error::Shape(format!("layer {l} scores {:?} vs mask {}×{}", z.shape(), m.rows(), m.cols())));
            }
        }
        Ok(ScoreSet { method, scores, scoreable })
    }

    /// Scores from a flat per-layer list, with every position scoreable.
    pub fn dense(method: Method, layers: Vec<(usize, usize, Vec<f64>)>) -> Result<Self> {
        let mut scores = Vec::with_capacity(layers.len());
        let mut masks = Vec::with_capacity(layers.len());
        for (rows, cols, z) in layers {
            scores.push(Tensor::matrix(rows, cols, z)?);
            masks.push(Mask::ones(rows, cols));
        }
        Self::new(method, scores, masks)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn scores(&self) -> &[Tensor<f64>] {
        &self.scores
    }

    pub fn scoreable(&self) -> &[Mask] {
        &self.scoreable
    }

    pub fn total(&self) -> usize {
        self.scoreable.iter().map(Mask::len).sum()
    }

    pub fn already_pruned(&self) -> usize {
        self.scoreable.iter().map(Mask::pruned).sum()
    }

    /// Same positions, scores transformed element-wise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreSet {
        ScoreSet { method: self.method, scores: self.scores.iter().map(|z| z.map(&f)).collect(), scoreable: self.scoreable.clone() }
    }

    /// Sum of scores over the scoreable positions of one layer.
    pub fn layer_sum(&self, layer: usize) -> f64 {
        self.scores[layer].data().iter().zip(self.scoreable[layer].bits()).filter(|(_, &k)| k).map(|(z, _)| z).sum()
    }
}

/// Number of weights pruned at sparsity `s` over `total` weights.
pub fn pruned_count(s: f64, total: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::SparsityRange(s));
    }
    Ok((s * total as f64).round() as usize)
}

/// Masks with exactly `round(s · total)` weights pruned network-wide.
///
/// Already-pruned positions stay pruned; the remainder is taken from the
/// scoreable positions in `direction` order of score. Equal scores are
/// removed in ascending (layer, flat index) order.
pub fn remove(scores: &ScoreSet, s: f64, direction: Direction) -> Result<Vec<Mask>> {
    let target = pruned_count(s, scores.total())?;
    let current = scores.already_pruned();
    if target < current {
        return Err(Error::Monotonicity { target, current });
    }
    let mut masks = scores.scoreable.clone();
    let need = target - current;
    if need == 0 {
        return Ok(masks);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(scores.total() - current);
    for (l, (z, m)) in scores.scores.iter().zip(&scores.scoreable).enumerate() {
        for (i, (&v, &keep)) in z.data().iter().zip(m.bits()).enumerate() {
            if keep {
                candidates.push((v, l, i));
            }
        }
    }
    let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| -> Ordering {
        let by_score = match direction {
            Direction::Lowest => a.0.total_cmp(&b.0),
            Direction::Highest => b.0.total_cmp(&a.0),
        };
        by_score.then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    if need < candidates.len() {
        candidates.select_nth_unstable_by(need - 1, order);
    }
    for &(_, l, i) in &candidates[..need] {
        masks[l].set(i, false);
    }
    Ok(masks)
}

/// One-shot pruning is the iterative schedule with a single step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    OneShot,
    Iterative(usize),
}

impl Schedule {
    pub fn iterations(self) -> usize {
        match self {
            Schedule::OneShot => 1,
            Schedule::Iterative(n) => n.max(1),
        }
    }

    pub fn from_iterations(n: usize) -> Self {
        if n <= 1 {
            Schedule::OneShot
        } else {
            Schedule::Iterative(n)
        }
    }

    /// Sparsity after step `step` of `iterations` toward final sparsity `s`:
    /// density shrinks geometrically, `1 - (1 - s)^(step / iterations)`.
    pub fn sparsity_at(self, s: f64, step: usize) -> f64 {
        let n = self.iterations();
        if step >= n {
            return s;
        }
        1.0 - (1.0 - s).powf(step as f64 / n as f64)
    }
}

/// How scores become masks at each pruning step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ranking {
    /// Remove the end of the ranking the method prescribes.
    Standard,
    /// Remove the opposite end.
    Inverted,
    /// Rank GraSP scores by magnitude and remove the smallest.
    LowestAbs,
    /// Rank GraSP scores by magnitude and remove the largest.
    HighestAbs,
}

impl Ranking {
    pub fn masks(self, scores: &ScoreSet, s: f64) -> Result<Vec<Mask>> {
        match self {
            Ranking::Standard => remove(scores, s, scores.method().standard_direction()),
            Ranking::Inverted => ablations::invert(scores, s),
            Ranking::LowestAbs => ablations::grasp_abs_variant(scores, s, AbsEnd::LowestAbs),
            Ranking::HighestAbs => ablations::grasp_abs_variant(scores, s, AbsEnd::HighestAbs),
        }
    }
}

/// Everything a pruning run needs besides the network.
#[derive(Clone, Copy, Debug)]
pub struct PruneRequest<'a> {
    pub method: Method,
    pub sparsity: f64,
    pub schedule: Schedule,
    pub batch: Option<&'a ScoringBatch>,
    pub seed: u64,
    pub ranking: Ranking,
}

impl<'a> PruneRequest<'a> {
    pub fn new(method: Method, sparsity: f64) -> Self {
        PruneRequest { method, sparsity, schedule: Schedule::OneShot, batch: None, seed: 0, ranking: Ranking::Standard }
    }

    pub fn schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn batch(mut self, batch: &'a ScoringBatch) -> Self {
        self.batch = Some(batch);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ranking(mut self, ranking: Ranking) -> Self {
        self.ranking = ranking;
        self
    }
}

/// Prunes to the requested sparsity: for each step `n = 1..=N` the surviving
/// weights are rescored on the current masked network and removed down to
/// the step's scheduled sparsity. The final step lands on exactly
/// `round(s · total)` pruned weights.
pub fn prune<T: Scalar>(net: &MaskedNetwork<T>, req: &PruneRequest<'_>) -> Result<MaskedNetwork<T>> {
    Ok(prune_trace(net, req)?.pop().expect("at least one step"))
}

/// Like [`prune`] but returns the network after every step.
pub fn prune_trace<T: Scalar>(net: &MaskedNetwork<T>, req: &PruneRequest<'_>) -> Result<Vec<MaskedNetwork<T>>> {
    pruned_count(req.sparsity, net.total_weights())?;
    if req.method.needs_data() && req.batch.is_none() {
        return Err(Error::Config(format!("{} needs a scoring batch", req.method)));
    }
    let steps = req.schedule.iterations();
    let mut current = net.clone();
    let mut trace = Vec::with_capacity(steps);
    for step in 1..=steps {
        let scheduled = req.schedule.sparsity_at(req.sparsity, step);
        let target = scheduled.max(current.sparsity()).min(1.0);
        let step_seed = crate::seeds::mix(req.seed, step as u64);
        let scores = score(&current, req.method, req.batch, step_seed)?;
        let masks = req.ranking.masks(&scores, target)?;
        current.set_masks(masks)?;
        trace.push(current.clone());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(z: &[f64]) -> ScoreSet {
        ScoreSet::dense(Method::Magnitude, vec![(1, z.len(), z.to_vec())]).unwrap()
    }

    fn bits(m: &Mask) -> Vec<u8> {
        m.bits().iter().map(|&b| b as u8).collect()
    }

    #[test]
    fn removes_lowest_half() {
        let masks = remove(&flat(&[3.0, 1.0, 2.0, 4.0]), 0.5, Direction::Lowest).unwrap();
        assert_eq!(bits(&masks[0]), vec![1, 0, 0, 1]);
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let masks = remove(&flat(&[3.0, 1.0, 2.0, 4.0]), 0.0, Direction::Lowest).unwrap();
        assert_eq!(bits(&masks[0]), vec![1, 1, 1, 1]);
    }

    #[test]
    fn quarter_of_four_prunes_one() {
        let masks = remove(&flat(&[3.0, 1.0, 2.0, 4.0]), 0.25, Direction::Lowest).unwrap();
        assert_eq!(masks[0].pruned(), 1);
        assert!(!masks[0].get(1));
    }

    #[test]
    fn ties_break_by_layer_then_index() {
        let scores = ScoreSet::dense(Method::Magnitude, vec![(1, 2, vec![1.0, 1.0]), (1, 2, vec![1.0, 0.5])]).unwrap();
        let masks = remove(&scores, 0.5, Direction::Lowest).unwrap();
        // 0.5 first, then the earliest of the tied ones
        assert_eq!(bits(&masks[0]), vec![0, 1]);
        assert_eq!(bits(&masks[1]), vec![1, 0]);
        let masks = remove(&scores, 0.25, Direction::Highest).unwrap();
        assert_eq!(bits(&masks[0]), vec![0, 1]);
    }

    #[test]
    fn range_and_monotonicity_errors() {
        let z = flat(&[3.0, 1.0, 2.0, 4.0]);
        assert!(matches!(remove(&z, 1.5, Direction::Lowest), Err(Error::SparsityRange(_))));
        assert!(matches!(remove(&z, -0.1, Direction::Lowest), Err(Error::SparsityRange(_))));
        let half = remove(&z, 0.5, Direction::Lowest).unwrap();
        let pruned = ScoreSet::new(Method::Magnitude, z.scores().to_vec(), half).unwrap();
        assert!(matches!(remove(&pruned, 0.25, Direction::Lowest), Err(Error::Monotonicity { target: 1, current: 2 })));
        // already-pruned positions are never re-ranked
        let more = remove(&pruned, 0.75, Direction::Highest).unwrap();
        assert_eq!(bits(&more[0]), vec![1, 0, 0, 0]);
    }

    #[test]
    fn lowest_and_highest_halves_complement() {
        let z = flat(&[0.3, -1.0, 2.5, 0.1, 7.0, 4.0]);
        let lo = remove(&z, 0.5, Direction::Lowest).unwrap();
        let hi = remove(&z, 0.5, Direction::Highest).unwrap();
        for (a, b) in lo[0].bits().iter().zip(hi[0].bits()) {
            assert_ne!(a, b);
        }
    }

    #[test]
    fn density_schedule() {
        let sch = Schedule::Iterative(2);
        assert!((sch.sparsity_at(0.75, 1) - 0.5).abs() < 1e-15);
        assert_eq!(sch.sparsity_at(0.75, 2), 0.75);
        assert_eq!(Schedule::OneShot.sparsity_at(0.3, 1), 0.3);
        let s = 0.9;
        let n = 100;
        let seq: Vec<f64> = (0..=n).map(|k| Schedule::Iterative(n).sparsity_at(s, k)).collect();
        assert_eq!(seq[0], 0.0);
        assert!(seq.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("snap".parse::<Method>().is_err());
        assert_eq!(Method::Grasp.standard_direction(), Direction::Highest);
        assert_eq!(Method::Synflow.default_iterations(), 100);
    }
}
