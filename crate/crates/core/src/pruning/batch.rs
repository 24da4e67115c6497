use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::one_hot;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Examples used by the data-dependent scoring rules.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringBatch {
    pub inputs: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Dataset indices the batch was drawn from, in batch order.
    pub indices: Vec<usize>,
    pub per_class_counts: Vec<usize>,
}

impl ScoringBatch {
    pub fn new(inputs: Tensor<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = inputs.dims2().map(|(n, _)| n).ok_or_else(|| Error::Shape("scoring inputs must be n × d".into()))?;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} inputs but {} labels", labels.len())));
        }
        let mut per_class_counts = vec![0; classes];
        for &l in &labels {
            *per_class_counts.get_mut(l).ok_or_else(|| Error::Config(format!("label {l} is not below the class count {classes}")))? += 1;
        }
        Ok(ScoringBatch { inputs, labels, classes, indices: (0..n).collect(), per_class_counts })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs_as<T: Scalar>(&self) -> Tensor<T> {
        self.inputs.cast()
    }

    pub fn targets<T: Scalar>(&self) -> Tensor<T> {
        one_hot(&self.labels, self.classes)
    }
}

/// Exactly `per_class` examples of every class, drawn uniformly without
/// replacement. Examples are grouped by class in ascending class order.
pub fn sample_scoring_batch(dataset: &Dataset, per_class: usize, seed: u64) -> Result<ScoringBatch> {
    if per_class == 0 {
        return Err(Error::Config("a scoring batch needs at least one example per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * dataset.classes());
    for class in 0..dataset.classes() {
        let pool = dataset.indices_of_class(class);
        if pool.len() < per_class {
            return Err(Error::Config(format!("class {class} has {} examples, {per_class} needed", pool.len())));
        }
        let mut picks: Vec<usize> = index::sample(&mut rng, pool.len(), per_class).into_iter().map(|i| pool[i]).collect();
        picks.sort_unstable();
        chosen.extend(picks);
    }
    let (inputs, labels) = dataset.batch(&chosen);
    let mut batch = ScoringBatch::new(inputs, labels, dataset.classes())?;
    batch.indices = chosen;
    Ok(batch)
}
