//! Datasets: MNIST from IDX files and seeded Gaussian blobs for fast tests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "PRUNELAB_DATA_DIR";

pub const MNIST_FILES: [&str; 4] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let (n, _) = inputs.dims2().ok_or_else(|| Error::Shape(format!("inputs must be n × d, got {:?}", inputs.shape())))?;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} inputs but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("label {bad} is not below the class count {classes}")));
        }
        if !inputs.is_finite() {
            return Err(Error::Config("inputs contain non-finite values".into()));
        }
        Ok(Dataset { inputs, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs.data()[i * d..(i + 1) * d]
    }

    /// Gathers the given examples into an `n × d` batch plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::matrix(indices.len(), d, data).expect("nonempty batch"), labels)
    }

    /// The first `n` examples (all of them when `n` is 0 or too large).
    pub fn truncated(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let (inputs, labels) = self.batch(&(0..n).collect::<Vec<_>>());
        Dataset { inputs, labels, classes: self.classes, split: self.split }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    }
}

/// Per-feature standardization fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Standard deviation, with zero-variance features stored as 1.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(data: &Dataset) -> Self {
        let (n, d) = (data.len() as f64, data.dim());
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, &v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for ((s, &v), &m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| if s > 0.0 { (s / n).sqrt() } else { 1.0 }).collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let d = data.dim();
        let normalized = data
            .inputs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % d;
                (v - self.mean[j]) / self.std[j]
            })
            .collect();
        Dataset {
            inputs: Tensor::new(data.inputs.shape().to_vec(), normalized).expect("same shape"),
            labels: data.labels.clone(),
            classes: data.classes,
            split: data.split,
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes.get(offset..offset + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Raw images scaled to [0, 1]: returns (count, rows × cols, pixels).
fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = read_u32_be(bytes, 0).ok_or_else(|| Error::format(path, "file too short for an IDX header"))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} for images")));
    }
    let header = |o| read_u32_be(bytes, o).map(|v| v as usize).ok_or_else(|| Error::format(path, "truncated IDX header"));
    let (n, rows, cols) = (header(4)?, header(8)?, header(12)?);
    let d = rows * cols;
    let expected = 16 + n * d;
    if bytes.len() < expected {
        return Err(Error::format(path, format!("truncated: {} bytes, header promises {expected}", bytes.len())));
    }
    let pixels = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((n, d, pixels))
}

fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0).ok_or_else(|| Error::format(path, "file too short for an IDX header"))?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x} for labels")));
    }
    let n = read_u32_be(bytes, 4).ok_or_else(|| Error::format(path, "truncated IDX header"))? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::format(path, format!("truncated: {} bytes, header promises {}", bytes.len(), 8 + n)));
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Parses an IDX image/label pair with pixels scaled to [0, 1] (unnormalized).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (n, d, pixels) = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_file(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::format(labels_path, format!("{} labels for {n} images", labels.len())));
    }
    if n == 0 {
        return Err(Error::format(images_path, "no images"));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(Tensor::matrix(n, d, pixels)?, labels, classes, split)
}

/// Train and test splits from a directory of the four standard MNIST files,
/// standardized with statistics of the training split.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset, Normalizer)> {
    let f = |name: &str| dir.join(name);
    let train = load_mnist_idx(&f(MNIST_FILES[0]), &f(MNIST_FILES[1]), Split::Train)?;
    let test = load_mnist_idx(&f(MNIST_FILES[2]), &f(MNIST_FILES[3]), Split::Test)?;
    let norm = Normalizer::fit(&train);
    Ok((norm.apply(&train), norm.apply(&test), norm))
}

/// Resolves the MNIST directory from an explicit path or `PRUNELAB_DATA_DIR`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| Error::Config(format!("no data directory given and {DATA_DIR_ENV} is not set")))
}

/// Gaussian blobs: class `c` is drawn from `Normal(separation · e_c, I)`, so
/// distinct class means sit `separation · √2` apart. Examples cycle through
/// the classes, so any prefix stays balanced.
pub fn synthetic_gaussian(classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64, split: Split) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Config("synthetic dataset counts must be positive".into()));
    }
    if dim < classes {
        return Err(Error::Config(format!("dimension {dim} cannot hold {classes} orthogonal class means")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z + if j == c { separation } else { 0.0 });
        }
        labels.push(c);
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    fn images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        b.extend_from_slice(ls);
        b
    }

    #[test]
    fn parses_tiny_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_idx(dir.path(), "img", &images(2, 1, 2, &[0, 255, 51, 102]));
        let lab = write_idx(dir.path(), "lab", &labels(&[3, 7]));
        let ds = load_mnist_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.classes(), 10);
        assert_eq!(ds.row(0), &[0.0, 1.0]);
        assert_eq!(ds.row(1), &[0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 7]);
    }

    #[test]
    fn bad_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = images(1, 1, 1, &[0]);
        bytes[..4].copy_from_slice(&0u32.to_be_bytes());
        let img = write_idx(dir.path(), "broken-images", &bytes);
        let lab = write_idx(dir.path(), "lab", &labels(&[1]));
        let err = load_mnist_idx(&img, &lab, Split::Train).unwrap_err().to_string();
        assert!(err.contains("broken-images"), "{err}");
        assert!(err.contains("magic"));
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_idx(dir.path(), "img", &images(3, 1, 2, &[1, 2, 3]));
        let lab = write_idx(dir.path(), "lab", &labels(&[1, 2, 3]));
        assert!(load_mnist_idx(&img, &lab, Split::Train).unwrap_err().to_string().contains("truncated"));
        let img = write_idx(dir.path(), "img2", &images(2, 1, 1, &[1, 2]));
        assert!(load_mnist_idx(&img, &lab, Split::Train).unwrap_err().to_string().contains("labels for 2 images"));
    }

    #[test]
    fn normalization_centres_training_pixels() {
        let ds = synthetic_gaussian(3, 5, 40, 2.0, 1, Split::Train).unwrap();
        let norm = Normalizer::fit(&ds);
        let z = norm.apply(&ds);
        let refit = Normalizer::fit(&z);
        for (m, s) in refit.mean.iter().zip(&refit.std) {
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_variance_features_pass_through() {
        let inputs = Tensor::matrix(3, 2, vec![0.0, 1.0, 0.0, 2.0, 0.0, 3.0]).unwrap();
        let ds = Dataset::new(inputs, vec![0, 1, 0], 2, Split::Train).unwrap();
        let norm = Normalizer::fit(&ds);
        assert_eq!(norm.std[0], 1.0);
        let z = norm.apply(&ds);
        assert!(z.inputs().data().iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic_gaussian(4, 6, 25, 3.0, 9, Split::Train).unwrap();
        let b = synthetic_gaussian(4, 6, 25, 3.0, 9, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![25; 4]);
        assert_eq!(a.truncated(8).class_counts(), vec![2; 4]);
        assert!(synthetic_gaussian(4, 3, 1, 1.0, 0, Split::Train).is_err());
    }
}
