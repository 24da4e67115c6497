//! Line-oriented `key = value` experiment configs.
//!
//! `#` starts a comment. List keys (`method`, `sparsity`, `ablation`,
//! `prune_iteration`, `lr_drop`, `iterations`) may repeat and may also hold
//! several comma-separated values; every other key may appear at most once.
//! The accepted keys are documented in `docs/config-format.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::ablations::AblationKind;
use crate::data::{load_mnist, resolve_data_dir, synthetic_gaussian, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::LayerSpec;
use crate::pruning::Method;
use crate::training::OptimizerConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkSpec {
    Lenet300100,
    /// Layer widths from input to output.
    Mlp(Vec<usize>),
}

impl NetworkSpec {
    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            NetworkSpec::Lenet300100 => LayerSpec::lenet_300_100(),
            NetworkSpec::Mlp(w) => LayerSpec::mlp(w),
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkSpec::Lenet300100 => f.write_str("lenet_300_100"),
            NetworkSpec::Mlp(w) => write!(f, "mlp:{}", join(w)),
        }
    }
}

impl FromStr for NetworkSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "lenet_300_100" {
            return Ok(NetworkSpec::Lenet300100);
        }
        let widths = s.strip_prefix("mlp:").ok_or_else(|| format!("unknown network `{s}`"))?;
        let widths =
            widths.split(':').map(|w| w.parse::<usize>().map_err(|_| format!("bad width `{w}`"))).collect::<std::result::Result<Vec<_>, _>>()?;
        if widths.len() < 2 || widths.contains(&0) {
            return Err("an mlp needs at least two positive widths".into());
        }
        Ok(NetworkSpec::Mlp(widths))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Mnist,
    Synthetic { classes: usize, dim: usize, train_per_class: usize, test_per_class: usize, separation: f64 },
}

/// One entry of the method axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GridMethod {
    /// No pruning.
    Dense,
    /// Pruning with a scoring rule, at initialization or at iteration `k`.
    Prune(Method),
    /// Magnitude pruning of the fully trained network.
    MagnitudeAfterTraining,
    /// Magnitude-after-training mask on weights rewound to `rewind_iteration`.
    Ltr,
}

impl GridMethod {
    pub fn name(self) -> &'static str {
        match self {
            GridMethod::Dense => "dense",
            GridMethod::Prune(m) => m.as_str(),
            GridMethod::MagnitudeAfterTraining => "magnitude_after_training",
            GridMethod::Ltr => "ltr",
        }
    }
}

impl fmt::Display for GridMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(GridMethod::Dense),
            "magnitude_after_training" => Ok(GridMethod::MagnitudeAfterTraining),
            "ltr" => Ok(GridMethod::Ltr),
            other => other.parse().map(GridMethod::Prune),
        }
    }
}

/// When to prune: an absolute iteration or a fraction of the schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruneAt {
    Iteration(usize),
    /// Written `25%`.
    Percent(f64),
}

impl PruneAt {
    pub fn resolve(self, total: usize) -> usize {
        match self {
            PruneAt::Iteration(k) => k,
            PruneAt::Percent(p) => (p / 100.0 * total as f64).round() as usize,
        }
    }
}

impl fmt::Display for PruneAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneAt::Iteration(k) => write!(f, "{k}"),
            PruneAt::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl FromStr for PruneAt {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p.parse().map_err(|_| format!("bad percentage `{s}`"))?;
            if !(0.0..=100.0).contains(&p) {
                return Err(format!("prune iteration {s} is outside [0%, 100%]"));
            }
            return Ok(PruneAt::Percent(p));
        }
        s.parse().map(PruneAt::Iteration).map_err(|_| format!("bad prune iteration `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    pub data_dir: Option<PathBuf>,
    /// Use only the first `n` training (test) examples; 0 keeps them all.
    pub train_examples: usize,
    pub test_examples: usize,
    pub optimizer: OptimizerConfig,
    pub methods: Vec<GridMethod>,
    pub sparsities: Vec<f64>,
    pub ablations: Vec<AblationKind>,
    pub prune_iterations: Vec<PruneAt>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Pruning iterations per scoring rule; rules not listed use their default.
    pub iterations: BTreeMap<Method, usize>,
    pub scoring_per_class: usize,
    pub rewind_iteration: usize,
    /// Variance of the `fixed_variance_init` ablation.
    pub fixed_variance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkSpec::Lenet300100,
            dataset: DatasetSpec::Mnist,
            data_dir: None,
            train_examples: 0,
            test_examples: 0,
            optimizer: OptimizerConfig::mnist(),
            methods: Vec::new(),
            sparsities: Vec::new(),
            ablations: vec![AblationKind::None],
            prune_iterations: vec![PruneAt::Iteration(0)],
            replicates: 1,
            base_seed: 0,
            iterations: BTreeMap::new(),
            scoring_per_class: 10,
            rewind_iteration: 0,
            fixed_variance: 0.01,
        }
    }
}

const LIST_KEYS: [&str; 6] = ["method", "sparsity", "ablation", "prune_iteration", "lr_drop", "iterations"];
const SCALAR_KEYS: [&str; 20] = [
    "network",
    "dataset",
    "data_dir",
    "synthetic_classes",
    "synthetic_dim",
    "synthetic_train_per_class",
    "synthetic_test_per_class",
    "synthetic_separation",
    "train_examples",
    "test_examples",
    "learning_rate",
    "momentum",
    "weight_decay",
    "epochs",
    "batch_size",
    "replicates",
    "base_seed",
    "scoring_per_class",
    "rewind_iteration",
    "fixed_variance",
];

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(":")
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("`{v}` is not a valid value for {key}") })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut list_seen: BTreeMap<&str, bool> = BTreeMap::new();
        let mut synthetic = (10usize, 20usize, 100usize, 100usize, 3.0f64);
        let mut dataset_name: Option<(usize, String)> = None;
        let mut synthetic_lines = Vec::new();
        let mut last_sparsity_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got `{content}`") })?;
            if val.is_empty() {
                return Err(Error::Parse { line, msg: format!("{key} has no value") });
            }
            if let Some(&k) = LIST_KEYS.iter().find(|&&k| k == key) {
                if !list_seen.insert(k, true).unwrap_or(false) {
                    // first occurrence replaces the default list
                    match k {
                        "ablation" => cfg.ablations.clear(),
                        "prune_iteration" => cfg.prune_iterations.clear(),
                        _ => {}
                    }
                }
                for item in val.split(',').map(str::trim) {
                    match k {
                        "method" => {
                            let m: GridMethod = item.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
                            if cfg.methods.contains(&m) {
                                return Err(Error::Parse { line, msg: format!("method {m} listed twice") });
                            }
                            cfg.methods.push(m);
                        }
                        "sparsity" => {
                            let s: f64 = value(line, k, item)?;
                            if !(0.0..=1.0).contains(&s) {
                                return Err(Error::Parse { line, msg: format!("sparsity {s} is outside [0, 1]") });
                            }
                            if cfg.sparsities.last().is_some_and(|&p| p >= s) {
                                return Err(Error::Parse { line, msg: "sparsities must be strictly increasing".into() });
                            }
                            cfg.sparsities.push(s);
                            last_sparsity_line = line;
                        }
                        "ablation" => {
                            let a: AblationKind = item.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
                            if cfg.ablations.contains(&a) {
                                return Err(Error::Parse { line, msg: format!("ablation {a} listed twice") });
                            }
                            cfg.ablations.push(a);
                        }
                        "prune_iteration" => {
                            let p: PruneAt = item.parse().map_err(|msg| Error::Parse { line, msg })?;
                            if cfg.prune_iterations.contains(&p) {
                                return Err(Error::Parse { line, msg: format!("prune iteration {p} listed twice") });
                            }
                            cfg.prune_iterations.push(p);
                        }
                        "lr_drop" => {
                            let (e, f) = item.split_once(':').ok_or_else(|| Error::Parse { line, msg: "lr_drop is `epoch:factor`".into() })?;
                            cfg.optimizer.drops.push((value(line, k, e)?, value(line, k, f)?));
                        }
                        _ => {
                            let (m, n) = item.split_once(':').ok_or_else(|| Error::Parse { line, msg: "iterations is `method:count`".into() })?;
                            let m: Method = m.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
                            let n: usize = value(line, k, n)?;
                            if n == 0 {
                                return Err(Error::Parse { line, msg: "iterations must be positive".into() });
                            }
                            if cfg.iterations.insert(m, n).is_some() {
                                return Err(Error::Parse { line, msg: format!("iterations for {m} given twice") });
                            }
                        }
                    }
                }
                continue;
            }
            let Some(&k) = SCALAR_KEYS.iter().find(|&&k| k == key) else {
                return Err(Error::Parse { line, msg: format!("unknown key `{key}`") });
            };
            if let Some(first) = seen.insert(k, line) {
                return Err(Error::Parse { line, msg: format!("{k} already set on line {first}") });
            }
            let o = &mut cfg.optimizer;
            match k {
                "network" => cfg.network = val.parse().map_err(|msg| Error::Parse { line, msg })?,
                "dataset" => dataset_name = Some((line, val.to_string())),
                "data_dir" => cfg.data_dir = Some(PathBuf::from(val)),
                "synthetic_classes" => synthetic.0 = value(line, k, val)?,
                "synthetic_dim" => synthetic.1 = value(line, k, val)?,
                "synthetic_train_per_class" => synthetic.2 = value(line, k, val)?,
                "synthetic_test_per_class" => synthetic.3 = value(line, k, val)?,
                "synthetic_separation" => synthetic.4 = value(line, k, val)?,
                "train_examples" => cfg.train_examples = value(line, k, val)?,
                "test_examples" => cfg.test_examples = value(line, k, val)?,
                "learning_rate" => o.learning_rate = value(line, k, val)?,
                "momentum" => o.momentum = value(line, k, val)?,
                "weight_decay" => o.weight_decay = value(line, k, val)?,
                "epochs" => o.epochs = value(line, k, val)?,
                "batch_size" => o.batch_size = value(line, k, val)?,
                "replicates" => cfg.replicates = value(line, k, val)?,
                "base_seed" => cfg.base_seed = value(line, k, val)?,
                "scoring_per_class" => cfg.scoring_per_class = value(line, k, val)?,
                "rewind_iteration" => cfg.rewind_iteration = value(line, k, val)?,
                _ => cfg.fixed_variance = value(line, k, val)?,
            }
            if k.starts_with("synthetic_") {
                synthetic_lines.push(line);
            }
        }
        match dataset_name {
            None => {}
            Some((_, n)) if n == "mnist" => {}
            Some((_, n)) if n == "synthetic" => {
                let (classes, dim, train_per_class, test_per_class, separation) = synthetic;
                cfg.dataset = DatasetSpec::Synthetic { classes, dim, train_per_class, test_per_class, separation };
            }
            Some((line, n)) => return Err(Error::Parse { line, msg: format!("unknown dataset `{n}`") }),
        }
        if let (DatasetSpec::Mnist, Some(&line)) = (&cfg.dataset, synthetic_lines.first()) {
            return Err(Error::Parse { line, msg: "synthetic_* keys need dataset = synthetic".into() });
        }
        let at = |key: &str| seen.get(key).copied().unwrap_or(0);
        if let Err(Error::Config(msg)) = cfg.optimizer.validate() {
            let line = ["learning_rate", "momentum", "weight_decay", "epochs", "batch_size"].iter().map(|k| at(k)).max().unwrap_or(0);
            return Err(Error::Parse { line, msg });
        }
        if cfg.replicates == 0 {
            return Err(Error::Parse { line: at("replicates"), msg: "replicates must be at least 1".into() });
        }
        if cfg.scoring_per_class == 0 {
            return Err(Error::Parse { line: at("scoring_per_class"), msg: "scoring_per_class must be at least 1".into() });
        }
        if !(cfg.fixed_variance > 0.0 && cfg.fixed_variance.is_finite()) {
            return Err(Error::Parse { line: at("fixed_variance"), msg: "fixed_variance must be positive".into() });
        }
        if cfg.methods.is_empty() {
            return Err(Error::Parse { line: 0, msg: "at least one method is required".into() });
        }
        let prunes = cfg.methods.iter().any(|&m| m != GridMethod::Dense);
        if prunes && cfg.sparsities.is_empty() {
            return Err(Error::Parse { line: last_sparsity_line, msg: "pruning methods need at least one sparsity".into() });
        }
        Ok(cfg)
    }

    /// Canonical text; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("network", self.network.to_string());
        match &self.dataset {
            DatasetSpec::Mnist => put("dataset", "mnist".into()),
            DatasetSpec::Synthetic { classes, dim, train_per_class, test_per_class, separation } => {
                put("dataset", "synthetic".into());
                put("synthetic_classes", classes.to_string());
                put("synthetic_dim", dim.to_string());
                put("synthetic_train_per_class", train_per_class.to_string());
                put("synthetic_test_per_class", test_per_class.to_string());
                put("synthetic_separation", separation.to_string());
            }
        }
        if let Some(d) = &self.data_dir {
            put("data_dir", d.display().to_string());
        }
        put("train_examples", self.train_examples.to_string());
        put("test_examples", self.test_examples.to_string());
        let o = &self.optimizer;
        put("learning_rate", o.learning_rate.to_string());
        put("momentum", o.momentum.to_string());
        put("weight_decay", o.weight_decay.to_string());
        for (e, f) in &o.drops {
            put("lr_drop", format!("{e}:{f}"));
        }
        put("epochs", o.epochs.to_string());
        put("batch_size", o.batch_size.to_string());
        for m in &self.methods {
            put("method", m.to_string());
        }
        for s in &self.sparsities {
            put("sparsity", s.to_string());
        }
        for a in &self.ablations {
            put("ablation", a.to_string());
        }
        for p in &self.prune_iterations {
            put("prune_iteration", p.to_string());
        }
        for (m, n) in &self.iterations {
            put("iterations", format!("{m}:{n}"));
        }
        put("replicates", self.replicates.to_string());
        put("base_seed", self.base_seed.to_string());
        put("scoring_per_class", self.scoring_per_class.to_string());
        put("rewind_iteration", self.rewind_iteration.to_string());
        put("fixed_variance", self.fixed_variance.to_string());
        out
    }

    pub fn pruning_iterations(&self, method: Method) -> usize {
        self.iterations.get(&method).copied().unwrap_or_else(|| method.default_iterations())
    }

    /// Train and test splits, truncated as configured.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Mnist => {
                let dir = resolve_data_dir(self.data_dir.as_deref())?;
                let (train, test, _) = load_mnist(&dir)?;
                (train, test)
            }
            &DatasetSpec::Synthetic { classes, dim, train_per_class, test_per_class, separation } => (
                synthetic_gaussian(classes, dim, train_per_class, separation, crate::seeds::hash_parts(self.base_seed, &["train"]), Split::Train)?,
                synthetic_gaussian(classes, dim, test_per_class, separation, crate::seeds::hash_parts(self.base_seed, &["test"]), Split::Test)?,
            ),
        };
        let (train, test) = (train.truncated(self.train_examples), test.truncated(self.test_examples));
        let layers = self.network.layers();
        if layers[0].fan_in != train.dim() || layers.last().map(|l| l.fan_out) != Some(train.classes()) {
            return Err(Error::Config(format!(
                "network {} does not fit data with {} features and {} classes",
                self.network,
                train.dim(),
                train.classes()
            )));
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = ExperimentConfig::parse("method = snip\nsparsity = 0.9\n").unwrap();
        assert_eq!(cfg.optimizer, OptimizerConfig::mnist());
        assert_eq!(cfg.ablations, vec![AblationKind::None]);
        let text = cfg.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn full_config_round_trips() {
        let text = "\
# a comment
network = mlp:20:16:4
dataset = synthetic
synthetic_classes = 4
synthetic_dim = 20
synthetic_separation = 2.5
method = random, magnitude
method = magnitude_after_training
sparsity = 0.5, 0.9
ablation = none, shuffle
prune_iteration = 0, 50%
lr_drop = 2:0.1
iterations = snip:5
replicates = 3
epochs = 3
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.methods.len(), 3);
        assert_eq!(cfg.prune_iterations, vec![PruneAt::Iteration(0), PruneAt::Percent(50.0)]);
        assert_eq!(cfg.pruning_iterations(Method::Snip), 5);
        assert_eq!(cfg.pruning_iterations(Method::Synflow), 100);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |t: &str| match ExperimentConfig::parse(t).unwrap_err() {
            Error::Parse { line, msg } => (line, msg),
            e => panic!("{e}"),
        };
        assert_eq!(err("method = snip\nsparsity = 1.5\n").0, 2);
        assert!(err("method = snip\nsparsity = 1.5\n").1.contains("outside"));
        assert_eq!(err("method = snip\nsparsity = 0.5\nepochs = 2\nepochs = 3\n").0, 4);
        assert_eq!(err("method = snip\nbogus = 1\n").0, 2);
        assert_eq!(err("method = snip\nsparsity = 0.9, 0.5\n").0, 2);
        assert_eq!(err("method = frobnicate\n").0, 1);
        assert_eq!(err("method = snip\nsparsity = 0.5\nmomentum = 1.5\n").0, 3);
        assert_eq!(err("method = snip\nsparsity = 0.5\nsynthetic_dim = 4\n").0, 3);
        assert!(err("sparsity = 0.5\n").1.contains("method"));
    }

    #[test]
    fn prune_at_resolution() {
        assert_eq!(PruneAt::Percent(25.0).resolve(18_760), 4690);
        assert_eq!(PruneAt::Iteration(7).resolve(10), 7);
        assert!("150%".parse::<PruneAt>().is_err());
    }
}
