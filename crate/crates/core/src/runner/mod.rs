//! Experiment grids: every (method, sparsity, ablation, k, replicate) cell of
//! a config is trained and evaluated, and the results are written as CSV.
//!
//! Seeds depend only on a cell's own coordinates. Within a replicate every
//! cell shares the initialization and the mini-batch order, so an ablation
//! and its unmodified counterpart differ only in the ablation.

mod config;
mod report;

pub use config::{DatasetSpec, ExperimentConfig, GridMethod, NetworkSpec, PruneAt};
pub use report::{
    aggregate, emit_plot_data, mean, parse_rows, read_rows, rows_to_csv, sample_std, PlotAxis, ReportRow, RowKind, RowWriter, HEADER, PLOT_HEADER,
};

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, OnceLock};
use std::time::Instant;

use crate::ablations::AblationKind;
use crate::analysis::effective_sparsity;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::MaskedNetwork;
use crate::pruning::{Method, Schedule};
use crate::seeds::hash_parts;
use crate::training::{evaluate, finish_from, ltr_baseline, pretrain, Data, PruneSetup, RunSeeds};

/// Coordinates of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: GridMethod,
    pub sparsity: f64,
    pub ablation: AblationKind,
    /// Resolved iteration at which pruning happens.
    pub k: usize,
    pub replicate: usize,
}

impl Cell {
    fn key(&self) -> (String, String, String, usize, usize) {
        (self.method.to_string(), self.sparsity.to_string(), self.ablation.to_string(), self.k, self.replicate)
    }
}

/// Seeds of a cell. `init` and `data` depend only on the replicate.
pub fn cell_seeds(base_seed: u64, cell: &Cell) -> RunSeeds {
    let rep = cell.replicate.to_string();
    RunSeeds {
        init: hash_parts(base_seed, &["init", &rep]),
        data: hash_parts(base_seed, &["data", &rep]),
        cell: hash_parts(base_seed, &[cell.method.name(), &cell.sparsity.to_string(), cell.ablation.as_str(), &cell.k.to_string(), &rep]),
    }
}

fn applicable(method: GridMethod, ablation: AblationKind, k: usize) -> bool {
    use AblationKind as A;
    match method {
        GridMethod::Dense => ablation == A::None,
        GridMethod::Ltr => ablation == A::None,
        GridMethod::MagnitudeAfterTraining => matches!(ablation, A::None | A::Shuffle | A::Reinit | A::Invert),
        GridMethod::Prune(m) => match ablation {
            A::GraspLowestAbs | A::GraspHighestAbs => m == Method::Grasp,
            A::FixedVarianceInit => k == 0,
            _ => true,
        },
    }
}

/// The cells of a config in a fixed order. Axes that do not apply to a
/// method collapse (dense nets have no sparsity; magnitude-after-training
/// prunes at the end of training; LTR reports its rewind iteration as `k`),
/// and inapplicable ablations are skipped.
pub fn grid_cells(config: &ExperimentConfig, train_examples: usize) -> Vec<Cell> {
    let total = config.optimizer.total_iterations(train_examples);
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for &method in &config.methods {
        let sparsities = if method == GridMethod::Dense { vec![0.0] } else { config.sparsities.clone() };
        for &sparsity in &sparsities {
            for &ablation in &config.ablations {
                for &at in &config.prune_iterations {
                    let k = match method {
                        GridMethod::Dense => 0,
                        GridMethod::MagnitudeAfterTraining => total,
                        GridMethod::Ltr => config.rewind_iteration,
                        GridMethod::Prune(_) => at.resolve(total),
                    };
                    if !applicable(method, ablation, k) {
                        continue;
                    }
                    for replicate in 0..config.replicates {
                        let cell = Cell { method, sparsity, ablation, k, replicate };
                        if seen.insert(cell.key()) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub jobs: usize,
    /// Keep successful cells already present in the output file.
    pub resume: bool,
    /// Print one line per finished cell on stderr.
    pub progress: bool,
}

/// Cell rows in grid order followed by one aggregate row per configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub cells: Vec<ReportRow>,
    pub aggregates: Vec<ReportRow>,
}

impl RunReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells.iter().chain(&self.aggregates).cloned().collect()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows())
    }

    /// Aggregate for a configuration, if present.
    pub fn find(&self, method: &str, sparsity: f64, ablation: &str, k: usize) -> Option<&ReportRow> {
        self.aggregates.iter().find(|r| r.method == method && r.sparsity == sparsity && r.ablation == ablation && r.k == k)
    }
}

type SharedNet = Arc<OnceLock<std::result::Result<MaskedNetwork, String>>>;

struct Context<'a> {
    config: &'a ExperimentConfig,
    data: Data<'a>,
    /// Dense networks after `k` iterations, shared by all cells of a replicate.
    pretrained: Mutex<HashMap<(usize, usize), SharedNet>>,
}

impl Context<'_> {
    fn pretrained(&self, setup: &PruneSetup, seeds: RunSeeds, replicate: usize, k: usize) -> Result<MaskedNetwork> {
        let slot = self.pretrained.lock().expect("not poisoned").entry((replicate, k)).or_default().clone();
        slot.get_or_init(|| pretrain(setup, self.data, &self.config.optimizer, seeds, k).map_err(|e| e.to_string())).clone().map_err(Error::Config)
    }

    fn run(&self, cell: &Cell) -> Result<MaskedNetwork> {
        let cfg = self.config;
        let seeds = cell_seeds(cfg.base_seed, cell);
        let layers = cfg.network.layers();
        let method = match cell.method {
            GridMethod::Prune(m) => m,
            _ => Method::Magnitude,
        };
        let mut setup = PruneSetup::new(layers.clone(), method, cell.sparsity);
        setup.schedule = Schedule::from_iterations(cfg.pruning_iterations(method));
        setup.ablation = cell.ablation;
        setup.scoring_per_class = cfg.scoring_per_class;
        setup.fixed_variance = cfg.fixed_variance;
        match cell.method {
            GridMethod::Dense => {
                let total = cfg.optimizer.total_iterations(self.data.train.len());
                self.pretrained(&setup, seeds, cell.replicate, total)
            }
            GridMethod::Ltr => Ok(ltr_baseline(layers, self.data, &cfg.optimizer, cell.sparsity, cell.k, seeds)?.net),
            GridMethod::Prune(_) | GridMethod::MagnitudeAfterTraining => {
                let trained = self.pretrained(&setup, seeds, cell.replicate, cell.k)?;
                Ok(finish_from(&trained, cell.k, &setup, self.data, &cfg.optimizer, seeds)?.net)
            }
        }
    }

    fn row(&self, cell: &Cell) -> ReportRow {
        let started = Instant::now();
        let outcome = self.run(cell).and_then(|net| {
            let acc = evaluate(&net, self.data.test)?;
            let eff = effective_sparsity(&net)?;
            Ok((acc, eff.actual_sparsity, eff.effective_sparsity))
        });
        let mut row = ReportRow {
            kind: RowKind::Cell,
            method: cell.method.to_string(),
            sparsity: cell.sparsity,
            ablation: cell.ablation.to_string(),
            k: cell.k,
            replicate: Some(cell.replicate),
            seed: Some(cell_seeds(self.config.base_seed, cell).cell),
            n: 1,
            accuracy: None,
            accuracy_std: None,
            actual_sparsity: None,
            effective_sparsity: None,
            wall_time_s: Some(started.elapsed().as_secs_f64()),
            error: String::new(),
        };
        match outcome {
            Ok((acc, actual, effective)) => {
                row.accuracy = Some(acc);
                row.actual_sparsity = Some(actual);
                row.effective_sparsity = Some(effective);
            }
            Err(e) => row.error = e.to_string(),
        }
        row
    }
}

fn row_key(r: &ReportRow) -> Option<(String, String, String, usize, usize)> {
    Some((r.method.clone(), r.sparsity.to_string(), r.ablation.clone(), r.k, r.replicate?))
}

/// Runs every cell of `config` on the given data. With `out`, finished cell
/// rows are appended to the file as they complete and the file is rewritten
/// in grid order with aggregates at the end. Failing cells record their
/// error and the grid carries on.
pub fn run_grid(config: &ExperimentConfig, train: &Dataset, test: &Dataset, out: Option<&Path>, options: &RunOptions) -> Result<RunReport> {
    let cells = grid_cells(config, train.len());
    let mut done: HashMap<_, ReportRow> = HashMap::new();
    if let (true, Some(path)) = (options.resume, out) {
        if path.exists() {
            for r in read_rows(path)? {
                if r.kind == RowKind::Cell && r.succeeded() {
                    if let Some(k) = row_key(&r) {
                        done.insert(k, r);
                    }
                }
            }
        }
    }
    let pending: Vec<&Cell> = cells.iter().filter(|c| !done.contains_key(&c.key())).collect();
    let mut writer = match out {
        Some(path) => {
            let fresh = !(options.resume && path.exists());
            let file = OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path).map_err(|e| Error::io(path, e))?;
            Some(RowWriter::new(file, fresh)?)
        }
        None => None,
    };
    let ctx = Context { config, data: Data { train, test }, pretrained: Mutex::new(HashMap::new()) };
    let next = AtomicUsize::new(0);
    let jobs = options.jobs.max(1).min(pending.len().max(1));
    let (tx, rx) = mpsc::channel::<ReportRow>();
    let mut finished: Vec<ReportRow> = Vec::new();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let (ctx, next, pending) = (&ctx, &next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                if tx.send(ctx.row(cell)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for row in rx {
            if options.progress {
                let status = match row.accuracy {
                    Some(a) => format!("accuracy {a:.4}"),
                    None => format!("error: {}", row.error),
                };
                eprintln!(
                    "[{}/{}] {} s={} {} k={} rep={} {status}",
                    finished.len() + 1,
                    pending.len(),
                    row.method,
                    row.sparsity,
                    row.ablation,
                    row.k,
                    row.replicate.unwrap_or(0)
                );
            }
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write(&row) {
                    write_error.get_or_insert(e);
                }
            }
            finished.push(row);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    for r in finished {
        if let Some(k) = row_key(&r) {
            done.insert(k, r);
        }
    }
    let cell_rows: Vec<ReportRow> = cells.iter().filter_map(|c| done.remove(&c.key())).collect();
    let report = RunReport { aggregates: aggregate(&cell_rows), cells: cell_rows };
    if let Some(path) = out {
        let tmp = PathBuf::from(format!("{}.tmp", path.display()));
        std::fs::write(&tmp, report.to_csv()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(extra: &str) -> ExperimentConfig {
        let text = format!(
            "network = mlp:6:8:3\ndataset = synthetic\nsynthetic_classes = 3\nsynthetic_dim = 6\n\
             synthetic_train_per_class = 20\nsynthetic_test_per_class = 10\nepochs = 2\nbatch_size = 16\n\
             learning_rate = 0.05\n{extra}"
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn three_replicates_one_aggregate() {
        let cfg = tiny("method = snip\nsparsity = 0.5\nreplicates = 3\nscoring_per_class = 2\n");
        let (tr, te) = cfg.load_data().unwrap();
        let report = run_grid(&cfg, &tr, &te, None, &RunOptions::default()).unwrap();
        assert_eq!(report.cells.len(), 3);
        assert_eq!(report.aggregates.len(), 1);
        assert_eq!(report.aggregates[0].n, 3);
        assert!(report.cells.iter().all(|r| r.error.is_empty()));
    }

    #[test]
    fn seeds_depend_only_on_coordinates() {
        let c = Cell { method: GridMethod::Prune(Method::Snip), sparsity: 0.5, ablation: AblationKind::None, k: 0, replicate: 1 };
        let shuffled = Cell { ablation: AblationKind::Shuffle, ..c.clone() };
        let (a, b) = (cell_seeds(7, &c), cell_seeds(7, &shuffled));
        assert_eq!((a.init, a.data), (b.init, b.data));
        assert_ne!(a.cell, b.cell);
        let small = grid_cells(&tiny("method = snip\nsparsity = 0.5\n"), 60);
        let big = grid_cells(&tiny("method = random, snip\nsparsity = 0.5, 0.9\nreplicates = 2\n"), 60);
        assert!(big.contains(&small[0]));
    }

    #[test]
    fn grid_skips_inapplicable_cells() {
        let cfg = tiny(
            "method = dense, snip, grasp, magnitude_after_training\nsparsity = 0.5, 0.9\n\
             ablation = none, grasp_lowest_abs, fixed_variance_init\nprune_iteration = 0, 50%\n",
        );
        let cells = grid_cells(&cfg, 60);
        let count = |m: &str| cells.iter().filter(|c| c.method.name() == m).count();
        assert_eq!(count("dense"), 1);
        // none at both k, fixed variance at k = 0 only
        assert_eq!(count("snip"), 2 * 3);
        assert_eq!(count("grasp"), 2 * 5);
        assert_eq!(count("magnitude_after_training"), 2);
        assert!(cells.iter().filter(|c| c.method.name() == "magnitude_after_training").all(|c| c.k == 8));
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let cfg = tiny("method = snip, random\nsparsity = 0.5\nscoring_per_class = 500\n");
        let (tr, te) = cfg.load_data().unwrap();
        let report = run_grid(&cfg, &tr, &te, None, &RunOptions::default()).unwrap();
        assert!(!report.cells[0].error.is_empty());
        assert!(report.cells[1].error.is_empty());
        assert_eq!(report.aggregates[0].n, 0);
    }

    #[test]
    fn resume_and_parallel_runs_agree() {
        let cfg = tiny("method = random, synflow\nsparsity = 0.5, 0.8\nreplicates = 2\n");
        let (tr, te) = cfg.load_data().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let strip = |rows: Vec<ReportRow>| -> Vec<ReportRow> { rows.into_iter().map(|r| ReportRow { wall_time_s: None, ..r }).collect() };
        let serial = run_grid(&cfg, &tr, &te, Some(&path), &RunOptions { jobs: 1, ..Default::default() }).unwrap();
        assert_eq!(strip(read_rows(&path).unwrap()), strip(serial.rows()));
        let parallel = run_grid(&cfg, &tr, &te, None, &RunOptions { jobs: 3, ..Default::default() }).unwrap();
        assert_eq!(strip(parallel.rows()), strip(serial.rows()));
        // drop the last cell row and resume: only that cell reruns
        let mut rows = read_rows(&path).unwrap();
        rows.retain(|r| r.kind == RowKind::Cell);
        let kept = rows[..rows.len() - 1].to_vec();
        std::fs::write(&path, rows_to_csv(&kept)).unwrap();
        let resumed = run_grid(&cfg, &tr, &te, Some(&path), &RunOptions { jobs: 1, resume: true, progress: false }).unwrap();
        assert_eq!(resumed.cells[..kept.len()], kept[..]);
        assert_eq!(strip(resumed.rows()), strip(serial.rows()));
    }
}
