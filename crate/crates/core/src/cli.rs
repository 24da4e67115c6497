//! The `prunelab` command line.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, unreadable or
//! invalid config), 2 for failures while running.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::ablations::AblationKind;
use crate::analysis::{effective_sparsity, layerwise_csv, layerwise_report, neuron_collapse, path_norm};
use crate::dump::Dump;
use crate::error::Error;
use crate::network::MaskedNetwork;
use crate::pruning::{prune, sample_scoring_batch, Method, PruneRequest, Schedule};
use crate::runner::{cell_seeds, emit_plot_data, read_rows, run_grid, Cell, ExperimentConfig, GridMethod, PlotAxis, RunOptions};
use crate::training::RunSeeds;

#[derive(Debug, Parser)]
#[command(name = "prunelab", version, about = "Prune fully-connected networks at initialization and study the results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        /// Results CSV.
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip cells already completed in the results file.
        #[arg(long)]
        resume: bool,
    },
    /// Diagnostics for a mask dump. With no flags, prints the effective
    /// sparsity and the layerwise report.
    Analyze {
        dump: PathBuf,
        #[arg(long)]
        effective: bool,
        #[arg(long)]
        collapse: bool,
        #[arg(long)]
        layerwise: bool,
        #[arg(long)]
        pathnorm: bool,
    },
    /// Tidy plot data from a results CSV.
    Report {
        results: PathBuf,
        #[arg(long, value_parser = ["sparsity", "iteration"])]
        plot_axis: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prune a freshly initialized network from a config and dump its masks.
    Score {
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        dump_masks: PathBuf,
        /// Defaults to the config's first sparsity.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Replicate whose seeds are used.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code. Normal output goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<String, Failure> {
    match command {
        Command::Run { config, out, jobs, resume } => {
            let cfg = load_config(&config)?;
            if jobs == 0 {
                return Err(Failure::Usage("--jobs must be at least 1".into()));
            }
            let (train, test) = cfg.load_data()?;
            let report = run_grid(&cfg, &train, &test, Some(&out), &RunOptions { jobs, resume, progress: true })?;
            let failed = report.cells.iter().filter(|r| !r.error.is_empty()).count();
            let mut msg = format!("{} cells, {failed} failed; results in {}\n", report.cells.len(), out.display());
            for a in &report.aggregates {
                let acc = a.accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
                let std = a.accuracy_std.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(msg, "{:<26} s={:<6} {:<20} k={:<7} n={} accuracy {acc} ± {std}", a.method, a.sparsity, a.ablation, a.k, a.n);
            }
            Ok(msg)
        }
        Command::Analyze { dump, effective, collapse, layerwise, pathnorm } => {
            let d = Dump::read(&dump)?;
            let none = !(effective || collapse || layerwise || pathnorm);
            analyze(&d.network, effective || none, collapse, layerwise || none, pathnorm)
        }
        Command::Report { results, plot_axis, out } => {
            let rows = read_rows(&results)?;
            let axis: PlotAxis = plot_axis.parse()?;
            let csv = emit_plot_data(&rows, axis)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
                    Ok(String::new())
                }
                None => Ok(csv),
            }
        }
        Command::Score { config, method, dump_masks, sparsity, replicate } => {
            let cfg = load_config(&config)?;
            let method: Method = method.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let s = sparsity
                .or_else(|| cfg.sparsities.first().copied())
                .ok_or_else(|| Failure::Usage("no sparsity given and none in the config".into()))?;
            let cell = Cell { method: GridMethod::Prune(method), sparsity: s, ablation: AblationKind::None, k: 0, replicate };
            let seeds: RunSeeds = cell_seeds(cfg.base_seed, &cell);
            let net = MaskedNetwork::<f64>::initialize(&cfg.network.layers(), Default::default(), seeds.init)?;
            let batch = if method.needs_data() {
                let (train, _) = cfg.load_data()?;
                Some(sample_scoring_batch(&train, cfg.scoring_per_class, crate::seeds::mix(seeds.cell, 1))?)
            } else {
                None
            };
            let mut req = PruneRequest::new(method, s)
                .schedule(Schedule::from_iterations(cfg.pruning_iterations(method)))
                .seed(crate::seeds::mix(seeds.cell, 2));
            if let Some(b) = &batch {
                req = req.batch(b);
            }
            let pruned = prune(&net, &req)?;
            let mut dump = Dump::new(method.as_str(), seeds.init, pruned);
            dump.extra.insert("base_seed".into(), cfg.base_seed.to_string());
            dump.extra.insert("replicate".into(), replicate.to_string());
            dump.write(&dump_masks)?;
            Ok(format!("{method} at sparsity {s}: masks written to {}\n", dump_masks.display()))
        }
    }
}

fn analyze(net: &MaskedNetwork<f64>, effective: bool, collapse: bool, layerwise: bool, pathnorm: bool) -> Result<String, Failure> {
    let mut out = String::new();
    if effective {
        let r = effective_sparsity(net)?;
        let _ = writeln!(out, "actual_sparsity {}", r.actual_sparsity);
        let _ = writeln!(out, "effective_sparsity {}", r.effective_sparsity);
        let _ = writeln!(out, "disconnected {}", r.disconnected_count);
        for (l, layer) in r.per_layer.iter().enumerate() {
            let _ = writeln!(out, "layer{l} weights {} pruned {} disconnected {}", layer.weights, layer.pruned, layer.disconnected);
        }
    }
    if collapse {
        let thresholds: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let curve = neuron_collapse(net, &thresholds)?;
        out.push_str("threshold,fraction\n");
        for (t, f) in curve.thresholds.iter().zip(&curve.fractions) {
            let _ = writeln!(out, "{t},{f}");
        }
    }
    if layerwise {
        out.push_str(&layerwise_csv(&layerwise_report(net)));
    }
    if pathnorm {
        let _ = writeln!(out, "path_norm {}", path_norm(net)?);
    }
    Ok(out)
}
