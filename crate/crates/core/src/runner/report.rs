//! Results CSV: per-cell rows followed by per-configuration aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: [&str; 14] = [
    "kind",
    "method",
    "sparsity",
    "ablation",
    "k",
    "replicate",
    "seed",
    "n",
    "accuracy",
    "accuracy_std",
    "actual_sparsity",
    "effective_sparsity",
    "wall_time_s",
    "error",
];

pub const PLOT_HEADER: &str = "series,x,mean,stddev";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Cell,
    Aggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub kind: RowKind,
    pub method: String,
    pub sparsity: f64,
    pub ablation: String,
    pub k: usize,
    pub replicate: Option<usize>,
    pub seed: Option<u64>,
    /// 1 for a cell; successful replicates for an aggregate.
    pub n: usize,
    pub accuracy: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub actual_sparsity: Option<f64>,
    pub effective_sparsity: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub error: String,
}

/// Coordinates shared by the replicates of one configuration.
pub type GroupKey = (String, String, String, usize);

impl ReportRow {
    pub fn group_key(&self) -> GroupKey {
        (self.method.clone(), self.sparsity.to_string(), self.ablation.clone(), self.k)
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_empty() && self.accuracy.is_some()
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            match self.kind {
                RowKind::Cell => "cell".into(),
                RowKind::Aggregate => "aggregate".into(),
            },
            self.method.clone(),
            self.sparsity.to_string(),
            self.ablation.clone(),
            self.k.to_string(),
            self.replicate.map(|r| r.to_string()).unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.n.to_string(),
            opt(self.accuracy),
            opt(self.accuracy_std),
            opt(self.actual_sparsity),
            opt(self.effective_sparsity),
            opt(self.wall_time_s),
            self.error.clone(),
        ]
    }

    fn from_record(r: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |msg: String| Error::Parse { line, msg };
        if r.len() != HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", HEADER.len(), r.len())));
        }
        let opt_f = |i: usize| -> Result<Option<f64>> {
            match &r[i] {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(format!("{}: `{v}` is not a number", HEADER[i]))),
            }
        };
        let req = |i: usize| -> Result<&str> {
            match &r[i] {
                "" => Err(bad(format!("{} is empty", HEADER[i]))),
                v => Ok(v),
            }
        };
        let int = |i: usize| -> Result<usize> { req(i)?.parse().map_err(|_| bad(format!("{} is not an integer", HEADER[i]))) };
        Ok(ReportRow {
            kind: match &r[0] {
                "cell" => RowKind::Cell,
                "aggregate" => RowKind::Aggregate,
                other => return Err(bad(format!("unknown row kind `{other}`"))),
            },
            method: req(1)?.to_string(),
            sparsity: opt_f(2)?.ok_or_else(|| bad("sparsity is empty".into()))?,
            ablation: req(3)?.to_string(),
            k: int(4)?,
            replicate: if r[5].is_empty() { None } else { Some(int(5)?) },
            seed: if r[6].is_empty() { None } else { Some(r[6].parse().map_err(|_| bad("seed is not an integer".into()))?) },
            n: int(7)?,
            accuracy: opt_f(8)?,
            accuracy_std: opt_f(9)?,
            actual_sparsity: opt_f(10)?,
            effective_sparsity: opt_f(11)?,
            wall_time_s: opt_f(12)?,
            error: r[13].to_string(),
        })
    }
}

/// Appends rows to a CSV sink, writing the header first when asked.
pub struct RowWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RowWriter<W> {
    pub fn new(sink: W, header: bool) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        if header {
            inner.write_record(HEADER).map_err(csv_err)?;
        }
        Ok(RowWriter { inner })
    }

    pub fn write(&mut self, row: &ReportRow) -> Result<()> {
        self.inner.write_record(row.record()).map_err(csv_err)?;
        self.inner.flush().map_err(|e| Error::io("results", e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut buf = Vec::new();
    {
        let mut w = RowWriter::new(&mut buf, true).expect("in-memory");
        for r in rows {
            w.write(r).expect("in-memory");
        }
    }
    String::from_utf8(buf).expect("utf-8")
}

pub fn parse_rows(reader: impl Read) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse { line: 1, msg: "not a results file (unexpected header)".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        rows.push(ReportRow::from_record(&rec.map_err(csv_err)?, i + 2)?);
    }
    Ok(rows)
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_rows(f).map_err(|e| match e {
        Error::Parse { line, msg } => Error::format(path, format!("line {line}: {msg}")),
        other => other,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// One aggregate row per configuration, in order of first appearance.
pub fn aggregate(cells: &[ReportRow]) -> Vec<ReportRow> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&ReportRow>> = BTreeMap::new();
    for c in cells.iter().filter(|r| r.kind == RowKind::Cell) {
        let key = c.group_key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(c);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&&ReportRow> = members.iter().filter(|r| r.succeeded()).collect();
            let col = |f: fn(&ReportRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| mean(&xs));
            let acc = col(|r| r.accuracy);
            let first = members[0];
            ReportRow {
                kind: RowKind::Aggregate,
                method: first.method.clone(),
                sparsity: first.sparsity,
                ablation: first.ablation.clone(),
                k: first.k,
                replicate: None,
                seed: None,
                n: ok.len(),
                accuracy_std: sample_std(&acc),
                accuracy: avg(acc),
                actual_sparsity: avg(col(|r| r.actual_sparsity)),
                effective_sparsity: avg(col(|r| r.effective_sparsity)),
                wall_time_s: avg(col(|r| r.wall_time_s)),
                error: if ok.is_empty() { format!("all {} replicates failed", members.len()) } else { String::new() },
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotAxis {
    Sparsity,
    Iteration,
}

impl std::str::FromStr for PlotAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparsity" => Ok(PlotAxis::Sparsity),
            "iteration" => Ok(PlotAxis::Iteration),
            _ => Err(Error::Config(format!("unknown plot axis `{s}`"))),
        }
    }
}

/// Tidy `series,x,mean,stddev` rows from the aggregates of a report (cells
/// are aggregated first if the report has none). A series is
/// `method+ablation`; when the other axis varies within it, the series name
/// carries it as `@k=…` or `@s=…`.
pub fn emit_plot_data(rows: &[ReportRow], axis: PlotAxis) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("the report is empty".into()));
    }
    let mut aggs: Vec<ReportRow> = rows.iter().filter(|r| r.kind == RowKind::Aggregate).cloned().collect();
    if aggs.is_empty() {
        aggs = aggregate(rows);
    }
    let mut off_axis: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for a in &aggs {
        let base = format!("{}+{}", a.method, a.ablation);
        let other = match axis {
            PlotAxis::Sparsity => a.k.to_string(),
            PlotAxis::Iteration => a.sparsity.to_string(),
        };
        let seen = off_axis.entry(base).or_default();
        if !seen.contains(&other) {
            seen.push(other);
        }
    }
    let mut points: Vec<(String, f64, f64, Option<f64>)> = aggs
        .iter()
        .filter_map(|a| {
            let mean = a.accuracy?;
            let base = format!("{}+{}", a.method, a.ablation);
            let (x, suffix) = match axis {
                PlotAxis::Sparsity => (a.sparsity, format!("@k={}", a.k)),
                PlotAxis::Iteration => (a.k as f64, format!("@s={}", a.sparsity)),
            };
            let series = if off_axis[&base].len() > 1 { base + &suffix } else { base };
            Some((series, x, mean, a.accuracy_std))
        })
        .collect();
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out = format!("{PLOT_HEADER}\n");
    for (series, x, mean, std) in points {
        let _ = writeln!(out, "{series},{x},{mean},{}", std.map(|s| s.to_string()).unwrap_or_default());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: &str, s: f64, k: usize, rep: usize, acc: f64) -> ReportRow {
        ReportRow {
            kind: RowKind::Cell,
            method: method.into(),
            sparsity: s,
            ablation: "none".into(),
            k,
            replicate: Some(rep),
            seed: Some(42 + rep as u64),
            n: 1,
            accuracy: Some(acc),
            accuracy_std: None,
            actual_sparsity: Some(s),
            effective_sparsity: Some(s),
            wall_time_s: Some(0.25),
            error: String::new(),
        }
    }

    #[test]
    fn aggregates_use_sample_std() {
        let cells = vec![cell("snip", 0.5, 0, 0, 0.9), cell("snip", 0.5, 0, 1, 0.92), cell("snip", 0.5, 0, 2, 0.94)];
        let agg = aggregate(&cells);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].n, 3);
        assert!((agg[0].accuracy.unwrap() - 0.92).abs() < 1e-15);
        assert!((agg[0].accuracy_std.unwrap() - 0.02).abs() < 1e-12);
        let dup = vec![cell("snip", 0.5, 0, 0, 0.9), cell("snip", 0.5, 0, 0, 0.9)];
        assert_eq!(aggregate(&dup)[0].accuracy_std, Some(0.0));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut cells = vec![cell("grasp", 0.9, 0, 0, 1.0 / 3.0), cell("grasp", 0.9, 0, 1, 0.7)];
        cells[1].error = "diverged, at \"step\" 3".into();
        cells[1].accuracy = None;
        let mut rows = cells.clone();
        rows.extend(aggregate(&cells));
        let text = rows_to_csv(&rows);
        assert!(text.starts_with(&HEADER.join(",")));
        assert_eq!(parse_rows(text.as_bytes()).unwrap(), rows);
        assert!(parse_rows("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn plot_data() {
        let single = emit_plot_data(&[cell("snip", 0.5, 0, 0, 0.9)], PlotAxis::Sparsity).unwrap();
        assert_eq!(single, "series,x,mean,stddev\nsnip+none,0.5,0.9,\n");
        let cells = vec![cell("random", 0.9, 0, 0, 0.9), cell("random", 0.5, 0, 0, 0.95), cell("random", 0.5, 10, 0, 0.94)];
        let text = emit_plot_data(&cells, PlotAxis::Sparsity).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1..], ["random+none@k=0,0.5,0.95,", "random+none@k=0,0.9,0.9,", "random+none@k=10,0.5,0.94,"]);
        let text = emit_plot_data(&cells, PlotAxis::Iteration).unwrap();
        assert!(text.contains("random+none@s=0.5,10,0.94,"));
        assert!(emit_plot_data(&[], PlotAxis::Sparsity).is_err());
    }
}
