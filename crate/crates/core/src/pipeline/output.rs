//! Result tables, score histograms and the staged output writer.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropyKind;
use crate::scoring::Interval;
use crate::search::{IntervalReport, SearchOutcome};

/// Search results for one pool and entropy type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub pool: String,
    pub entropy_type: EntropyKind,
    pub chosen: Interval,
    pub baseline: IntervalReport,
    pub reports: Vec<IntervalReport>,
    pub subset_size: usize,
    pub lambda: f64,
}

impl ResultTable {
    pub fn from_outcome(pool: &str, outcome: SearchOutcome) -> Self {
        ResultTable {
            pool: pool.to_string(),
            entropy_type: outcome.entropy_type,
            chosen: outcome.best,
            baseline: outcome.baseline,
            reports: outcome.reports,
            subset_size: outcome.subset_size,
            lambda: outcome.lambda,
        }
    }

    /// Baseline first, then every candidate in evaluation order.
    pub fn rows(&self) -> Vec<TableRow> {
        let base = self.baseline.eval.expect("baseline is always evaluated");
        let mut rows = vec![TableRow {
            interval: self.baseline.interval.label.clone(),
            reduction_pct: 0.0,
            accuracy_delta_pct: Some(0.0),
            f1_delta_pct: Some(0.0),
            status: RowStatus::Baseline,
        }];
        rows.extend(self.reports.iter().map(|r| match &r.eval {
            Some(e) => TableRow {
                interval: r.interval.label.clone(),
                reduction_pct: r.reduction_pct,
                accuracy_delta_pct: Some((e.accuracy - base.accuracy) * 100.0),
                f1_delta_pct: Some((e.macro_f1 - base.macro_f1) * 100.0),
                status: RowStatus::Feasible,
            },
            None => TableRow {
                interval: r.interval.label.clone(),
                reduction_pct: r.reduction_pct,
                accuracy_delta_pct: None,
                f1_delta_pct: None,
                status: RowStatus::Infeasible,
            },
        }));
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Baseline,
    Feasible,
    Infeasible,
}

impl RowStatus {
    fn as_str(self) -> &'static str {
        match self {
            RowStatus::Baseline => "baseline",
            RowStatus::Feasible => "feasible",
            RowStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub interval: String,
    pub reduction_pct: f64,
    pub accuracy_delta_pct: Option<f64>,
    pub f1_delta_pct: Option<f64>,
    pub status: RowStatus,
}

fn signed(x: Option<f64>) -> String {
    match x {
        None => "n/a".to_string(),
        Some(v) => {
            let s = format!("{v:+.2}");
            if s == "-0.00" {
                "+0.00".to_string()
            } else {
                s
            }
        }
    }
}

impl TableRow {
    pub fn fields(&self) -> [String; 5] {
        [
            self.interval.clone(),
            format!("{:.2}", self.reduction_pct),
            signed(self.accuracy_delta_pct),
            signed(self.f1_delta_pct),
            self.status.as_str().to_string(),
        ]
    }
}

pub const RESULT_HEADER: &str = "interval,reduction_pct,accuracy_delta_pct,f1_delta_pct,status";

pub fn write_result_table<W: Write>(table: &ResultTable, mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULT_HEADER}")?;
    for row in table.rows() {
        writeln!(out, "{}", row.fields().join(","))?;
    }
    Ok(())
}

pub fn emit_result_table(table: &ResultTable, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_result_table(table, &mut buf)?;
    fs::write(path, buf)
}

/// `(lower, upper, count)` for `bins` equal-width bins over `[0, 10]`.
/// The last bin is closed so that 10 is counted.
///
/// Panics if `bins < 2`.
pub fn histogram(scores: &IndexMap<String, f64>, bins: usize) -> Vec<(f64, f64, usize)> {
    assert!(bins >= 2, "a histogram needs at least 2 bins");
    let mut counts = vec![0usize; bins];
    for &s in scores.values() {
        let b = ((s / 10.0) * bins as f64).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            (
                10.0 * i as f64 / bins as f64,
                10.0 * (i + 1) as f64 / bins as f64,
                c,
            )
        })
        .collect()
}

pub fn write_distribution<W: Write>(
    scores: &IndexMap<String, f64>,
    bins: usize,
    mut out: W,
) -> io::Result<()> {
    writeln!(out, "bin_lower,bin_upper,count")?;
    for (lo, hi, c) in histogram(scores, bins) {
        writeln!(out, "{lo:.2},{hi:.2},{c}")?;
    }
    Ok(())
}

pub fn emit_distribution(
    scores: &IndexMap<String, f64>,
    bins: usize,
    path: &Path,
) -> io::Result<()> {
    let mut buf = Vec::new();
    write_distribution(scores, bins, &mut buf)?;
    fs::write(path, buf)
}

/// Collects every artifact in memory and publishes them together.
///
/// Nothing touches the output directory before [`StagedOutput::commit`].
/// A commit writes into a scratch directory first and then moves each file
/// into place; on failure everything already moved is removed again.
#[derive(Debug, Default)]
pub struct StagedOutput {
    files: BTreeMap<String, Vec<u8>>,
}

impl StagedOutput {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn add_with<F>(&mut self, name: impl Into<String>, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn commit(self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let partial = dir.join(".partial");
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
        }
        fs::create_dir(&partial)?;
        let mut published = Vec::new();
        let result = (|| {
            for (name, bytes) in &self.files {
                fs::write(partial.join(name), bytes)?;
            }
            for name in self.files.keys() {
                let target = dir.join(name);
                fs::rename(partial.join(name), &target)?;
                published.push(target);
            }
            Ok(())
        })();
        let cleanup = fs::remove_dir_all(&partial);
        match result {
            Ok(()) => {
                cleanup?;
                Ok(published)
            }
            Err(e) => {
                for p in &published {
                    let _ = fs::remove_file(p);
                }
                Err(e)
            }
        }
    }
}
