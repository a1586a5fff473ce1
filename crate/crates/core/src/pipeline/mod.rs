//! Configuration-driven orchestration: load, optional split, score,
//! normalize, search or direct selection, optional mixing, emit.
//!
//! Artifacts written to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `split_{pool}_{part}.jsonl` | split parts, when splitting is configured |
//! | `scores_{pool}.csv` | raw and normalized scores per sample and type |
//! | `distribution_{pool}_{type}.csv` | histogram of normalized scores |
//! | `results_{pool}_{type}.csv` | one row per evaluated interval plus the baseline |
//! | `selected_{pool}.jsonl` | the selected samples, with `.manifest.json` |
//! | `sumdata.jsonl` / `joseldata.jsonl` | mixed data, with `.manifest.json` |
//! | `report.json` | everything above plus stage timings |
//!
//! All files except the timings in `report.json` are a pure function of the
//! inputs and the configuration.

mod config;
mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_dataset, split_dataset, write_dataset, CorpusError, Dataset, Source};
use crate::entropy::{
    score_dataset, tokenize, train_on_sequences, EntropyError, EntropyKind, EntropyVector,
    ScoreContext, TableScorer, TokenScorer,
};
use crate::scoring::{normalize_scores, write_score_table, ScoreRecord, ScoringError};
use crate::search::{search_optimal_interval, CandidateIntervals, SearchError};
use crate::selection::{
    build_joseldata, build_sumdata, materialize, select_combined, JoinMode, SelectionError,
    SelectionManifest, SelectionResult, SelectionSpec,
};

pub use config::{
    EntropyConfig, InputConfig, IntervalConfig, IntervalSourceKind, MixConfig, MixStrategy,
    ResolvedConfig, RunConfig, ScorerConfig, SearchSection, SmoothingKind, SplitConfig,
};
pub use output::{
    emit_distribution, emit_result_table, histogram, write_distribution, write_result_table,
    ResultTable, RowStatus, StagedOutput, TableRow, RESULT_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Split,
    Score,
    Normalize,
    Search,
    Select,
    Mix,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Score => "score",
            Stage::Normalize => "normalize",
            Stage::Search => "search",
            Stage::Select => "select",
            Stage::Mix => "mix",
            Stage::Emit => "emit",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    /// 2 for configuration errors, 4 for evaluator failures, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage {
                source: StageError::Search(e),
                ..
            } if e.is_evaluator_error() => 4,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// How far a run goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Stops after normalization.
    Score,
    /// Stops after selection.
    Select,
    /// Stops after the interval search.
    Search,
    /// Requires a mixing strategy.
    Mix,
    Run,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// The interval decision applied to one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenSelection {
    pub pool: String,
    pub spec: SelectionSpec,
    pub subset_derived: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub seed: u64,
    pub command: Command,
    pub tables: Vec<ResultTable>,
    pub chosen: Vec<ChosenSelection>,
    pub manifests: Vec<SelectionManifest>,
    pub files: Vec<String>,
    /// Wall-clock seconds; the only non-reproducible part of a run.
    pub timings: Vec<StageTiming>,
}

struct Pool {
    name: &'static str,
    data: Dataset,
    raw: IndexMap<String, EntropyVector>,
    normalized: BTreeMap<EntropyKind, IndexMap<String, f64>>,
}

impl Pool {
    fn normalized_vectors(&self) -> IndexMap<String, EntropyVector> {
        let mut out: IndexMap<String, EntropyVector> = self
            .data
            .ids()
            .map(|id| (id.to_string(), EntropyVector::default()))
            .collect();
        for (kind, scores) in &self.normalized {
            for (id, v) in scores {
                out[id.as_str()].set(*kind, *v);
            }
        }
        out
    }
}

#[derive(Default)]
struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn time<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce() -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        log::info!("stage {stage}");
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn jsonl(d: &Dataset) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf)?;
    Ok(buf)
}

fn json<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

fn load_pools(cfg: &RunConfig) -> Result<Vec<Pool>, PipelineError> {
    let mut pools = Vec::new();
    for (name, path, source) in [
        ("original", &cfg.input.original, Source::Original),
        ("synthetic", &cfg.input.synthetic, Source::Synthetic),
    ] {
        let Some(path) = path else { continue };
        let mut data = load_dataset(path, source).map_err(at(Stage::Load))?;
        data.task = cfg.input.task;
        log::info!("{name}: {} samples from {}", data.len(), path.display());
        pools.push(Pool {
            name,
            data,
            raw: IndexMap::new(),
            normalized: BTreeMap::new(),
        });
    }
    Ok(pools)
}

fn build_scorer(
    cfg: &RunConfig,
    pools: &[Pool],
) -> Result<Option<Box<dyn TokenScorer>>, PipelineError> {
    let needed = pools
        .iter()
        .flat_map(|p| p.data.samples())
        .any(|s| s.logprobs.is_none());
    if !needed {
        return Ok(None);
    }
    if let Some(path) = &cfg.scorer.table {
        let file = File::open(path)
            .map_err(|e| at(Stage::Score)(StageError::Other(format!("{}: {e}", path.display()))))?;
        let table = TableScorer::read(BufReader::new(file)).map_err(at(Stage::Score))?;
        return Ok(Some(Box::new(table)));
    }
    let seqs: Vec<_> = pools
        .iter()
        .flat_map(|p| p.data.samples())
        .map(|s| tokenize(&s.text))
        .collect();
    let scorer = train_on_sequences(&seqs, cfg.scorer.order, cfg.scorer.smoothing())
        .map_err(at(Stage::Score))?;
    log::info!(
        "trained {}-gram scorer over {} types",
        scorer.order(),
        scorer.vocab_size()
    );
    Ok(Some(Box::new(scorer)))
}

fn score_records(pool: &Pool) -> Vec<ScoreRecord> {
    let mut rows = Vec::new();
    for (id, v) in &pool.raw {
        for (kind, scores) in &pool.normalized {
            rows.push(ScoreRecord {
                sample_id: id.clone(),
                entropy_type: *kind,
                raw_bits: v.get(*kind).expect("requested types are scored"),
                normalized: scores[id.as_str()],
            });
        }
    }
    rows
}

/// Runs the full pipeline.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    run_command(cfg, Command::Run)
}

pub fn run_command(cfg: &RunConfig, command: Command) -> Result<RunReport, PipelineError> {
    let r = cfg.resolve()?;
    if command == Command::Mix && cfg.mix.strategy == MixStrategy::None {
        return Err(PipelineError::Config("mix needs a mixing strategy".into()));
    }
    let mut timer = Timer::default();
    let mut staged = StagedOutput::default();
    let mut report = RunReport {
        tool_version: crate::VERSION.to_string(),
        seed: r.seed,
        command,
        tables: Vec::new(),
        chosen: Vec::new(),
        manifests: Vec::new(),
        files: Vec::new(),
        timings: Vec::new(),
    };

    let mut pools = timer.time(Stage::Load, || load_pools(cfg))?;

    if let Some(spec) = r.split {
        timer.time(Stage::Split, || {
            for pool in pools.iter_mut() {
                let (train, val, test) =
                    split_dataset(&pool.data, &spec).map_err(at(Stage::Split))?;
                for (part, d) in [("train", &train), ("val", &val), ("test", &test)] {
                    staged.add(
                        format!("split_{}_{part}.jsonl", pool.name),
                        jsonl(d).map_err(at(Stage::Split))?,
                    );
                }
                pool.data = train;
            }
            Ok(())
        })?;
    }

    timer.time(Stage::Score, || {
        let scorer = if r.kinds.contains(&EntropyKind::Generative) {
            build_scorer(cfg, &pools)?
        } else {
            None
        };
        let ctx = ScoreContext {
            ie: r.ie,
            scorer: scorer.as_deref(),
            ..ScoreContext::default()
        };
        for pool in pools.iter_mut() {
            pool.raw = score_dataset(&pool.data, &r.kinds, &ctx).map_err(at(Stage::Score))?;
        }
        Ok(())
    })?;

    timer.time(Stage::Normalize, || {
        for pool in pools.iter_mut() {
            for &kind in &r.kinds {
                let raw: IndexMap<String, f64> = pool
                    .raw
                    .iter()
                    .map(|(id, v)| (id.clone(), v.get(kind).expect("requested types are scored")))
                    .collect();
                let norm = normalize_scores(&raw, cfg.normalize).map_err(at(Stage::Normalize))?;
                staged
                    .add_with(format!("distribution_{}_{kind}.csv", pool.name), |buf| {
                        write_distribution(&norm, cfg.distribution_bins, buf)
                    })
                    .map_err(at(Stage::Normalize))?;
                pool.normalized.insert(kind, norm);
            }
            let mut buf = Vec::new();
            write_score_table(&mut buf, &score_records(pool)).map_err(at(Stage::Normalize))?;
            staged.add(format!("scores_{}.csv", pool.name), buf);
        }
        Ok(())
    })?;

    if command != Command::Score {
        let same_interval =
            cfg.mix.strategy == MixStrategy::Joseldata && cfg.mix.mode == JoinMode::SameInterval;
        // pools that get their own interval decision
        let deciding: Vec<usize> = pools
            .iter()
            .enumerate()
            .filter(|(_, p)| match cfg.mix.strategy {
                MixStrategy::Sumdata => p.name == "synthetic",
                _ => !(same_interval && p.name == "synthetic"),
            })
            .map(|(i, _)| i)
            .collect();

        let specs: BTreeMap<&'static str, SelectionSpec> = timer.time(Stage::Search, || {
            let mut specs = BTreeMap::new();
            for &i in &deciding {
                let pool = &pools[i];
                let mut chosen = Vec::new();
                for &kind in &r.kinds {
                    if cfg.search.enabled {
                        let outcome = search_optimal_interval(
                            &pool.data,
                            &pool.normalized[&kind],
                            kind,
                            &r.search,
                        )
                        .map_err(at(Stage::Search))?;
                        log::info!("{} {kind}: chose {}", pool.name, outcome.best);
                        let table = ResultTable::from_outcome(pool.name, outcome);
                        staged
                            .add_with(format!("results_{}_{kind}.csv", pool.name), |buf| {
                                write_result_table(&table, buf)
                            })
                            .map_err(at(Stage::Search))?;
                        chosen.push((kind, table.chosen.clone()));
                        report.tables.push(table);
                    } else {
                        let CandidateIntervals::Explicit(list) = &r.candidates else {
                            unreachable!("validated: direct selection has one explicit interval")
                        };
                        chosen.push((kind, list[0].clone()));
                    }
                }
                let spec = SelectionSpec::intersection(chosen);
                report.chosen.push(ChosenSelection {
                    pool: pool.name.to_string(),
                    spec: spec.clone(),
                    subset_derived: cfg.search.enabled,
                });
                specs.insert(pool.name, spec);
            }
            if same_interval {
                let spec = specs["original"].clone();
                report.chosen.push(ChosenSelection {
                    pool: "synthetic".to_string(),
                    spec: spec.clone(),
                    subset_derived: cfg.search.enabled,
                });
                specs.insert("synthetic", spec);
            }
            Ok(specs)
        })?;

        if command != Command::Search {
            let selections: BTreeMap<&'static str, SelectionResult> =
                timer.time(Stage::Select, || {
                    let mut out = BTreeMap::new();
                    for pool in &pools {
                        let Some(spec) = specs.get(pool.name) else {
                            continue;
                        };
                        let sel = select_combined(&pool.data, &pool.normalized_vectors(), spec)
                            .map_err(at(Stage::Select))?;
                        let data = materialize(&pool.data, &sel).map_err(at(Stage::Select))?;
                        let name = format!("selected_{}", pool.name);
                        let manifest = SelectionManifest::for_selection(
                            &sel,
                            &name,
                            cfg.search.enabled,
                            r.seed,
                        );
                        staged.add(
                            format!("{name}.jsonl"),
                            jsonl(&data).map_err(at(Stage::Select))?,
                        );
                        staged.add(
                            format!("{name}.manifest.json"),
                            json(&manifest).map_err(at(Stage::Select))?,
                        );
                        report.manifests.push(manifest);
                        out.insert(pool.name, sel);
                    }
                    Ok(out)
                })?;

            if command != Command::Select && cfg.mix.strategy != MixStrategy::None {
                timer.time(Stage::Mix, || {
                    let ori = &pools[0].data;
                    let syn = &pools[1].data;
                    let sel_syn = &selections["synthetic"];
                    let (name, mixed, used) = match cfg.mix.strategy {
                        MixStrategy::Sumdata => (
                            "sumdata",
                            build_sumdata(sel_syn, syn, ori).map_err(at(Stage::Mix))?,
                            vec![sel_syn],
                        ),
                        MixStrategy::Joseldata => {
                            let sel_ori = &selections["original"];
                            (
                                "joseldata",
                                build_joseldata(sel_syn, syn, sel_ori, ori, cfg.mix.mode)
                                    .map_err(at(Stage::Mix))?,
                                vec![sel_ori, sel_syn],
                            )
                        }
                        MixStrategy::None => unreachable!(),
                    };
                    let manifest = SelectionManifest::for_mix(
                        name,
                        &mixed,
                        ori,
                        syn,
                        &used,
                        cfg.search.enabled,
                        r.seed,
                    )
                    .map_err(at(Stage::Mix))?;
                    staged.add(
                        format!("{name}.jsonl"),
                        jsonl(&mixed).map_err(at(Stage::Mix))?,
                    );
                    staged.add(
                        format!("{name}.manifest.json"),
                        json(&manifest).map_err(at(Stage::Mix))?,
                    );
                    report.manifests.push(manifest);
                    Ok(())
                })?;
            }
        }
    }

    let start = Instant::now();
    report.files = staged
        .names()
        .map(str::to_string)
        .chain(std::iter::once("report.json".to_string()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    report.timings = timer.timings;
    report.timings.push(StageTiming {
        stage: Stage::Emit,
        seconds: start.elapsed().as_secs_f64(),
    });
    staged.add("report.json", json(&report).map_err(at(Stage::Emit))?);
    staged.commit(&cfg.output_dir).map_err(at(Stage::Emit))?;
    Ok(report)
}

/// Reads a `report.json` written by an earlier run.
pub fn read_report(path: &std::path::Path) -> Result<RunReport, PipelineError> {
    let file = File::open(path).map_err(at(Stage::Load))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| at(Stage::Load)(StageError::Other(format!("{}: {e}", path.display()))))
}
