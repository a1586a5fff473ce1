//! Choosing the entropy interval by evaluation on a representative subset.
//!
//! The subset is split into train/validation/test; every candidate interval
//! filters the training split only, a model is trained on what remains and
//! scored on the untouched validation split. The interval with the best
//! `accuracy gain (pct points) + lambda * reduction_pct` wins and is then
//! applied to the whole pool.

mod external;
mod proxy;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{split_dataset, stratified_sample, CorpusError, Dataset, SplitSpec};
use crate::entropy::EntropyKind;
use crate::scoring::{interval_catalog, quantile_intervals, Interval, ScoringError};
use crate::selection::{
    materialize, select_by_interval, SelectionError, SelectionManifest, SelectionResult,
};

pub use external::{external_train_eval, run_external_evaluator};
pub use proxy::{classification_metrics, proxy_train_eval, ProxyClassifier, ProxyConfig};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("subset of {size} is below the minimum of {min} (10 per label)")]
    SubsetTooSmall { size: usize, min: usize },
    #[error("subset of {size} exceeds the pool of {pool}")]
    SubsetTooLarge { size: usize, pool: usize },
    #[error("invalid subset fraction {0}")]
    InvalidFraction(f64),
    #[error("invalid trade-off lambda {0}")]
    InvalidLambda(f64),
    #[error("cannot train on an empty training set")]
    EmptyTrainingSet,
    #[error("cannot evaluate on an empty validation set")]
    EmptyValidationSet,
    #[error("every candidate interval selected zero training samples")]
    AllInfeasible,
    #[error("no candidate intervals")]
    NoCandidates,
    #[error("{metric} = {value} is outside [0, 1]")]
    MetricRange { metric: &'static str, value: f64 },
    #[error("could not run evaluator `{command}`: {reason}")]
    EvaluatorSpawn { command: String, reason: String },
    #[error("evaluator `{command}` exited with status {status:?}: {stderr}")]
    EvaluatorFailed {
        command: String,
        status: Option<i32>,
        stderr: String,
    },
    #[error("evaluator output is not a {{accuracy, macro_f1}} object: {raw}")]
    EvaluatorOutput { raw: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl SearchError {
    /// True for failures of the evaluator itself rather than of the data.
    pub fn is_evaluator_error(&self) -> bool {
        matches!(
            self,
            SearchError::MetricRange { .. }
                | SearchError::EvaluatorSpawn { .. }
                | SearchError::EvaluatorFailed { .. }
                | SearchError::EvaluatorOutput { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub train_count: usize,
    pub val_count: usize,
}

impl EvalResult {
    pub fn new(
        accuracy: f64,
        macro_f1: f64,
        train_count: usize,
        val_count: usize,
    ) -> Result<Self, SearchError> {
        for (metric, value) in [("accuracy", accuracy), ("macro_f1", macro_f1)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SearchError::MetricRange { metric, value });
            }
        }
        if train_count == 0 {
            return Err(SearchError::EmptyTrainingSet);
        }
        if val_count == 0 {
            return Err(SearchError::EmptyValidationSet);
        }
        Ok(EvalResult {
            accuracy,
            macro_f1,
            train_count,
            val_count,
        })
    }
}

/// Trains on one dataset and reports validation metrics on another.
pub trait Evaluator: Sync {
    fn evaluate(&self, train: &Dataset, val: &Dataset) -> Result<EvalResult, SearchError>;
}

impl Evaluator for ProxyConfig {
    fn evaluate(&self, train: &Dataset, val: &Dataset) -> Result<EvalResult, SearchError> {
        proxy_train_eval(train, val, self)
    }
}

/// An external command speaking the evaluator protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalEvaluator {
    pub command: String,
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, train: &Dataset, val: &Dataset) -> Result<EvalResult, SearchError> {
        external_train_eval(&self.command, train, val)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Builtin,
    External(String),
}

impl std::str::FromStr for EvaluatorKind {
    type Err = String;

    /// `builtin` or `external:<command>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "builtin" => Ok(EvaluatorKind::Builtin),
            Some(("external", cmd)) if !cmd.trim().is_empty() => {
                Ok(EvaluatorKind::External(cmd.to_string()))
            }
            _ => Err(format!(
                "unknown evaluator `{s}` (expected builtin or external:<command>)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSize {
    /// `min(2000, 20% of the pool)`.
    Default,
    Fraction(f64),
    Count(usize),
}

impl SubsetSize {
    pub fn resolve(&self, pool: usize) -> Result<usize, SearchError> {
        match *self {
            SubsetSize::Default => Ok(2000.min((pool as f64 * 0.2).round() as usize)),
            SubsetSize::Fraction(f) if f > 0.0 && f <= 1.0 => {
                Ok(((pool as f64 * f).round() as usize).max(1))
            }
            SubsetSize::Fraction(f) => Err(SearchError::InvalidFraction(f)),
            SubsetSize::Count(n) => Ok(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateIntervals {
    Catalog,
    Quantile(usize),
    Explicit(Vec<Interval>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub subset: SubsetSize,
    pub seed: u64,
    pub candidates: CandidateIntervals,
    pub lambda: f64,
    pub evaluator: EvaluatorKind,
    pub proxy_epochs: usize,
}

impl SearchConfig {
    pub fn new(seed: u64) -> Self {
        SearchConfig {
            subset: SubsetSize::Default,
            seed,
            candidates: CandidateIntervals::Catalog,
            lambda: 0.0,
            evaluator: EvaluatorKind::Builtin,
            proxy_epochs: ProxyConfig::default().epochs,
        }
    }

    pub fn build_evaluator(&self) -> Box<dyn Evaluator> {
        match &self.evaluator {
            EvaluatorKind::Builtin => Box::new(ProxyConfig {
                epochs: self.proxy_epochs,
                seed: self.seed,
            }),
            EvaluatorKind::External(cmd) => Box::new(ExternalEvaluator {
                command: cmd.clone(),
            }),
        }
    }
}

/// Stratified uniform subset, in a seeded shuffled order.
pub fn sample_subset(d: &Dataset, cfg: &SearchConfig) -> Result<Dataset, SearchError> {
    let size = cfg.subset.resolve(d.len())?;
    let min = 10 * d.label_set().len();
    if size < min {
        return Err(SearchError::SubsetTooSmall { size, min });
    }
    if size > d.len() {
        return Err(SearchError::SubsetTooLarge {
            size,
            pool: d.len(),
        });
    }
    Ok(stratified_sample(
        d,
        size,
        cfg.seed,
        format!("{}.subset", d.name),
    ))
}

/// Training and validation data for interval evaluation. Candidate
/// intervals only ever filter `train`.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub train: Dataset,
    pub val: Dataset,
}

impl EvalSplit {
    /// 8:1:1 stratified split; the test part is held out.
    pub fn from_pool(pool: &Dataset, seed: u64) -> Result<Self, SearchError> {
        let (train, val, _test) = split_dataset(pool, &SplitSpec::new(seed))?;
        Ok(EvalSplit { train, val })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub interval: Interval,
    /// `None` when the interval selects no training samples.
    pub eval: Option<EvalResult>,
    pub selected_count: usize,
    pub reduction_pct: f64,
    /// `(accuracy - baseline_accuracy) * 100 + lambda * reduction_pct`.
    pub score: Option<f64>,
}

impl IntervalReport {
    pub fn is_feasible(&self) -> bool {
        self.eval.is_some()
    }
}

pub fn baseline_interval() -> Interval {
    Interval {
        label: "full".to_string(),
        ..Interval::full()
    }
}

fn objective(eval: &EvalResult, baseline: &EvalResult, lambda: f64, reduction_pct: f64) -> f64 {
    (eval.accuracy - baseline.accuracy) * 100.0 + lambda * reduction_pct
}

/// Trains on the full training split.
pub fn evaluate_baseline(
    split: &EvalSplit,
    evaluator: &dyn Evaluator,
) -> Result<IntervalReport, SearchError> {
    let eval = evaluator.evaluate(&split.train, &split.val)?;
    Ok(IntervalReport {
        interval: baseline_interval(),
        eval: Some(eval),
        selected_count: split.train.len(),
        reduction_pct: 0.0,
        score: Some(0.0),
    })
}

/// Evaluates one interval against the baseline.
pub fn evaluate_interval(
    split: &EvalSplit,
    scores: &IndexMap<String, f64>,
    kind: EntropyKind,
    iv: &Interval,
    evaluator: &dyn Evaluator,
    baseline: &EvalResult,
    lambda: f64,
) -> Result<IntervalReport, SearchError> {
    let sel = select_by_interval(&split.train, scores, kind, iv)?;
    if sel.is_empty() {
        return Ok(IntervalReport {
            interval: iv.clone(),
            eval: None,
            selected_count: 0,
            reduction_pct: sel.reduction_pct,
            score: None,
        });
    }
    let train = materialize(&split.train, &sel)?;
    let eval = evaluator.evaluate(&train, &split.val)?;
    Ok(IntervalReport {
        interval: iv.clone(),
        score: Some(objective(&eval, baseline, lambda, sel.reduction_pct)),
        eval: Some(eval),
        selected_count: sel.selected_count,
        reduction_pct: sel.reduction_pct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub entropy_type: EntropyKind,
    pub best: Interval,
    pub baseline: IntervalReport,
    /// One report per candidate, in candidate order.
    pub reports: Vec<IntervalReport>,
    pub subset_size: usize,
    pub lambda: f64,
}

impl SearchOutcome {
    pub fn best_report(&self) -> &IntervalReport {
        self.reports
            .iter()
            .find(|r| r.interval == self.best)
            .expect("best interval comes from the reports")
    }
}

fn candidates(
    cfg: &SearchConfig,
    train: &Dataset,
    scores: &IndexMap<String, f64>,
) -> Result<Vec<Interval>, SearchError> {
    let list = match &cfg.candidates {
        CandidateIntervals::Catalog => interval_catalog().intervals().to_vec(),
        CandidateIntervals::Quantile(k) => {
            let s: Vec<f64> = train
                .ids()
                .map(|id| {
                    scores
                        .get(id)
                        .copied()
                        .ok_or_else(|| SelectionError::MissingScore(id.to_string()))
                })
                .collect::<Result<_, _>>()?;
            quantile_intervals(&s, *k)?
        }
        CandidateIntervals::Explicit(list) => list.clone(),
    };
    if list.is_empty() {
        return Err(SearchError::NoCandidates);
    }
    Ok(list)
}

/// Index of the best feasible report: highest objective, then larger
/// reduction, then higher macro-F1, then earliest candidate.
pub fn pick_best(reports: &[IntervalReport]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        let (Some(score), Some(eval)) = (r.score, r.eval.as_ref()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &reports[b];
                let cur_score = cur.score.expect("feasible");
                let cur_f1 = cur.eval.as_ref().expect("feasible").macro_f1;
                score > cur_score
                    || (score == cur_score
                        && (r.reduction_pct > cur.reduction_pct
                            || (r.reduction_pct == cur.reduction_pct && eval.macro_f1 > cur_f1)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Runs the subset search for one entropy type.
///
/// `scores` are normalized scores covering the pool.
pub fn search_optimal_interval(
    pool: &Dataset,
    scores: &IndexMap<String, f64>,
    kind: EntropyKind,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    if !cfg.lambda.is_finite() || cfg.lambda < 0.0 {
        return Err(SearchError::InvalidLambda(cfg.lambda));
    }
    if let Some(id) = pool.ids().find(|id| !scores.contains_key(*id)) {
        return Err(SelectionError::MissingScore(id.to_string()).into());
    }
    let subset = sample_subset(pool, cfg)?;
    let split = EvalSplit::from_pool(&subset, cfg.seed)?;
    let evaluator = cfg.build_evaluator();
    let evaluator = evaluator.as_ref();

    let baseline = evaluate_baseline(&split, evaluator)?;
    let base_eval = baseline.eval.expect("baseline is feasible");
    let candidates = candidates(cfg, &split.train, scores)?;
    let reports: Vec<IntervalReport> = candidates
        .par_iter()
        .map(|iv| evaluate_interval(&split, scores, kind, iv, evaluator, &base_eval, cfg.lambda))
        .collect::<Result<_, _>>()?;
    let best = pick_best(&reports).ok_or(SearchError::AllInfeasible)?;
    Ok(SearchOutcome {
        entropy_type: kind,
        best: reports[best].interval.clone(),
        baseline,
        reports,
        subset_size: subset.len(),
        lambda: cfg.lambda,
    })
}

/// Applies a (typically subset-derived) interval to the complete pool.
pub fn apply_to_full(
    pool: &Dataset,
    scores: &IndexMap<String, f64>,
    kind: EntropyKind,
    iv: &Interval,
    seed: u64,
) -> Result<(SelectionResult, SelectionManifest), SearchError> {
    let sel = select_by_interval(pool, scores, kind, iv)?;
    let manifest =
        SelectionManifest::for_selection(&sel, &format!("{}.selected", pool.name), true, seed);
    Ok((sel, manifest))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Mutex;

    use super::*;
    use crate::corpus::{Sample, Source, Task};
    use crate::scoring::resolve_interval;

    fn pool(n: usize, labels: &[&str]) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let l = labels[i % labels.len()];
                Sample::new(format!("s{i}"), format!("{l} word{i}"), l, Source::Original)
            })
            .collect();
        Dataset::new("pool", Task::Other, samples).unwrap()
    }

    fn report(label: &str, acc: f64, f1: f64, reduction: f64) -> IntervalReport {
        IntervalReport {
            interval: resolve_interval(label).unwrap(),
            eval: Some(EvalResult::new(acc, f1, 10, 10).unwrap()),
            selected_count: 10,
            reduction_pct: reduction,
            score: Some((acc - 0.5) * 100.0),
        }
    }

    #[test]
    fn subset_sizes() {
        let d = pool(10_000, &["a", "b"]);
        let mut cfg = SearchConfig::new(3);
        cfg.subset = SubsetSize::Fraction(0.2);
        assert_eq!(sample_subset(&d, &cfg).unwrap().len(), 2000);
        cfg.subset = SubsetSize::Default;
        assert_eq!(sample_subset(&d, &cfg).unwrap().len(), 2000);
        let small = pool(1000, &["a", "b"]);
        assert_eq!(sample_subset(&small, &cfg).unwrap().len(), 200);
    }

    #[test]
    fn full_fraction_is_a_shuffled_pool() {
        let d = pool(100, &["a", "b"]);
        let mut cfg = SearchConfig::new(3);
        cfg.subset = SubsetSize::Fraction(1.0);
        let s = sample_subset(&d, &cfg).unwrap();
        let a: HashSet<&str> = s.ids().collect();
        assert_eq!(a, d.ids().collect::<HashSet<_>>());
        assert_ne!(s.ids().collect::<Vec<_>>(), d.ids().collect::<Vec<_>>());
        assert_eq!(s, sample_subset(&d, &cfg).unwrap());
    }

    #[test]
    fn subset_is_stratified() {
        let mut samples: Vec<Sample> = (0..900)
            .map(|i| Sample::new(format!("a{i}"), "x", "a", Source::Original))
            .collect();
        samples.extend((0..100).map(|i| Sample::new(format!("b{i}"), "y", "b", Source::Original)));
        let d = Dataset::new("d", Task::Other, samples).unwrap();
        let mut cfg = SearchConfig::new(5);
        cfg.subset = SubsetSize::Count(200);
        let s = sample_subset(&d, &cfg).unwrap();
        assert_eq!(s.samples().iter().filter(|x| x.label == "b").count(), 20);
    }

    #[test]
    fn subset_size_limits() {
        let d = pool(100, &["a", "b", "c"]);
        let mut cfg = SearchConfig::new(0);
        cfg.subset = SubsetSize::Count(29);
        assert!(matches!(
            sample_subset(&d, &cfg),
            Err(SearchError::SubsetTooSmall { size: 29, min: 30 })
        ));
        cfg.subset = SubsetSize::Count(101);
        assert!(matches!(
            sample_subset(&d, &cfg),
            Err(SearchError::SubsetTooLarge { .. })
        ));
        cfg.subset = SubsetSize::Fraction(0.0);
        assert!(sample_subset(&d, &cfg).is_err());
    }

    #[test]
    fn argmax_and_tie_breaks() {
        // strict accuracy winner
        let r = vec![report("0-3", 0.6, 0.6, 10.0), report("3-5", 0.7, 0.5, 5.0)];
        assert_eq!(pick_best(&r), Some(1));
        // tie on accuracy: larger reduction
        let r = vec![report("0-3", 0.7, 0.7, 10.0), report("3-5", 0.7, 0.7, 40.0)];
        assert_eq!(pick_best(&r), Some(1));
        // tie on both: macro-F1
        let r = vec![report("0-3", 0.7, 0.6, 40.0), report("3-5", 0.7, 0.7, 40.0)];
        assert_eq!(pick_best(&r), Some(1));
        // full tie: catalog order
        let r = vec![report("0-3", 0.7, 0.7, 40.0), report("3-5", 0.7, 0.7, 40.0)];
        assert_eq!(pick_best(&r), Some(0));
        let infeasible = IntervalReport {
            eval: None,
            score: None,
            ..report("8-10", 0.0, 0.0, 100.0)
        };
        assert_eq!(pick_best(&[infeasible]), None);
    }

    /// Records what each evaluation was trained and validated on.
    struct Spy {
        seen: Mutex<Vec<(Vec<String>, Vec<String>)>>,
    }

    impl Evaluator for Spy {
        fn evaluate(&self, train: &Dataset, val: &Dataset) -> Result<EvalResult, SearchError> {
            self.seen.lock().unwrap().push((
                train.ids().map(str::to_string).collect(),
                val.ids().map(str::to_string).collect(),
            ));
            EvalResult::new(0.5, 0.5, train.len(), val.len())
        }
    }

    #[test]
    fn validation_never_leaks_into_training() {
        let d = pool(300, &["a", "b"]);
        let scores: IndexMap<String, f64> = d
            .ids()
            .enumerate()
            .map(|(i, id)| (id.to_string(), (i % 11) as f64 * 0.95))
            .collect();
        let split = EvalSplit::from_pool(&d, 9).unwrap();
        let spy = Spy {
            seen: Mutex::new(Vec::new()),
        };
        let base = evaluate_baseline(&split, &spy).unwrap();
        for iv in interval_catalog().intervals() {
            evaluate_interval(
                &split,
                &scores,
                EntropyKind::Information,
                iv,
                &spy,
                base.eval.as_ref().unwrap(),
                0.0,
            )
            .unwrap();
        }
        let seen = spy.seen.lock().unwrap();
        assert_eq!(seen.len(), 10);
        for (train, val) in seen.iter() {
            let val: HashSet<&String> = val.iter().collect();
            assert!(train.iter().all(|id| !val.contains(id)));
        }
    }

    #[test]
    fn empty_interval_is_infeasible_not_an_error() {
        let d = pool(100, &["a", "b"]);
        let scores: IndexMap<String, f64> = d.ids().map(|id| (id.to_string(), 1.0)).collect();
        let split = EvalSplit::from_pool(&d, 1).unwrap();
        let proxy = ProxyConfig::default();
        let base = evaluate_baseline(&split, &proxy).unwrap();
        let r = evaluate_interval(
            &split,
            &scores,
            EntropyKind::Information,
            &resolve_interval("8-10").unwrap(),
            &proxy,
            base.eval.as_ref().unwrap(),
            0.0,
        )
        .unwrap();
        assert!(!r.is_feasible());
        assert_eq!(r.reduction_pct, 100.0);

        let full = evaluate_interval(
            &split,
            &scores,
            EntropyKind::Information,
            &Interval::full(),
            &proxy,
            base.eval.as_ref().unwrap(),
            0.0,
        )
        .unwrap();
        assert_eq!(full.reduction_pct, 0.0);
        assert_eq!(full.eval, base.eval);
        assert_eq!(full.score, Some(0.0));
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let d = pool(200, &["a", "b"]);
        let scores: IndexMap<String, f64> = d.ids().map(|id| (id.to_string(), 9.0)).collect();
        let mut cfg = SearchConfig::new(2);
        cfg.candidates = CandidateIntervals::Explicit(vec![resolve_interval("0-3").unwrap()]);
        assert!(matches!(
            search_optimal_interval(&d, &scores, EntropyKind::Information, &cfg),
            Err(SearchError::AllInfeasible)
        ));
    }

    #[test]
    fn search_reports_every_catalog_interval() {
        let d = pool(1000, &["a", "b"]);
        let scores: IndexMap<String, f64> = d
            .ids()
            .enumerate()
            .map(|(i, id)| (id.to_string(), (i % 101) as f64 / 10.0))
            .collect();
        let cfg = SearchConfig::new(4);
        let out = search_optimal_interval(&d, &scores, EntropyKind::Information, &cfg).unwrap();
        assert_eq!(out.reports.len(), 9);
        assert_eq!(out.baseline.reduction_pct, 0.0);
        assert_eq!(out.baseline.interval.label, "full");
        assert_eq!(out.subset_size, 200);
        assert_eq!(
            out,
            search_optimal_interval(&d, &scores, EntropyKind::Information, &cfg).unwrap()
        );
    }

    #[test]
    fn evaluator_kind_parsing() {
        assert_eq!(
            "builtin".parse::<EvaluatorKind>().unwrap(),
            EvaluatorKind::Builtin
        );
        assert_eq!(
            "external:python eval.py".parse::<EvaluatorKind>().unwrap(),
            EvaluatorKind::External("python eval.py".into())
        );
        assert!("external:".parse::<EvaluatorKind>().is_err());
        assert!("bert".parse::<EvaluatorKind>().is_err());
    }

    #[test]
    fn apply_marks_subset_derivation() {
        let d = pool(50, &["a", "b"]);
        let scores: IndexMap<String, f64> = d.ids().map(|id| (id.to_string(), 4.0)).collect();
        let (sel, manifest) =
            apply_to_full(&d, &scores, EntropyKind::Information, &Interval::full(), 1).unwrap();
        assert_eq!(sel.selected_count, 50);
        assert!(manifest.subset_derived);
        let again = apply_to_full(&d, &scores, EntropyKind::Information, &Interval::full(), 1)
            .unwrap()
            .1;
        assert_eq!(manifest, again);
    }
}
