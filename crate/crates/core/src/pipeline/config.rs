//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [input]
//! original = "data/train.jsonl"
//! synthetic = "data/generated.jsonl"
//! task = "SA"
//!
//! [entropy]
//! types = ["ie", "ge"]
//!
//! [intervals]
//! source = "catalog"      # or "quantile" with k, or "explicit" with labels
//!
//! [search]
//! subset_fraction = 0.2
//! evaluator = "builtin"   # or "external:<command>"
//!
//! [mix]
//! strategy = "joseldata"
//! mode = "same_interval"
//! ```
//!
//! Relative paths in a file are resolved against the file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SplitSpec, Task};
use crate::entropy::{EntropyKind, IEConfig, Smoothing};
use crate::scoring::{resolve_interval, Normalization};
use crate::search::{CandidateIntervals, EvaluatorKind, SearchConfig, SubsetSize};
use crate::selection::JoinMode;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub original: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    #[serde(default)]
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub types: Vec<String>,
    pub weights: [f64; 3],
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            types: vec!["IE".to_string()],
            weights: IEConfig::default().weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    #[default]
    AddK,
    KneserNey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub order: usize,
    pub smoothing: SmoothingKind,
    pub k: f64,
    pub discount: f64,
    /// Pre-computed scorer table; when absent a scorer is trained on the inputs.
    pub table: Option<PathBuf>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            order: 2,
            smoothing: SmoothingKind::AddK,
            k: 1.0,
            discount: 0.75,
            table: None,
        }
    }
}

impl ScorerConfig {
    pub fn smoothing(&self) -> Smoothing {
        match self.smoothing {
            SmoothingKind::AddK => Smoothing::AddK { k: self.k },
            SmoothingKind::KneserNey => Smoothing::KneserNey {
                discount: self.discount,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalSourceKind {
    #[default]
    Catalog,
    Quantile,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntervalConfig {
    pub source: IntervalSourceKind,
    pub k: Option<usize>,
    /// Catalog labels such as `3-10` or bounds such as `2.5:7`.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub enabled: bool,
    pub subset_fraction: Option<f64>,
    pub subset_size: Option<usize>,
    pub lambda: f64,
    pub evaluator: String,
    pub epochs: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            enabled: true,
            subset_fraction: None,
            subset_size: None,
            lambda: 0.0,
            evaluator: "builtin".to_string(),
            epochs: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    #[default]
    None,
    Sumdata,
    Joseldata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub strategy: MixStrategy,
    pub mode: JoinMode,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("euds-out")
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; there is no clock-derived fallback.
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub input: InputConfig,
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub normalize: Normalization,
    #[serde(default)]
    pub intervals: IntervalConfig,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default = "default_bins")]
    pub distribution_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: default_output_dir(),
            input: InputConfig::default(),
            split: None,
            entropy: EntropyConfig::default(),
            scorer: ScorerConfig::default(),
            normalize: Normalization::default(),
            intervals: IntervalConfig::default(),
            search: SearchSection::default(),
            mix: MixConfig::default(),
            distribution_bins: default_bins(),
        }
    }
}

/// A configuration that passed validation.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub kinds: BTreeSet<EntropyKind>,
    pub ie: IEConfig,
    pub candidates: CandidateIntervals,
    pub search: SearchConfig,
    pub split: Option<SplitSpec>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.output_dir);
        for p in [
            &mut cfg.input.original,
            &mut cfg.input.synthetic,
            &mut cfg.scorer.table,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn set_entropy_types(&mut self, list: &str) {
        self.entropy.types = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }

    /// Restricts the candidates to a single interval.
    pub fn set_interval(&mut self, spec: &str) {
        self.intervals = IntervalConfig {
            source: IntervalSourceKind::Explicit,
            k: None,
            labels: vec![spec.to_string()],
        };
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, PipelineError> {
        let seed = self
            .seed
            .ok_or_else(|| config_err("a seed is required (set `seed` or pass --seed)"))?;
        if self.input.original.is_none() && self.input.synthetic.is_none() {
            return Err(config_err("no input dataset configured"));
        }
        if self.mix.strategy != MixStrategy::None
            && (self.input.original.is_none() || self.input.synthetic.is_none())
        {
            return Err(config_err(
                "mixing needs both an original and a synthetic input",
            ));
        }

        let kinds = self
            .entropy
            .types
            .iter()
            .map(|t| t.parse::<EntropyKind>().map_err(config_err))
            .collect::<Result<BTreeSet<_>, _>>()?;
        if kinds.is_empty() {
            return Err(config_err("no entropy type requested"));
        }
        let ie = IEConfig::new(self.entropy.weights).map_err(|e| config_err(e.to_string()))?;

        let candidates = match self.intervals.source {
            IntervalSourceKind::Catalog => CandidateIntervals::Catalog,
            IntervalSourceKind::Quantile => {
                let k = self
                    .intervals
                    .k
                    .ok_or_else(|| config_err("quantile intervals need `k`"))?;
                if k < 2 {
                    return Err(config_err(format!(
                        "quantile k must be at least 2, got {k}"
                    )));
                }
                CandidateIntervals::Quantile(k)
            }
            IntervalSourceKind::Explicit => {
                if self.intervals.labels.is_empty() {
                    return Err(config_err("explicit intervals need at least one label"));
                }
                CandidateIntervals::Explicit(
                    self.intervals
                        .labels
                        .iter()
                        .map(|l| resolve_interval(l).map_err(|e| config_err(e.to_string())))
                        .collect::<Result<_, _>>()?,
                )
            }
        };
        if !self.search.enabled {
            match &candidates {
                CandidateIntervals::Explicit(list) if list.len() == 1 => {}
                _ => {
                    return Err(config_err(
                        "without search exactly one explicit interval is required",
                    ))
                }
            }
        }

        let subset = match (self.search.subset_fraction, self.search.subset_size) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "set either subset_fraction or subset_size, not both",
                ))
            }
            (Some(f), None) if f > 0.0 && f <= 1.0 => SubsetSize::Fraction(f),
            (Some(f), None) => {
                return Err(config_err(format!(
                    "subset_fraction must be in (0, 1], got {f}"
                )))
            }
            (None, Some(n)) => SubsetSize::Count(n),
            (None, None) => SubsetSize::Default,
        };
        if !(self.search.lambda.is_finite() && self.search.lambda >= 0.0) {
            return Err(config_err(format!(
                "lambda must be a non-negative number, got {}",
                self.search.lambda
            )));
        }
        let evaluator: EvaluatorKind = self.search.evaluator.parse().map_err(config_err)?;
        let search = SearchConfig {
            subset,
            seed,
            candidates: candidates.clone(),
            lambda: self.search.lambda,
            evaluator,
            proxy_epochs: self.search.epochs,
        };

        if self.distribution_bins < 2 {
            return Err(config_err("distribution_bins must be at least 2"));
        }
        let split = self.split.map(|s| SplitSpec {
            train_ratio: s.train,
            val_ratio: s.val,
            test_ratio: s.test,
            seed,
            stratified: s.stratified,
        });
        Ok(ResolvedConfig {
            seed,
            kinds,
            ie,
            candidates,
            search,
            split,
        })
    }
}
