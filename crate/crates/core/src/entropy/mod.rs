//! Per-sample entropy measures.
//!
//! * information entropy (IE): weighted Shannon entropy of a text's own
//!   unigram, bigram and trigram frequencies;
//! * generative entropy (GE): mean per-token surprisal under a
//!   [`TokenScorer`] or under sidecar log-probabilities;
//! * semantic entropy (SE): entropy over equivalence classes of sampled
//!   generations.
//!
//! All values are in bits.

mod ngram;
mod scorer;
mod semantic;
mod tokenize;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Sample};

pub use ngram::{
    information_entropy, information_entropy_tokens, ngram_distribution, shannon_entropy, IEConfig,
    ProbDist, MAX_ORDER,
};
pub use scorer::{
    generative_entropy, generative_entropy_from_logprobs, train_ngram_scorer, train_on_sequences,
    NgramScorer, Smoothing, TableScorer, TokenScorer, UniformScorer, BOS, MAX_SCORER_ORDER, UNK,
};
pub use semantic::{
    cluster_generations, clusters_from_labels, semantic_entropy, ClusterSet, Equivalence,
    NormalizedEquality, UnionFind,
};
pub use tokenize::{normalize_generation, tokenize, TokenSeq};

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("n-gram order {0} is out of range")]
    InvalidOrder(usize),
    #[error("text has {len} tokens, fewer than n = {n}")]
    TooShort { len: usize, n: usize },
    #[error("IE weights must be nonnegative and sum to 1, got {0:?}")]
    InvalidWeights(Vec<f64>),
    #[error("invalid smoothing: {0}")]
    InvalidSmoothing(String),
    #[error("cannot train a scorer on an empty corpus")]
    EmptyCorpus,
    #[error("text has no tokens")]
    EmptyText,
    #[error("sidecar logprobs have length {got}, text has {expected} tokens")]
    LogprobLength { expected: usize, got: usize },
    #[error("scorer table line {line}: {reason}")]
    ScorerFormat { line: usize, reason: String },
    #[error("no entropy type requested")]
    NothingRequested,
    #[error("sample `{id}`: {reason}")]
    Sample { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntropyKind {
    #[serde(rename = "IE")]
    Information,
    #[serde(rename = "GE")]
    Generative,
    #[serde(rename = "SE")]
    Semantic,
}

impl EntropyKind {
    pub const ALL: [EntropyKind; 3] = [
        EntropyKind::Information,
        EntropyKind::Generative,
        EntropyKind::Semantic,
    ];

    pub fn code(self) -> &'static str {
        match self {
            EntropyKind::Information => "IE",
            EntropyKind::Generative => "GE",
            EntropyKind::Semantic => "SE",
        }
    }
}

impl fmt::Display for EntropyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EntropyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ie" => Ok(EntropyKind::Information),
            "ge" => Ok(EntropyKind::Generative),
            "se" => Ok(EntropyKind::Semantic),
            other => Err(format!(
                "unknown entropy type `{other}` (expected ie, ge or se)"
            )),
        }
    }
}

/// Entropy values of one sample; absent entries were not requested.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyVector {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ie: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

impl EntropyVector {
    pub fn get(&self, kind: EntropyKind) -> Option<f64> {
        match kind {
            EntropyKind::Information => self.ie,
            EntropyKind::Generative => self.ge,
            EntropyKind::Semantic => self.se,
        }
    }

    pub fn set(&mut self, kind: EntropyKind, value: f64) {
        let slot = match kind {
            EntropyKind::Information => &mut self.ie,
            EntropyKind::Generative => &mut self.ge,
            EntropyKind::Semantic => &mut self.se,
        };
        *slot = Some(value);
    }
}

/// Providers used by [`score_dataset`].
#[derive(Clone, Copy)]
pub struct ScoreContext<'a> {
    pub ie: IEConfig,
    /// Needed for GE unless every sample carries sidecar logprobs.
    pub scorer: Option<&'a dyn TokenScorer>,
    pub equivalence: &'a dyn Equivalence,
}

impl Default for ScoreContext<'_> {
    fn default() -> Self {
        ScoreContext {
            ie: IEConfig::default(),
            scorer: None,
            equivalence: &NormalizedEquality,
        }
    }
}

fn sample_error(s: &Sample, reason: impl Into<String>) -> EntropyError {
    EntropyError::Sample {
        id: s.id.clone(),
        reason: reason.into(),
    }
}

fn score_sample(
    s: &Sample,
    which: &BTreeSet<EntropyKind>,
    ctx: &ScoreContext<'_>,
) -> Result<EntropyVector, EntropyError> {
    let tokens = tokenize(&s.text);
    let mut v = EntropyVector::default();
    for &kind in which {
        let value =
            match kind {
                EntropyKind::Information => information_entropy_tokens(&tokens, &ctx.ie),
                EntropyKind::Generative => match (&s.logprobs, ctx.scorer) {
                    // nothing to predict in a punctuation-only text
                    (None, _) if tokens.is_empty() => 0.0,
                    (Some(lp), _) if tokens.is_empty() && lp.is_empty() => 0.0,
                    (Some(lp), _) => generative_entropy_from_logprobs(tokens.len(), lp)
                        .map_err(|e| sample_error(s, e.to_string()))?,
                    (None, Some(scorer)) => generative_entropy(&tokens, scorer)
                        .map_err(|e| sample_error(s, e.to_string()))?,
                    (None, None) => return Err(sample_error(
                        s,
                        "GE requested but no scorer is configured and the sample has no logprobs",
                    )),
                },
                EntropyKind::Semantic => {
                    let clusters = match (&s.equivalence_labels, &s.generations) {
                        (Some(labels), _) if !labels.is_empty() => clusters_from_labels(labels),
                        (_, Some(g)) if !g.is_empty() => cluster_generations(g, ctx.equivalence),
                        _ => {
                            return Err(sample_error(
                                s,
                                "SE requested but the sample has no generations",
                            ))
                        }
                    };
                    semantic_entropy(&clusters)
                }
            };
        v.set(kind, value);
    }
    Ok(v)
}

/// Computes the requested entropies for every sample, keyed by id in
/// dataset order. Samples are scored in parallel.
pub fn score_dataset(
    d: &Dataset,
    which: &BTreeSet<EntropyKind>,
    ctx: &ScoreContext<'_>,
) -> Result<IndexMap<String, EntropyVector>, EntropyError> {
    if which.is_empty() {
        return Err(EntropyError::NothingRequested);
    }
    ctx.ie.validate()?;
    let vectors: Vec<EntropyVector> = d
        .samples()
        .par_iter()
        .map(|s| score_sample(s, which, ctx))
        .collect::<Result<_, _>>()?;
    Ok(d.ids().map(str::to_string).zip(vectors).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Task};

    fn dataset(texts: &[&str]) -> Dataset {
        let samples = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample::new(format!("s{i}"), *t, "l", Source::Original))
            .collect();
        Dataset::new("d", Task::Other, samples).unwrap()
    }

    fn kinds(k: &[EntropyKind]) -> BTreeSet<EntropyKind> {
        k.iter().copied().collect()
    }

    #[test]
    fn selective_computation() {
        let d = dataset(&["a b c", "a a", "x y z w"]);
        let out = score_dataset(
            &d,
            &kinds(&[EntropyKind::Information]),
            &ScoreContext::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out
            .values()
            .all(|v| v.ie.is_some() && v.ge.is_none() && v.se.is_none()));
        assert_eq!(out.keys().collect::<Vec<_>>(), ["s0", "s1", "s2"]);
    }

    #[test]
    fn empty_request_rejected() {
        let d = dataset(&["a"]);
        assert!(matches!(
            score_dataset(&d, &BTreeSet::new(), &ScoreContext::default()),
            Err(EntropyError::NothingRequested)
        ));
    }

    #[test]
    fn se_without_generations_names_sample() {
        let d = dataset(&["a b"]);
        match score_dataset(
            &d,
            &kinds(&[EntropyKind::Semantic]),
            &ScoreContext::default(),
        ) {
            Err(EntropyError::Sample { id, .. }) => assert_eq!(id, "s0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ge_needs_scorer_or_sidecar() {
        let mut s = Sample::new("s0", "a b", "l", Source::Original);
        s.logprobs = Some(vec![-1.0, -3.0]);
        let d = Dataset::new("d", Task::Other, vec![s]).unwrap();
        let out = score_dataset(
            &d,
            &kinds(&[EntropyKind::Generative]),
            &ScoreContext::default(),
        )
        .unwrap();
        assert_eq!(out["s0"].ge, Some(2.0));

        let d = dataset(&["a b"]);
        assert!(score_dataset(
            &d,
            &kinds(&[EntropyKind::Generative]),
            &ScoreContext::default()
        )
        .is_err());
        let uniform = UniformScorer::new(8);
        let ctx = ScoreContext {
            scorer: Some(&uniform),
            ..ScoreContext::default()
        };
        let out = score_dataset(&d, &kinds(&[EntropyKind::Generative]), &ctx).unwrap();
        assert_eq!(out["s0"].ge, Some(3.0));
    }

    #[test]
    fn all_three_kinds() {
        let mut s = Sample::new("s0", "the cat sat", "l", Source::Original);
        s.generations = Some(vec!["Yes".into(), "yes.".into(), "no".into(), "No!".into()]);
        let d = Dataset::new("d", Task::Other, vec![s]).unwrap();
        let scorer = train_ngram_scorer(&d, 2, Smoothing::default()).unwrap();
        let ctx = ScoreContext {
            scorer: Some(&scorer),
            ..ScoreContext::default()
        };
        let v = score_dataset(&d, &kinds(&EntropyKind::ALL), &ctx).unwrap()["s0"];
        assert!(v.ie.unwrap() > 0.0);
        assert!(v.ge.unwrap() > 0.0);
        assert_eq!(v.se, Some(1.0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "IE".parse::<EntropyKind>().unwrap(),
            EntropyKind::Information
        );
        assert_eq!(" se".parse::<EntropyKind>().unwrap(), EntropyKind::Semantic);
        assert!("xe".parse::<EntropyKind>().is_err());
    }
}
