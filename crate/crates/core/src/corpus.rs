//! Labeled text datasets: ingestion, validation, splitting and merging.
//!
//! Records are stored one JSON object per line:
//!
//! ```text
//! {"id":"q1","text":"Is it raining?","label":"yes","source":"original"}
//! ```
//!
//! Optional fields are `source`, `generations`, `equivalence_labels` and
//! `logprobs` (per-token log2 probabilities, each `<= 0`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("dataset file {0} contains no records")]
    Empty(String),
    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("stratified split needs at least 3 samples per label; too few for: {}", .0.join(", "))]
    StratumTooSmall(Vec<String>),
    #[error("cannot merge datasets with different tasks ({0} vs {1})")]
    TaskMismatch(Task, Task),
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Original => "original",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "ori" => Ok(Source::Original),
            "synthetic" | "syn" => Ok(Source::Synthetic),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "SA")]
    SentimentAnalysis,
    #[serde(rename = "TopicCLS")]
    TopicClassification,
    #[serde(rename = "QA")]
    QuestionAnswering,
    #[default]
    #[serde(rename = "other")]
    Other,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::SentimentAnalysis => "SA",
            Task::TopicClassification => "TopicCLS",
            Task::QuestionAnswering => "QA",
            Task::Other => "other",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SA" | "sa" => Ok(Task::SentimentAnalysis),
            "TopicCLS" | "topiccls" | "topic" => Ok(Task::TopicClassification),
            "QA" | "qa" => Ok(Task::QuestionAnswering),
            "other" => Ok(Task::Other),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// One labeled text item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub source: Source,
    /// Sampled model outputs used for semantic entropy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<Vec<String>>,
    /// Precomputed semantic class ids, parallel to `generations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence_labels: Option<Vec<i64>>,
    /// External per-token log2 probabilities for generative entropy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: impl Into<String>,
        source: Source,
    ) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            source,
            generations: None,
            equivalence_labels: None,
            logprobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidSample {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid("text is empty after trimming"));
        }
        if let (Some(labels), Some(gens)) = (&self.equivalence_labels, &self.generations) {
            if labels.len() != gens.len() {
                return Err(invalid(&format!(
                    "{} equivalence labels for {} generations",
                    labels.len(),
                    gens.len()
                )));
            }
        }
        if let Some(lp) = &self.logprobs {
            if lp.iter().any(|v| !v.is_finite() || *v > 0.0) {
                return Err(invalid("logprobs must be finite and <= 0"));
            }
        }
        Ok(())
    }
}

/// Wire form of a record: `source` is optional on disk.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    label: String,
    #[serde(default)]
    source: Option<Source>,
    #[serde(default)]
    generations: Option<Vec<String>>,
    #[serde(default)]
    equivalence_labels: Option<Vec<i64>>,
    #[serde(default)]
    logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    samples: Vec<Sample>,
    label_set: BTreeSet<String>,
}

impl Dataset {
    /// Builds a dataset, checking every sample and id uniqueness.
    pub fn new(
        name: impl Into<String>,
        task: Task,
        samples: Vec<Sample>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        let label_set = samples.iter().map(|s| s.label.clone()).collect();
        Ok(Dataset {
            name: name.into(),
            task,
            samples,
            label_set,
        })
    }

    pub fn empty(name: impl Into<String>, task: Task) -> Self {
        Dataset {
            name: name.into(),
            task,
            samples: Vec::new(),
            label_set: BTreeSet::new(),
        }
    }

    /// Adds labels that have no samples yet (e.g. to keep a class in a
    /// filtered subset's label set).
    pub fn with_labels<I: IntoIterator<Item = String>>(mut self, labels: I) -> Self {
        self.label_set.extend(labels);
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Keeps the samples whose ids are in `ids`, in dataset order.
    pub fn subset<S: AsRef<str>>(&self, name: impl Into<String>, ids: &[S]) -> Dataset {
        let wanted: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let samples = self
            .samples
            .iter()
            .filter(|s| wanted.contains(s.id.as_str()))
            .cloned()
            .collect();
        Dataset {
            name: name.into(),
            task: self.task,
            samples,
            label_set: self.label_set.clone(),
        }
    }

    /// Samples grouped by label, each group in dataset order.
    fn strata(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            strata.entry(s.label.as_str()).or_default().push(i);
        }
        strata
    }

    fn pick_indices(&self, name: String, mut idx: Vec<usize>, keep_order: bool) -> Dataset {
        if keep_order {
            idx.sort_unstable();
        }
        Dataset {
            name,
            task: self.task,
            samples: idx.into_iter().map(|i| self.samples[i].clone()).collect(),
            label_set: self.label_set.clone(),
        }
    }
}

/// Reads a line-delimited record file.
///
/// The dataset is named after the file stem. Records without a `source`
/// field get `source_tag`.
pub fn load_dataset(path: &Path, source_tag: Source) -> Result<Dataset, CorpusError> {
    let path_str = path.display().to_string();
    let io_err = |source| CorpusError::Io {
        path: path_str.clone(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            path: path_str.clone(),
            line: line_no,
            reason,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let sample = Sample {
            id: rec.id,
            text: rec.text,
            label: rec.label,
            source: rec.source.unwrap_or(source_tag),
            generations: rec.generations,
            equivalence_labels: rec.equivalence_labels,
            logprobs: rec.logprobs,
        };
        sample.validate().map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(CorpusError::Empty(path_str));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(name, Task::Other, samples)
}

/// Serializes a dataset in the record format.
pub fn write_dataset<W: Write>(d: &Dataset, mut out: W) -> std::io::Result<()> {
    for s in &d.samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    write_dataset(d, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Train/validation/test proportions plus the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            seed,
            stratified: true,
        }
    }

    fn ratios(&self) -> Result<[f64; 3], CorpusError> {
        let r = [self.train_ratio, self.val_ratio, self.test_ratio];
        if r.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(CorpusError::InvalidRatios(format!(
                "ratios must be positive, got {r:?}"
            )));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(r)
    }
}

/// Largest-remainder apportionment of `total` over `weights` (which sum to 1).
/// Ties go to the earlier slot.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &slot in order.iter().take(total.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Splits into (train, validation, test).
///
/// Split totals follow largest-remainder rounding of the whole dataset;
/// with stratification every label's share of each split is the floor or
/// ceiling of its exact quota. Every split keeps dataset order.
pub fn split_dataset(
    d: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), CorpusError> {
    let ratios = spec.ratios()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let strata: Vec<Vec<usize>> = if spec.stratified {
        let strata = d.strata();
        let small: Vec<String> = strata
            .iter()
            .filter(|(_, v)| v.len() < 3)
            .map(|(k, _)| k.to_string())
            .collect();
        if !small.is_empty() {
            return Err(CorpusError::StratumTooSmall(small));
        }
        strata.into_values().collect()
    } else {
        vec![(0..d.len()).collect()]
    };

    let totals = apportion(d.len(), &ratios);
    // floor quotas first, then hand the leftovers out by descending remainder
    let mut quotas: Vec<[usize; 3]> = Vec::with_capacity(strata.len());
    let mut leftovers: Vec<usize> = Vec::with_capacity(strata.len());
    let mut capacity = totals.clone();
    let mut remainders: Vec<(f64, usize, usize)> = Vec::new();
    for (s, members) in strata.iter().enumerate() {
        let mut q = [0usize; 3];
        for j in 0..3 {
            let exact = members.len() as f64 * ratios[j];
            q[j] = exact.floor() as usize;
            capacity[j] -= q[j];
            remainders.push((exact - exact.floor(), s, j));
        }
        leftovers.push(members.len() - q.iter().sum::<usize>());
        quotas.push(q);
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut bumped = vec![[false; 3]; strata.len()];
    for &(_, s, j) in &remainders {
        if leftovers[s] > 0 && capacity[j] > 0 {
            quotas[s][j] += 1;
            leftovers[s] -= 1;
            capacity[j] -= 1;
            bumped[s][j] = true;
        }
    }
    // Whatever the greedy pass could not place goes to any split with room,
    // preferring one this stratum has not been bumped in yet.
    for s in 0..strata.len() {
        while leftovers[s] > 0 {
            let j = (0..3)
                .filter(|&j| capacity[j] > 0)
                .min_by_key(|&j| bumped[s][j])
                .expect("split capacity matches leftover count");
            quotas[s][j] += 1;
            leftovers[s] -= 1;
            capacity[j] -= 1;
            bumped[s][j] = true;
        }
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (members, q) in strata.iter().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for (j, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(q[j]));
        }
    }
    let [train, val, test] = parts;
    Ok((
        d.pick_indices(format!("{}.train", d.name), train, true),
        d.pick_indices(format!("{}.val", d.name), val, true),
        d.pick_indices(format!("{}.test", d.name), test, true),
    ))
}

/// Uniform stratified sample of `size` samples without replacement,
/// returned in a seeded shuffled order.
pub(crate) fn stratified_sample(d: &Dataset, size: usize, seed: u64, name: String) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = d.strata().into_values().collect();
    let weights: Vec<f64> = strata
        .iter()
        .map(|m| m.len() as f64 / d.len() as f64)
        .collect();
    let mut quotas = apportion(size, &weights);
    // a stratum cannot give more than it has; move any excess elsewhere
    let mut excess = 0;
    for (q, m) in quotas.iter_mut().zip(&strata) {
        if *q > m.len() {
            excess += *q - m.len();
            *q = m.len();
        }
    }
    for (q, m) in quotas.iter_mut().zip(&strata) {
        let room = (m.len() - *q).min(excess);
        *q += room;
        excess -= room;
    }
    let mut picked = Vec::with_capacity(size);
    for (members, q) in strata.iter().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        picked.extend(shuffled.into_iter().take(*q));
    }
    picked.shuffle(&mut rng);
    d.pick_indices(name, picked, false)
}

/// Concatenates two datasets (`a` first).
///
/// An id present in both is rewritten as `<source>:<id>` on both sides.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset, CorpusError> {
    if a.task != b.task {
        return Err(CorpusError::TaskMismatch(a.task, b.task));
    }
    let a_ids: HashSet<&str> = a.ids().collect();
    let collisions: HashSet<&str> = b.ids().filter(|id| a_ids.contains(id)).collect();
    let rename = |s: &Sample| {
        let mut s = s.clone();
        if collisions.contains(s.id.as_str()) {
            s.id = format!("{}:{}", s.source, s.id);
        }
        s
    };
    let samples: Vec<Sample> = a.samples.iter().chain(&b.samples).map(rename).collect();
    let name = match (a.is_empty(), b.is_empty()) {
        (_, true) => a.name.clone(),
        (true, false) => b.name.clone(),
        _ => format!("{}+{}", a.name, b.name),
    };
    let merged = Dataset::new(name, a.task, samples)?;
    Ok(merged.with_labels(a.label_set.iter().chain(&b.label_set).cloned()))
}
