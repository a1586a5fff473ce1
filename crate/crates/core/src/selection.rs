//! Interval-filtered datasets, combined-entropy selection and the two
//! original/synthetic mixing strategies.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{merge_datasets, CorpusError, Dataset, Source};
use crate::entropy::{EntropyKind, EntropyVector};
use crate::scoring::Interval;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("sample `{0}` has no score")]
    MissingScore(String),
    #[error("sample `{id}` has no {kind} score")]
    MissingTypeScore { id: String, kind: EntropyKind },
    #[error("original count must be positive")]
    ZeroOriginal,
    #[error("selected count {selected} exceeds original count {original}")]
    Overfull { original: usize, selected: usize },
    #[error("invalid selection spec: {0}")]
    InvalidSpec(String),
    #[error("sample `{0}` is not synthetic")]
    NotSynthetic(String),
    #[error("synthetic labels not in the original label set: {}", .0.join(", "))]
    LabelMismatch(Vec<String>),
    #[error("same-interval mixing needs identical selections, got {ori} (original) and {syn} (synthetic)")]
    IntervalMismatch { ori: String, syn: String },
    #[error("selection was drawn from `{expected}`, not `{got}`")]
    WrongParent { expected: String, got: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How several per-type memberships combine into one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CombineMode {
    /// Keep a sample only if every per-type interval contains its score.
    Intersection,
    /// Filter the weighted mean of the normalized scores by one interval.
    FusedScore { weights: BTreeMap<EntropyKind, f64> },
}

impl CombineMode {
    pub fn name(&self) -> &'static str {
        match self {
            CombineMode::Intersection => "intersection",
            CombineMode::FusedScore { .. } => "fused_score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    /// One interval per entropy type, in type order.
    pub intervals: Vec<(EntropyKind, Interval)>,
    pub combine: CombineMode,
}

impl SelectionSpec {
    pub fn single(kind: EntropyKind, iv: Interval) -> Self {
        SelectionSpec {
            intervals: vec![(kind, iv)],
            combine: CombineMode::Intersection,
        }
    }

    pub fn intersection(mut intervals: Vec<(EntropyKind, Interval)>) -> Self {
        intervals.sort_by_key(|(k, _)| *k);
        SelectionSpec {
            intervals,
            combine: CombineMode::Intersection,
        }
    }

    /// Weighted-mean score over the weighted types, filtered by `iv`.
    pub fn fused(weights: BTreeMap<EntropyKind, f64>, iv: Interval) -> Self {
        SelectionSpec {
            intervals: weights.keys().map(|&k| (k, iv.clone())).collect(),
            combine: CombineMode::FusedScore { weights },
        }
    }

    pub fn entropy_types(&self) -> Vec<EntropyKind> {
        self.intervals.iter().map(|(k, _)| *k).collect()
    }

    pub fn interval_labels(&self) -> Vec<String> {
        self.intervals
            .iter()
            .map(|(_, iv)| iv.label.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidSpec(m.to_string()));
        if self.intervals.is_empty() {
            return bad("no entropy type listed");
        }
        let mut seen = HashSet::new();
        if !self.intervals.iter().all(|(k, _)| seen.insert(*k)) {
            return bad("an entropy type is listed twice");
        }
        if let CombineMode::FusedScore { weights } = &self.combine {
            if weights.keys().copied().collect::<Vec<_>>() != self.entropy_types() {
                return bad("fused weights must cover exactly the listed types");
            }
            if weights.values().any(|w| !w.is_finite() || *w < 0.0)
                || (weights.values().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return bad("fused weights must be nonnegative and sum to 1");
            }
            let first = &self.intervals[0].1;
            if self.intervals.iter().any(|(_, iv)| iv != first) {
                return bad("fused mode takes a single shared interval");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub parent: String,
    pub selected_ids: Vec<String>,
    pub spec: SelectionSpec,
    pub original_count: usize,
    pub selected_count: usize,
    pub reduction_pct: f64,
}

impl SelectionResult {
    fn new(
        parent: &Dataset,
        selected_ids: Vec<String>,
        spec: SelectionSpec,
    ) -> Result<Self, SelectionError> {
        let original_count = parent.len();
        let selected_count = selected_ids.len();
        let reduction_pct = if original_count == 0 {
            0.0
        } else {
            reduction_stats(original_count, selected_count)?
        };
        if selected_count == 0 {
            log::warn!(
                "selection {} on `{}` is empty",
                spec.interval_labels().join("+"),
                parent.name
            );
        }
        Ok(SelectionResult {
            parent: parent.name.clone(),
            selected_ids,
            spec,
            original_count,
            selected_count,
            reduction_pct,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }
}

/// Percentage of samples removed, `100 * (1 - selected / original)`,
/// rounded half-up to two decimals.
pub fn reduction_stats(
    original_count: usize,
    selected_count: usize,
) -> Result<f64, SelectionError> {
    if original_count == 0 {
        return Err(SelectionError::ZeroOriginal);
    }
    if selected_count > original_count {
        return Err(SelectionError::Overfull {
            original: original_count,
            selected: selected_count,
        });
    }
    // exact integer arithmetic in hundredths of a percent
    let removed = (original_count - selected_count) as u128;
    let original = original_count as u128;
    let hundredths = (removed * 20_000 + original) / (2 * original);
    Ok(hundredths as f64 / 100.0)
}

/// Keeps the samples whose normalized score falls in `iv`, in dataset order.
pub fn select_by_interval(
    d: &Dataset,
    scores: &IndexMap<String, f64>,
    kind: EntropyKind,
    iv: &Interval,
) -> Result<SelectionResult, SelectionError> {
    let mut selected = Vec::new();
    for id in d.ids() {
        let score = scores
            .get(id)
            .ok_or_else(|| SelectionError::MissingScore(id.to_string()))?;
        if iv.contains(*score) {
            selected.push(id.to_string());
        }
    }
    SelectionResult::new(d, selected, SelectionSpec::single(kind, iv.clone()))
}

/// Selection constrained by several entropy types at once.
pub fn select_combined(
    d: &Dataset,
    scores: &IndexMap<String, EntropyVector>,
    spec: &SelectionSpec,
) -> Result<SelectionResult, SelectionError> {
    spec.validate()?;
    let mut selected = Vec::new();
    for id in d.ids() {
        let v = scores
            .get(id)
            .ok_or_else(|| SelectionError::MissingScore(id.to_string()))?;
        let score_of = |kind: EntropyKind| {
            v.get(kind).ok_or_else(|| SelectionError::MissingTypeScore {
                id: id.to_string(),
                kind,
            })
        };
        let keep = match &spec.combine {
            CombineMode::Intersection => {
                let mut all = true;
                for (kind, iv) in &spec.intervals {
                    // every type must be scored even once the answer is known
                    all &= iv.contains(score_of(*kind)?);
                }
                all
            }
            CombineMode::FusedScore { weights } => {
                let mut fused = 0.0;
                for (kind, w) in weights {
                    fused += w * score_of(*kind)?;
                }
                spec.intervals[0].1.contains(fused)
            }
        };
        if keep {
            selected.push(id.to_string());
        }
    }
    SelectionResult::new(d, selected, spec.clone())
}

/// The selected samples of `pool`, in pool order.
pub fn materialize(pool: &Dataset, sel: &SelectionResult) -> Result<Dataset, SelectionError> {
    if sel.parent != pool.name || sel.original_count != pool.len() {
        return Err(SelectionError::WrongParent {
            expected: sel.parent.clone(),
            got: pool.name.clone(),
        });
    }
    let name = format!("{}[{}]", pool.name, sel.spec.interval_labels().join("+"));
    Ok(pool.subset(name, &sel.selected_ids))
}

fn check_synthetic(d: &Dataset) -> Result<(), SelectionError> {
    match d.samples().iter().find(|s| s.source != Source::Synthetic) {
        Some(s) => Err(SelectionError::NotSynthetic(s.id.clone())),
        None => Ok(()),
    }
}

fn check_labels(syn: &Dataset, ori: &Dataset) -> Result<(), SelectionError> {
    let foreign: Vec<String> = syn
        .samples()
        .iter()
        .map(|s| &s.label)
        .filter(|l| !ori.label_set().contains(*l))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if foreign.is_empty() {
        Ok(())
    } else {
        Err(SelectionError::LabelMismatch(foreign))
    }
}

/// SumData: the full original dataset followed by the selected synthetic
/// samples.
pub fn build_sumdata(
    selected_syn: &SelectionResult,
    syn_pool: &Dataset,
    full_ori: &Dataset,
) -> Result<Dataset, SelectionError> {
    let syn = materialize(syn_pool, selected_syn)?;
    check_synthetic(&syn)?;
    check_labels(&syn, full_ori)?;
    let mut merged = merge_datasets(full_ori, &syn)?;
    merged.name = format!("sumdata({}+{})", full_ori.name, syn_pool.name);
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    /// Both selections must use the same entropy types and intervals.
    #[default]
    SameInterval,
    Independent,
}

/// JoSelData: the selected original samples followed by the selected
/// synthetic samples.
pub fn build_joseldata(
    selected_syn: &SelectionResult,
    syn_pool: &Dataset,
    selected_ori: &SelectionResult,
    ori_pool: &Dataset,
    mode: JoinMode,
) -> Result<Dataset, SelectionError> {
    if mode == JoinMode::SameInterval && selected_syn.spec != selected_ori.spec {
        let render = |s: &SelectionSpec| {
            s.intervals
                .iter()
                .map(|(k, iv)| format!("{k} {iv}"))
                .collect::<Vec<_>>()
                .join(" & ")
        };
        return Err(SelectionError::IntervalMismatch {
            ori: render(&selected_ori.spec),
            syn: render(&selected_syn.spec),
        });
    }
    let ori = materialize(ori_pool, selected_ori)?;
    let syn = materialize(syn_pool, selected_syn)?;
    check_synthetic(&syn)?;
    check_labels(&syn, ori_pool)?;
    let mut merged = merge_datasets(&ori, &syn)?;
    merged.name = format!("joseldata({}+{})", ori_pool.name, syn_pool.name);
    if merged.is_empty() {
        log::warn!("JoSelData is empty: both selections selected nothing");
    }
    Ok(merged.with_labels(ori_pool.label_set().iter().cloned()))
}

/// Metadata written next to every emitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub dataset: String,
    pub parent: String,
    pub strategy: String,
    pub entropy_types: Vec<EntropyKind>,
    pub interval_labels: Vec<String>,
    pub combine_mode: String,
    pub original_count: usize,
    pub selected_count: usize,
    pub reduction_pct: f64,
    /// True when the interval was chosen on a subset and applied to the pool.
    pub subset_derived: bool,
    pub tool_version: String,
    pub seed: u64,
}

impl SelectionManifest {
    pub fn for_selection(
        sel: &SelectionResult,
        dataset: &str,
        subset_derived: bool,
        seed: u64,
    ) -> Self {
        SelectionManifest {
            dataset: dataset.to_string(),
            parent: sel.parent.clone(),
            strategy: "selection".to_string(),
            entropy_types: sel.spec.entropy_types(),
            interval_labels: sel.spec.interval_labels(),
            combine_mode: sel.spec.combine.name().to_string(),
            original_count: sel.original_count,
            selected_count: sel.selected_count,
            reduction_pct: sel.reduction_pct,
            subset_derived,
            tool_version: crate::VERSION.to_string(),
            seed,
        }
    }

    /// Manifest for a mixed dataset; counts are relative to both pools.
    pub fn for_mix(
        strategy: &str,
        mixed: &Dataset,
        ori_pool: &Dataset,
        syn_pool: &Dataset,
        selections: &[&SelectionResult],
        subset_derived: bool,
        seed: u64,
    ) -> Result<Self, SelectionError> {
        let original_count = ori_pool.len() + syn_pool.len();
        let first = selections.first();
        Ok(SelectionManifest {
            dataset: mixed.name.clone(),
            parent: format!("{}+{}", ori_pool.name, syn_pool.name),
            strategy: strategy.to_string(),
            entropy_types: first.map(|s| s.spec.entropy_types()).unwrap_or_default(),
            interval_labels: selections
                .iter()
                .flat_map(|s| s.spec.interval_labels())
                .collect(),
            combine_mode: first
                .map(|s| s.spec.combine.name())
                .unwrap_or("intersection")
                .to_string(),
            original_count,
            selected_count: mixed.len(),
            reduction_pct: reduction_stats(original_count, mixed.len())?,
            subset_derived,
            tool_version: crate::VERSION.to_string(),
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sample, Task};
    use crate::scoring::{interval_catalog, resolve_interval};

    fn pool(name: &str, n: usize, source: Source) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                Sample::new(
                    format!("{name}{i}"),
                    format!("text {i}"),
                    ["a", "b"][i % 2],
                    source,
                )
            })
            .collect();
        Dataset::new(name, Task::Other, samples).unwrap()
    }

    fn scores_of(d: &Dataset, f: impl Fn(usize) -> f64) -> IndexMap<String, f64> {
        d.ids()
            .enumerate()
            .map(|(i, id)| (id.to_string(), f(i)))
            .collect()
    }

    fn iv(s: &str) -> Interval {
        resolve_interval(s).unwrap()
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduction_stats(2000, 1038).unwrap(), 48.10);
        assert_eq!(reduction_stats(2000, 2000).unwrap(), 0.0);
        assert_eq!(reduction_stats(2000, 319).unwrap(), 84.05);
        assert_eq!(reduction_stats(3, 1).unwrap(), 66.67);
        assert_eq!(reduction_stats(8, 7).unwrap(), 12.5);
        // 1/16000 removed = 0.00625% -> rounds half up to 0.01
        assert_eq!(reduction_stats(16000, 15999).unwrap(), 0.01);
        assert!(matches!(
            reduction_stats(0, 0),
            Err(SelectionError::ZeroOriginal)
        ));
        assert!(reduction_stats(5, 6).is_err());
    }

    #[test]
    fn select_full_and_empty() {
        let d = pool("p", 50, Source::Original);
        let s = scores_of(&d, |i| i as f64 / 5.0);
        let all = select_by_interval(&d, &s, EntropyKind::Information, &Interval::full()).unwrap();
        assert_eq!(all.selected_count, 50);
        assert_eq!(all.reduction_pct, 0.0);

        let high = scores_of(&d, |_| 9.0);
        let none = select_by_interval(&d, &high, EntropyKind::Information, &iv("0-3")).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.reduction_pct, 100.0);
    }

    #[test]
    fn selection_keeps_order_and_names_missing() {
        let d = pool("p", 10, Source::Original);
        let s = scores_of(&d, |i| [9.0, 1.0][i % 2]);
        let r = select_by_interval(&d, &s, EntropyKind::Information, &iv("8-10")).unwrap();
        assert_eq!(r.selected_ids, ["p0", "p2", "p4", "p6", "p8"]);

        let mut partial = s.clone();
        partial.shift_remove("p3");
        match select_by_interval(&d, &partial, EntropyKind::Information, &iv("8-10")) {
            Err(SelectionError::MissingScore(id)) => assert_eq!(id, "p3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn vectors(d: &Dataset, f: impl Fn(usize) -> EntropyVector) -> IndexMap<String, EntropyVector> {
        d.ids()
            .enumerate()
            .map(|(i, id)| (id.to_string(), f(i)))
            .collect()
    }

    #[test]
    fn intersection_is_a_conjunction() {
        let d = pool("p", 1, Source::Original);
        let v = vectors(&d, |_| EntropyVector {
            ie: Some(4.0),
            ge: Some(9.0),
            se: None,
        });
        let spec = SelectionSpec::intersection(vec![
            (EntropyKind::Information, iv("3-5")),
            (EntropyKind::Generative, iv("0-5")),
        ]);
        assert!(select_combined(&d, &v, &spec).unwrap().is_empty());

        let all = SelectionSpec::intersection(
            EntropyKind::ALL
                .iter()
                .map(|&k| (k, Interval::full()))
                .collect(),
        );
        let full = vectors(&d, |_| EntropyVector {
            ie: Some(1.0),
            ge: Some(2.0),
            se: Some(10.0),
        });
        assert_eq!(select_combined(&d, &full, &all).unwrap().selected_count, 1);
    }

    #[test]
    fn fused_score_mean() {
        let d = pool("p", 1, Source::Original);
        let v = vectors(&d, |_| EntropyVector {
            ie: Some(4.0),
            ge: Some(8.0),
            se: None,
        });
        let weights = [
            (EntropyKind::Information, 0.5),
            (EntropyKind::Generative, 0.5),
        ]
        .into_iter()
        .collect();
        let spec = SelectionSpec::fused(weights, iv("5-8"));
        assert_eq!(select_combined(&d, &v, &spec).unwrap().selected_count, 1);
    }

    #[test]
    fn combined_missing_type_errors() {
        let d = pool("p", 1, Source::Original);
        let v = vectors(&d, |_| EntropyVector {
            ie: Some(4.0),
            ..Default::default()
        });
        let spec = SelectionSpec::intersection(vec![
            (EntropyKind::Information, iv("0-3")),
            (EntropyKind::Semantic, iv("0-3")),
        ]);
        assert!(matches!(
            select_combined(&d, &v, &spec),
            Err(SelectionError::MissingTypeScore {
                kind: EntropyKind::Semantic,
                ..
            })
        ));
    }

    #[test]
    fn sumdata_sizes() {
        let ori = pool("ori", 2000, Source::Original);
        let syn = pool("syn", 2000, Source::Synthetic);
        let take = |n: usize| {
            let s = scores_of(&syn, |i| if i < n { 9.0 } else { 1.0 });
            select_by_interval(&syn, &s, EntropyKind::Information, &iv("8-10")).unwrap()
        };
        assert_eq!(build_sumdata(&take(669), &syn, &ori).unwrap().len(), 2669);
        assert_eq!(build_sumdata(&take(2000), &syn, &ori).unwrap().len(), 4000);
        let empty = build_sumdata(&take(0), &syn, &ori).unwrap();
        assert_eq!(empty.samples(), ori.samples());
    }

    #[test]
    fn sumdata_rejects_original_source_and_foreign_labels() {
        let ori = pool("ori", 10, Source::Original);
        let other = pool("other", 10, Source::Original);
        let s = scores_of(&other, |_| 5.0);
        let sel =
            select_by_interval(&other, &s, EntropyKind::Information, &Interval::full()).unwrap();
        assert!(matches!(
            build_sumdata(&sel, &other, &ori),
            Err(SelectionError::NotSynthetic(_))
        ));

        let syn = Dataset::new(
            "syn",
            Task::Other,
            vec![Sample::new("x", "t", "zzz", Source::Synthetic)],
        )
        .unwrap();
        let s = scores_of(&syn, |_| 5.0);
        let sel =
            select_by_interval(&syn, &s, EntropyKind::Information, &Interval::full()).unwrap();
        assert!(matches!(
            build_sumdata(&sel, &syn, &ori),
            Err(SelectionError::LabelMismatch(_))
        ));
    }

    #[test]
    fn joseldata_modes() {
        let ori = pool("ori", 2000, Source::Original);
        let syn = pool("syn", 2000, Source::Synthetic);
        let pick = |d: &Dataset, n: usize, label: &str| {
            let s = scores_of(d, |i| if i < n { 5.0 } else { 1.0 });
            select_by_interval(d, &s, EntropyKind::Information, &iv(label)).unwrap()
        };
        let j = build_joseldata(
            &pick(&syn, 682, "3-10"),
            &syn,
            &pick(&ori, 1038, "3-10"),
            &ori,
            JoinMode::SameInterval,
        )
        .unwrap();
        assert_eq!(j.len(), 1720);

        let err = build_joseldata(
            &pick(&syn, 10, "3-8"),
            &syn,
            &pick(&ori, 10, "3-10"),
            &ori,
            JoinMode::SameInterval,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3-8") && msg.contains("3-10"), "{msg}");

        let j = build_joseldata(
            &pick(&syn, 10, "3-8"),
            &syn,
            &pick(&ori, 20, "3-10"),
            &ori,
            JoinMode::Independent,
        )
        .unwrap();
        assert_eq!(j.len(), 30);

        let j = build_joseldata(
            &pick(&syn, 0, "5-8"),
            &syn,
            &pick(&ori, 0, "5-8"),
            &ori,
            JoinMode::SameInterval,
        )
        .unwrap();
        assert!(j.is_empty());
    }

    #[test]
    fn manifest_counts_agree_with_reduction() {
        let d = pool("p", 2000, Source::Original);
        let s = scores_of(&d, |i| if i < 1038 { 4.0 } else { 1.0 });
        let sel = select_by_interval(&d, &s, EntropyKind::Information, &iv("3-10")).unwrap();
        let m = SelectionManifest::for_selection(&sel, "p.sel", true, 7);
        assert_eq!(m.reduction_pct, 48.10);
        assert_eq!(
            m.reduction_pct,
            reduction_stats(m.original_count, m.selected_count).unwrap()
        );
        assert_eq!(m.interval_labels, ["3-10"]);
    }

    #[test]
    fn catalog_nesting_gives_nested_selections() {
        let d = pool("p", 200, Source::Original);
        let s = scores_of(&d, |i| (i as f64 * 0.05) % 10.0);
        let cat = interval_catalog();
        for a in cat.intervals() {
            for b in cat.intervals() {
                if !a.is_within(b) {
                    continue;
                }
                let sa = select_by_interval(&d, &s, EntropyKind::Information, a).unwrap();
                let sb: HashSet<String> = select_by_interval(&d, &s, EntropyKind::Information, b)
                    .unwrap()
                    .selected_ids
                    .into_iter()
                    .collect();
                assert!(sa.selected_ids.iter().all(|id| sb.contains(id)));
            }
        }
    }
}
