//! Mapping raw entropies onto the 0 to 10 scale and the interval taxonomy
//! used to select samples.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyKind;

pub const SCALE_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no scores to normalize")]
    Empty,
    #[error("score for `{0}` is not finite")]
    NonFinite(String),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("need at least 2 quantile intervals, got {0}")]
    TooFewQuantiles(usize),
    #[error("cannot cut {n} scores into {k} quantile intervals")]
    TooManyQuantiles { k: usize, n: usize },
    #[error("score table: {0}")]
    Table(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    MinMax,
    Percentile,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" => Ok(Normalization::MinMax),
            "percentile" => Ok(Normalization::Percentile),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

/// Maps raw values onto `[0, 10]`.
///
/// Min-max is linear between the extremes; percentile uses the midpoint
/// empirical CDF, `10 * (#less + #equal / 2) / n`. If every value is equal
/// both methods return 5.0 everywhere.
pub fn normalize_scores(
    raws: &IndexMap<String, f64>,
    method: Normalization,
) -> Result<IndexMap<String, f64>, ScoringError> {
    if raws.is_empty() {
        return Err(ScoringError::Empty);
    }
    if let Some((id, _)) = raws.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ScoringError::NonFinite(id.clone()));
    }
    let (min, max) = raws
        .values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Ok(raws.keys().map(|k| (k.clone(), SCALE_MAX / 2.0)).collect());
    }
    let out = match method {
        Normalization::MinMax => {
            let span = max - min;
            raws.iter()
                .map(|(k, &v)| {
                    let s = (SCALE_MAX * ((v - min) / span)).clamp(0.0, SCALE_MAX);
                    (k.clone(), s)
                })
                .collect()
        }
        Normalization::Percentile => {
            let mut sorted: Vec<f64> = raws.values().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len() as f64;
            raws.iter()
                .map(|(k, &v)| {
                    let less = sorted.partition_point(|&x| x < v);
                    let upto = sorted.partition_point(|&x| x <= v);
                    let mid = less as f64 + (upto - less) as f64 / 2.0;
                    (k.clone(), SCALE_MAX * mid / n)
                })
                .collect()
        }
    };
    Ok(out)
}

/// A score range; lower bound inclusive, upper exclusive, except that an
/// upper bound of 10 includes 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub label: String,
}

fn format_bound(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ScoringError> {
        if !(lower.is_finite()
            && upper.is_finite()
            && 0.0 <= lower
            && lower < upper
            && upper <= SCALE_MAX)
        {
            return Err(ScoringError::InvalidInterval(format!(
                "need 0 <= lower < upper <= 10, got [{lower}, {upper}]"
            )));
        }
        Ok(Interval {
            lower,
            upper,
            label: format!("{}-{}", format_bound(lower), format_bound(upper)),
        })
    }

    /// The whole scale.
    pub fn full() -> Self {
        Interval::new(0.0, SCALE_MAX).expect("valid bounds")
    }

    pub fn contains(&self, score: f64) -> bool {
        interval_contains(self, score)
    }

    /// True if every score this interval admits is also admitted by `other`.
    pub fn is_within(&self, other: &Interval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for Interval {
    type Err = ScoringError;

    /// Accepts `lo-hi`, `lo–hi` or `lo:hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ScoringError::InvalidInterval(format!("cannot parse `{s}`"));
        let (lo, hi) = s
            .split_once(':')
            .or_else(|| s.split_once('–'))
            .or_else(|| s.split_once('-'))
            .ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        Interval::new(lo, hi)
    }
}

pub fn interval_contains(iv: &Interval, score: f64) -> bool {
    (iv.lower <= score && score < iv.upper) || (iv.upper == SCALE_MAX && score == SCALE_MAX)
}

/// The fixed nine-interval taxonomy: three low, three medium and three high
/// entropy ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalCatalog {
    intervals: Vec<Interval>,
}

impl IntervalCatalog {
    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn get(&self, label: &str) -> Option<&Interval> {
        self.intervals.iter().find(|iv| iv.label == label)
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

const CATALOG_BOUNDS: [(f64, f64); 9] = [
    // low
    (0.0, 3.0),
    (3.0, 5.0),
    (0.0, 5.0),
    // medium
    (0.0, 8.0),
    (3.0, 10.0),
    (3.0, 8.0),
    // high
    (5.0, 8.0),
    (8.0, 10.0),
    (5.0, 10.0),
];

pub fn interval_catalog() -> IntervalCatalog {
    IntervalCatalog {
        intervals: CATALOG_BOUNDS
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi).expect("catalog bounds are valid"))
            .collect(),
    }
}

/// Looks a label up in the catalog, otherwise parses it as a range.
pub fn resolve_interval(spec: &str) -> Result<Interval, ScoringError> {
    let spec = spec.trim().replace('–', "-");
    match interval_catalog().get(&spec) {
        Some(iv) => Ok(iv.clone()),
        None => spec.parse(),
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cuts the scale at the `i / k` empirical quantiles of `scores`.
///
/// The first interval starts at 0 and the last ends at 10. Coinciding cut
/// points (a concentrated distribution) are merged, so fewer than `k`
/// intervals may come back.
pub fn quantile_intervals(scores: &[f64], k: usize) -> Result<Vec<Interval>, ScoringError> {
    if k < 2 {
        return Err(ScoringError::TooFewQuantiles(k));
    }
    if k > scores.len() {
        return Err(ScoringError::TooManyQuantiles { k, n: scores.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(ScoringError::NonFinite(bad.to_string()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts = vec![0.0];
    for i in 1..k {
        let q = quantile(&sorted, i as f64 / k as f64).clamp(0.0, SCALE_MAX);
        if q > *cuts.last().expect("nonempty") && q < SCALE_MAX {
            cuts.push(q);
        }
    }
    cuts.push(SCALE_MAX);
    cuts.windows(2).map(|w| Interval::new(w[0], w[1])).collect()
}

/// One row of the exported score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub entropy_type: EntropyKind,
    pub raw_bits: f64,
    pub normalized: f64,
}

pub fn write_score_table<W: Write>(out: W, rows: &[ScoreRecord]) -> Result<(), ScoringError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_score_table<R: Read>(input: R) -> Result<Vec<ScoreRecord>, ScoringError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ScoreRecord>, _>>()?;
    for row in &rows {
        if !row.raw_bits.is_finite() || !(0.0..=SCALE_MAX).contains(&row.normalized) {
            return Err(ScoringError::NonFinite(row.sample_id.clone()));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raws(v: &[(&str, f64)]) -> IndexMap<String, f64> {
        v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
    }

    #[test]
    fn minmax_endpoints() {
        let out = normalize_scores(
            &raws(&[("a", 2.0), ("b", 4.0), ("c", 6.0)]),
            Normalization::MinMax,
        )
        .unwrap();
        assert_eq!(out["a"], 0.0);
        assert_eq!(out["b"], 5.0);
        assert_eq!(out["c"], 10.0);
    }

    #[test]
    fn degenerate_input_is_mid_scale() {
        for m in [Normalization::MinMax, Normalization::Percentile] {
            let out = normalize_scores(&raws(&[("a", 3.7), ("b", 3.7), ("c", 3.7)]), m).unwrap();
            assert!(out.values().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn percentile_midpoint_ranks() {
        let out = normalize_scores(
            &raws(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]),
            Normalization::Percentile,
        )
        .unwrap();
        // 10 * (rank - 0.5) / 4
        assert_eq!(out["a"], 1.25);
        assert_eq!(out["b"], 3.75);
        assert_eq!(out["c"], 6.25);
        assert_eq!(out["d"], 8.75);
    }

    #[test]
    fn percentile_ties_share_the_midpoint() {
        let out = normalize_scores(
            &raws(&[("a", 1.0), ("b", 1.0), ("c", 2.0), ("d", 3.0)]),
            Normalization::Percentile,
        )
        .unwrap();
        assert_eq!(out["a"], 2.5);
        assert_eq!(out["b"], 2.5);
    }

    #[test]
    fn non_finite_is_named() {
        match normalize_scores(
            &raws(&[("a", 1.0), ("bad", f64::NAN)]),
            Normalization::MinMax,
        ) {
            Err(ScoringError::NonFinite(id)) => assert_eq!(id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            normalize_scores(&IndexMap::new(), Normalization::MinMax),
            Err(ScoringError::Empty)
        ));
    }

    #[test]
    fn catalog_matches_taxonomy() {
        let c = interval_catalog();
        assert_eq!(c.len(), 9);
        let labels: Vec<&str> = c.intervals().iter().map(|i| i.label.as_str()).collect();
        assert_eq!(
            labels,
            ["0-3", "3-5", "0-5", "0-8", "3-10", "3-8", "5-8", "8-10", "5-10"]
        );
        let top = c.get("8-10").unwrap();
        assert_eq!((top.lower, top.upper), (8.0, 10.0));
        assert_eq!(c, interval_catalog());
    }

    #[test]
    fn boundary_policy() {
        let c = interval_catalog();
        let mid = c.get("3-5").unwrap();
        assert!(mid.contains(3.0));
        assert!(!mid.contains(5.0));
        assert!(c.get("8-10").unwrap().contains(10.0));
        assert!(!c.get("0-8").unwrap().contains(8.0));
    }

    #[test]
    fn parsing_and_resolution() {
        assert_eq!(
            "3-10".parse::<Interval>().unwrap(),
            Interval::new(3.0, 10.0).unwrap()
        );
        assert_eq!("2.5:7".parse::<Interval>().unwrap().label, "2.50-7");
        assert_eq!(resolve_interval("3–8").unwrap().label, "3-8");
        assert!("7-3".parse::<Interval>().is_err());
        assert!("0-11".parse::<Interval>().is_err());
        assert!("abc".parse::<Interval>().is_err());
    }

    #[test]
    fn quantiles_of_uniform_grid() {
        let scores: Vec<f64> = (0..=1000).map(|i| i as f64 / 100.0).collect();
        let ivs = quantile_intervals(&scores, 2).unwrap();
        assert_eq!(ivs.len(), 2);
        assert_eq!(ivs[0].lower, 0.0);
        assert!((ivs[0].upper - 5.0).abs() < 1e-9);
        assert_eq!(ivs[1].upper, 10.0);
    }

    #[test]
    fn quartiles_of_one_to_eight() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        // sorted index h = 7p: 1.75 -> 2.75, 3.5 -> 4.5, 5.25 -> 6.25
        let ivs = quantile_intervals(&scores, 4).unwrap();
        let cuts: Vec<(f64, f64)> = ivs.iter().map(|i| (i.lower, i.upper)).collect();
        assert_eq!(cuts, [(0.0, 2.75), (2.75, 4.5), (4.5, 6.25), (6.25, 10.0)]);
    }

    #[test]
    fn quantile_errors_and_collapse() {
        assert!(matches!(
            quantile_intervals(&[1.0, 2.0], 1),
            Err(ScoringError::TooFewQuantiles(1))
        ));
        assert!(matches!(
            quantile_intervals(&[1.0, 2.0], 3),
            Err(ScoringError::TooManyQuantiles { k: 3, n: 2 })
        ));
        let ivs = quantile_intervals(&[5.0; 20], 4).unwrap();
        assert_eq!(ivs.len(), 2);
        assert_eq!(ivs[0].upper, 5.0);
    }

    #[test]
    fn score_table_round_trip() {
        let rows = vec![
            ScoreRecord {
                sample_id: "a,b".into(),
                entropy_type: EntropyKind::Information,
                raw_bits: 1.5849625007211563,
                normalized: 10.0,
            },
            ScoreRecord {
                sample_id: "c".into(),
                entropy_type: EntropyKind::Semantic,
                raw_bits: 0.0,
                normalized: 0.0,
            },
        ];
        let mut buf = Vec::new();
        write_score_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,entropy_type,raw_bits,normalized\n"));
        assert_eq!(read_score_table(buf.as_slice()).unwrap(), rows);
    }
}
