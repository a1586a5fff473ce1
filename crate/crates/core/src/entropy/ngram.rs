use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::BuildHasherDefault;

use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenSeq};
use super::EntropyError;

/// Fixed-key hasher so that iteration order, and with it the floating-point
/// summation order, is the same on every run.
pub(crate) type StableHashMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// A discrete distribution over n-gram strings (tokens joined by one space).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbDist {
    pub entries: BTreeMap<String, f64>,
}

impl ProbDist {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, unit: &str) -> Option<f64> {
        self.entries.get(unit).copied()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Relative frequencies of the n-grams of `t`.
///
/// Returns `EntropyError::TooShort` when `t` has fewer than `n` tokens.
pub fn ngram_distribution(t: &TokenSeq, n: usize) -> Result<ProbDist, EntropyError> {
    if n == 0 || n > MAX_ORDER {
        return Err(EntropyError::InvalidOrder(n));
    }
    if t.len() < n {
        return Err(EntropyError::TooShort { len: t.len(), n });
    }
    let windows = t.len() - n + 1;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in t.tokens.windows(n) {
        *counts.entry(w.join(" ")).or_default() += 1;
    }
    Ok(ProbDist {
        entries: counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / windows as f64))
            .collect(),
    })
}

pub(crate) fn clamp_nonneg(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Shannon entropy in bits. Zero-probability terms contribute nothing.
pub fn shannon_entropy(p: &ProbDist) -> f64 {
    clamp_nonneg(
        p.entries
            .values()
            .filter(|&&q| q > 0.0)
            .map(|&q| -q * q.log2())
            .sum(),
    )
}

/// Entropy of the empirical distribution given by `counts`.
pub(crate) fn entropy_of_counts<I: IntoIterator<Item = usize>>(counts: I, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    clamp_nonneg(
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum(),
    )
}

pub const MAX_ORDER: usize = 3;

/// Weights of the unigram, bigram and trigram entropies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IEConfig {
    pub weights: [f64; MAX_ORDER],
}

impl Default for IEConfig {
    fn default() -> Self {
        IEConfig {
            weights: [1.0 / 3.0; MAX_ORDER],
        }
    }
}

impl IEConfig {
    pub fn new(weights: [f64; MAX_ORDER]) -> Result<Self, EntropyError> {
        let cfg = IEConfig { weights };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        let ok = self.weights.iter().all(|w| w.is_finite() && *w >= 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(EntropyError::InvalidWeights(self.weights.to_vec()))
        }
    }
}

/// Weighted sum of the 1-, 2- and 3-gram entropies of a text.
///
/// Levels for which the text is too short contribute 0.
pub fn information_entropy(text: &str, cfg: &IEConfig) -> f64 {
    information_entropy_tokens(&tokenize(text), cfg)
}

pub fn information_entropy_tokens(t: &TokenSeq, cfg: &IEConfig) -> f64 {
    let mut total = 0.0;
    for (i, &w) in cfg.weights.iter().enumerate() {
        let n = i + 1;
        if w == 0.0 || t.len() < n {
            continue;
        }
        let mut counts: StableHashMap<&[String], usize> = StableHashMap::default();
        for gram in t.tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
        total += w * entropy_of_counts(counts.into_values(), t.len() - n + 1);
    }
    clamp_nonneg(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &[&str]) -> TokenSeq {
        s.iter().copied().collect()
    }

    #[test]
    fn distribution_examples() {
        let d = ngram_distribution(&seq(&["a", "a", "a", "a"]), 1).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.get("a"), Some(1.0));

        let d = ngram_distribution(&seq(&["a", "b"]), 1).unwrap();
        assert_eq!(d.get("a"), Some(0.5));
        assert_eq!(d.get("b"), Some(0.5));

        // bigrams of [a,b,a]: "a b", "b a"
        let d = ngram_distribution(&seq(&["a", "b", "a"]), 2).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.get("a b"), Some(0.5));
        assert_eq!(d.get("b a"), Some(0.5));
    }

    #[test]
    fn distribution_too_short() {
        assert!(matches!(
            ngram_distribution(&seq(&["a"]), 2),
            Err(EntropyError::TooShort { len: 1, n: 2 })
        ));
    }

    #[test]
    fn shannon_examples() {
        let p = |v: &[(&str, f64)]| ProbDist {
            entries: v.iter().map(|(k, p)| (k.to_string(), *p)).collect(),
        };
        assert_eq!(shannon_entropy(&p(&[("a", 1.0)])), 0.0);
        assert_eq!(shannon_entropy(&p(&[("a", 0.5), ("b", 0.5)])), 1.0);
        assert_eq!(
            shannon_entropy(&p(&[("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)])),
            2.0
        );
    }

    #[test]
    fn information_entropy_examples() {
        let uniform = IEConfig::default();
        assert_eq!(information_entropy("a a a a", &uniform), 0.0);
        assert!(information_entropy("a a a a", &uniform).is_sign_positive());

        let unigram = IEConfig::new([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(information_entropy("a b", &unigram), 1.0);

        // "a b a b": unigrams {a:2,b:2} -> 1 bit; bigrams {ab:2, ba:1} of 3;
        // trigrams {aba:1, bab:1} -> 1 bit.
        let h2 = -(2.0 / 3.0 * (2.0f64 / 3.0).log2() + 1.0 / 3.0 * (1.0f64 / 3.0).log2());
        let expected = (1.0 + h2 + 1.0) / 3.0;
        assert!((information_entropy("a b a b", &uniform) - expected).abs() < 1e-12);
    }

    #[test]
    fn short_texts_score_lower_levels_only() {
        let cfg = IEConfig::default();
        assert_eq!(information_entropy("solo", &cfg), 0.0);
        // two tokens: unigram 1 bit, one bigram 0 bits, trigram absent
        assert!((information_entropy("x y", &cfg) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weights_are_validated() {
        assert!(IEConfig::new([0.5, 0.5, 0.5]).is_err());
        assert!(IEConfig::new([-0.5, 1.0, 0.5]).is_err());
        assert!(IEConfig::new([0.2, 0.3, 0.5]).is_ok());
    }
}
