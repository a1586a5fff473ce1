//! Built-in proxy evaluator: a bag-of-words linear classifier.
//!
//! Weights start from multinomial naive Bayes with add-one smoothing (log
//! priors as biases, smoothed log likelihoods as feature weights) and are
//! then refined by a fixed number of averaged-perceptron epochs over the
//! training set in a seeded order. Out-of-vocabulary tokens are ignored at
//! prediction time.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvalResult, SearchError};
use crate::corpus::Dataset;
use crate::entropy::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig { epochs: 5, seed: 0 }
    }
}

type Features = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct ProxyClassifier {
    labels: Vec<String>,
    vocab: HashMap<String, usize>,
    /// `weights[c * (vocab + 1) + f]`; the last slot of each row is the bias.
    weights: Vec<f64>,
}

impl ProxyClassifier {
    fn row(&self) -> usize {
        self.vocab.len() + 1
    }

    fn features(vocab: &HashMap<String, usize>, text: &str) -> Features {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for t in tokenize(text).tokens {
            if let Some(&f) = vocab.get(&t) {
                *counts.entry(f).or_default() += 1.0;
            }
        }
        let mut v: Features = counts.into_iter().collect();
        v.sort_unstable_by_key(|&(f, _)| f);
        v
    }

    fn scores_with(weights: &[f64], row: usize, classes: usize, x: &Features) -> Vec<f64> {
        (0..classes)
            .map(|c| {
                let w = &weights[c * row..(c + 1) * row];
                w[row - 1] + x.iter().map(|&(f, v)| w[f] * v).sum::<f64>()
            })
            .collect()
    }

    fn argmax(scores: &[f64]) -> usize {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn train(train: &Dataset, cfg: &ProxyConfig) -> Result<Self, SearchError> {
        if train.is_empty() {
            return Err(SearchError::EmptyTrainingSet);
        }
        let labels: Vec<String> = train
            .samples()
            .iter()
            .map(|s| s.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let label_idx: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let vocab: HashMap<String, usize> = train
            .samples()
            .iter()
            .flat_map(|s| tokenize(&s.text).tokens)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        let row = vocab.len() + 1;
        let classes = labels.len();

        let examples: Vec<(Features, usize)> = train
            .samples()
            .iter()
            .map(|s| (Self::features(&vocab, &s.text), label_idx[s.label.as_str()]))
            .collect();

        // naive Bayes initialization
        let mut counts = vec![0.0; classes * row];
        let mut docs = vec![0usize; classes];
        for (x, y) in &examples {
            docs[*y] += 1;
            for &(f, v) in x {
                counts[y * row + f] += v;
            }
        }
        let mut weights = vec![0.0; classes * row];
        for c in 0..classes {
            let total: f64 = counts[c * row..c * row + vocab.len()].iter().sum();
            let denom = (total + vocab.len() as f64).ln();
            for f in 0..vocab.len() {
                weights[c * row + f] = (counts[c * row + f] + 1.0).ln() - denom;
            }
            weights[c * row + row - 1] = (docs[c] as f64 / examples.len() as f64).ln();
        }

        // averaged perceptron refinement
        if classes > 1 && cfg.epochs > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut acc = vec![0.0; classes * row];
            let mut step = 1.0f64;
            for _ in 0..cfg.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    let (x, y) = &examples[i];
                    let pred = Self::argmax(&Self::scores_with(&weights, row, classes, x));
                    if pred != *y {
                        for (c, sign) in [(*y, 1.0), (pred, -1.0)] {
                            for &(f, v) in x {
                                weights[c * row + f] += sign * v;
                                acc[c * row + f] += sign * v * step;
                            }
                            weights[c * row + row - 1] += sign;
                            acc[c * row + row - 1] += sign * step;
                        }
                    }
                    step += 1.0;
                }
            }
            for (w, a) in weights.iter_mut().zip(&acc) {
                *w -= a / step;
            }
        }

        Ok(ProxyClassifier {
            labels,
            vocab,
            weights,
        })
    }

    pub fn predict(&self, text: &str) -> &str {
        let x = Self::features(&self.vocab, text);
        let s = Self::scores_with(&self.weights, self.row(), self.labels.len(), &x);
        &self.labels[Self::argmax(&s)]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Accuracy and macro-F1 over the labels that occur in either `gold` or
/// `predicted`. A label with no true positives scores F1 = 0.
pub fn classification_metrics(gold: &[&str], predicted: &[&str]) -> (f64, f64) {
    assert_eq!(gold.len(), predicted.len());
    if gold.is_empty() {
        return (0.0, 0.0);
    }
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    let labels: BTreeSet<&str> = gold.iter().chain(predicted).copied().collect();
    let mut f1_sum = 0.0;
    for l in &labels {
        let tp = gold
            .iter()
            .zip(predicted)
            .filter(|(g, p)| *g == l && *p == l)
            .count() as f64;
        let fp = predicted.iter().filter(|p| *p == l).count() as f64 - tp;
        let fneg = gold.iter().filter(|g| *g == l).count() as f64 - tp;
        if tp > 0.0 {
            let precision = tp / (tp + fp);
            let recall = tp / (tp + fneg);
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    (
        correct as f64 / gold.len() as f64,
        f1_sum / labels.len() as f64,
    )
}

/// Trains the proxy on `train` and scores it on `val`.
pub fn proxy_train_eval(
    train: &Dataset,
    val: &Dataset,
    cfg: &ProxyConfig,
) -> Result<EvalResult, SearchError> {
    if val.is_empty() {
        return Err(SearchError::EmptyValidationSet);
    }
    let model = ProxyClassifier::train(train, cfg)?;
    let known: BTreeSet<&str> = model.labels().iter().map(String::as_str).collect();
    let unseen: BTreeSet<&str> = val
        .samples()
        .iter()
        .map(|s| s.label.as_str())
        .filter(|l| !known.contains(l))
        .collect();
    if !unseen.is_empty() {
        log::warn!(
            "validation labels missing from training data: {}",
            unseen.into_iter().collect::<Vec<_>>().join(", ")
        );
    }
    let gold: Vec<&str> = val.samples().iter().map(|s| s.label.as_str()).collect();
    let predicted: Vec<&str> = val
        .samples()
        .iter()
        .map(|s| model.predict(&s.text))
        .collect();
    let (accuracy, macro_f1) = classification_metrics(&gold, &predicted);
    EvalResult::new(accuracy, macro_f1, train.len(), val.len())
}
