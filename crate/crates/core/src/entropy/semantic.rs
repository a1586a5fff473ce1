use serde::{Deserialize, Serialize};

use super::ngram::entropy_of_counts;
use super::tokenize::normalize_generation;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Pairwise semantic-equivalence predicate over generations.
pub trait Equivalence: Sync {
    fn equivalent(&self, a: &str, b: &str) -> bool;
}

/// Equality after lowercasing, dropping punctuation and collapsing
/// whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedEquality;

impl Equivalence for NormalizedEquality {
    fn equivalent(&self, a: &str, b: &str) -> bool {
        normalize_generation(a) == normalize_generation(b)
    }
}

impl<F: Fn(&str, &str) -> bool + Sync> Equivalence for F {
    fn equivalent(&self, a: &str, b: &str) -> bool {
        self(a, b)
    }
}

/// Semantic classes of a sample's generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// (class id, member count), in order of first appearance.
    pub clusters: Vec<(i64, usize)>,
    pub total: usize,
}

impl ClusterSet {
    /// Builds a cluster set from member counts, numbering classes 0...
    pub fn from_counts(counts: &[usize]) -> Self {
        ClusterSet {
            clusters: counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as i64, c))
                .collect(),
            total: counts.iter().sum(),
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Member counts, largest first.
    pub fn sorted_counts(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.clusters.iter().map(|&(_, n)| n).collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        c
    }
}

/// Groups generations into classes using the transitive closure of `eq`.
pub fn cluster_generations(generations: &[String], eq: &dyn Equivalence) -> ClusterSet {
    let n = generations.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if uf.find(i) != uf.find(j) && eq.equivalent(&generations[i], &generations[j]) {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    group_in_first_seen_order(&roots)
}

/// Classes taken verbatim from precomputed labels.
pub fn clusters_from_labels(labels: &[i64]) -> ClusterSet {
    group_in_first_seen_order(labels)
}

fn group_in_first_seen_order<T: PartialEq + Copy>(keys: &[T]) -> ClusterSet {
    let mut seen: Vec<(T, usize)> = Vec::new();
    for &k in keys {
        match seen.iter_mut().find(|(s, _)| *s == k) {
            Some((_, c)) => *c += 1,
            None => seen.push((k, 1)),
        }
    }
    ClusterSet::from_counts(&seen.iter().map(|&(_, c)| c).collect::<Vec<_>>())
}

/// Entropy in bits of the empirical class distribution.
pub fn semantic_entropy(c: &ClusterSet) -> f64 {
    // sorted so the result does not depend on generation order
    entropy_of_counts(c.sorted_counts(), c.total)
}
