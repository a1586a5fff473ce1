//! Token scorers for generative entropy.
//!
//! A [`TokenScorer`] gives `log2 P(token | context)`. The reference
//! implementation is a smoothed n-gram model trained on the candidate pool;
//! trained models can be written to and read back from a flat text table:
//!
//! ```text
//! # euds n-gram scorer v1
//! order=2 smoothing=add_k k=1 discount=0 vocab_size=4
//! <s>\ta\t-1.3219280948873622
//! <s>\tb\t-2.321928094887362
//! ...
//! ```
//!
//! Each body line is `context<TAB>token<TAB>log2 p`, the context being
//! space-joined tokens (`<s>` pads the start of a text, an empty context is
//! the unigram row). Every stored context carries a full row over the
//! vocabulary including `<unk>`. Lookups use the longest stored suffix of the
//! query context and fall back to the uniform distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ngram::{clamp_nonneg, StableHashMap};
use super::tokenize::{tokenize, TokenSeq};
use super::EntropyError;
use crate::corpus::Dataset;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const MAX_SCORER_ORDER: usize = 5;
const TABLE_MAGIC: &str = "# euds n-gram scorer v1";

/// Conditional next-token model. Implementations must be safe for
/// concurrent read-only use once built.
pub trait TokenScorer: Send + Sync {
    /// log2 probability of `token` following `context` (all preceding
    /// tokens of the text). Always `<= 0`.
    fn log2_prob(&self, context: &[String], token: &str) -> f64;

    /// Every token the model can emit, including the unknown symbol.
    fn vocabulary(&self) -> Vec<String>;
}

/// Assigns `1 / size` to every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    size: usize,
}

impl UniformScorer {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "vocabulary size must be positive");
        UniformScorer { size }
    }
}

impl TokenScorer for UniformScorer {
    fn log2_prob(&self, _context: &[String], _token: &str) -> f64 {
        -(self.size as f64).log2()
    }

    fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..self.size).map(|i| format!("w{i}")).collect();
        v.push(UNK.to_string());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    AddK {
        k: f64,
    },
    /// Interpolated Kneser-Ney with absolute discount `discount` in (0, 1).
    KneserNey {
        discount: f64,
    },
}

impl Smoothing {
    pub fn kneser_ney() -> Self {
        Smoothing::KneserNey { discount: 0.75 }
    }

    fn name(&self) -> &'static str {
        match self {
            Smoothing::AddK { .. } => "add_k",
            Smoothing::KneserNey { .. } => "kneser_ney",
        }
    }
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AddK { k: 1.0 }
    }
}

#[derive(Debug, Clone, Default)]
struct ContextStats {
    words: StableHashMap<u32, u32>,
    total: u64,
}

impl ContextStats {
    fn add(&mut self, w: u32, c: u32) {
        *self.words.entry(w).or_default() += c;
        self.total += c as u64;
    }
}

/// Smoothed n-gram language model over normalized tokens.
#[derive(Debug, Clone)]
pub struct NgramScorer {
    order: usize,
    smoothing: Smoothing,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `levels[m - 1]` holds statistics for m-grams keyed by their
    /// (m - 1)-token context. Add-k keeps only the top level.
    levels: Vec<StableHashMap<Vec<u32>, ContextStats>>,
}

impl NgramScorer {
    fn unk_id(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn bos_id(&self) -> u32 {
        self.vocab.len() as u32 + 1
    }

    /// Vocabulary size including `<unk>`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk_id())
    }

    fn token_of(&self, id: u32) -> &str {
        if id == self.unk_id() {
            UNK
        } else if id == self.bos_id() {
            BOS
        } else {
            &self.vocab[id as usize]
        }
    }

    /// The last `order - 1` context ids, left-padded with `<s>`.
    fn context_ids(&self, context: &[String]) -> Vec<u32> {
        let want = self.order - 1;
        let tail = &context[context.len().saturating_sub(want)..];
        let mut ids = vec![self.bos_id(); want - tail.len()];
        ids.extend(tail.iter().map(|t| self.id_of(t)));
        ids
    }

    fn prob_ids(&self, context: &[u32], w: u32) -> f64 {
        let v = self.vocab_size() as f64;
        match self.smoothing {
            Smoothing::AddK { k } => {
                let (c, total) = self.levels[0]
                    .get(context)
                    .map(|s| (s.words.get(&w).copied().unwrap_or(0), s.total))
                    .unwrap_or((0, 0));
                (c as f64 + k) / (total as f64 + k * v)
            }
            Smoothing::KneserNey { discount } => self.kn_prob(context, w, discount, v),
        }
    }

    fn kn_prob(&self, context: &[u32], w: u32, d: f64, v: f64) -> f64 {
        // context.len() == m - 1 selects level m
        let m = context.len() + 1;
        let lower = || {
            if m == 1 {
                1.0 / v
            } else {
                self.kn_prob(&context[1..], w, d, v)
            }
        };
        match self.levels[m - 1].get(context) {
            Some(stats) if stats.total > 0 => {
                let c = stats.words.get(&w).copied().unwrap_or(0) as f64;
                let total = stats.total as f64;
                let backoff_mass = d * stats.words.len() as f64 / total;
                (c - d).max(0.0) / total + backoff_mass * lower()
            }
            _ => lower(),
        }
    }

    /// Writes the model as a flat `context, token, log2 p` table.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (k, discount) = match self.smoothing {
            Smoothing::AddK { k } => (k, 0.0),
            Smoothing::KneserNey { discount } => (0.0, discount),
        };
        writeln!(out, "{TABLE_MAGIC}")?;
        writeln!(
            out,
            "order={} smoothing={} k={} discount={} vocab_size={}",
            self.order,
            self.smoothing.name(),
            k,
            discount,
            self.vocab_size()
        )?;
        let mut contexts: Vec<&Vec<u32>> = self
            .levels
            .iter()
            .flat_map(|lvl| lvl.iter().filter(|(_, s)| s.total > 0).map(|(c, _)| c))
            .collect();
        // shorter contexts first, then by token text
        let render = |ctx: &[u32]| {
            ctx.iter()
                .map(|&id| self.token_of(id))
                .collect::<Vec<_>>()
                .join(" ")
        };
        contexts.sort_by_cached_key(|c| (c.len(), render(c)));
        let mut line = String::new();
        for ctx in contexts {
            let ctx_text = render(ctx);
            for w in 0..self.vocab_size() as u32 {
                line.clear();
                let lp = self.prob_ids(ctx, w).log2();
                let _ = writeln!(line, "{ctx_text}\t{}\t{lp}", self.token_of(w));
                out.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }
}

impl TokenScorer for NgramScorer {
    fn log2_prob(&self, context: &[String], token: &str) -> f64 {
        let ctx = self.context_ids(context);
        self.prob_ids(&ctx, self.id_of(token)).log2()
    }

    fn vocabulary(&self) -> Vec<String> {
        let mut v = self.vocab.clone();
        v.push(UNK.to_string());
        v
    }
}

/// Trains an n-gram scorer on the tokenized texts of `corpus`.
pub fn train_ngram_scorer(
    corpus: &Dataset,
    order: usize,
    smoothing: Smoothing,
) -> Result<NgramScorer, EntropyError> {
    let seqs: Vec<TokenSeq> = corpus.samples().iter().map(|s| tokenize(&s.text)).collect();
    train_on_sequences(&seqs, order, smoothing)
}

pub fn train_on_sequences(
    seqs: &[TokenSeq],
    order: usize,
    smoothing: Smoothing,
) -> Result<NgramScorer, EntropyError> {
    if order == 0 || order > MAX_SCORER_ORDER {
        return Err(EntropyError::InvalidOrder(order));
    }
    match smoothing {
        Smoothing::AddK { k } if !(k > 0.0 && k.is_finite()) => {
            return Err(EntropyError::InvalidSmoothing(format!(
                "k must be > 0, got {k}"
            )))
        }
        Smoothing::KneserNey { discount } if !(discount > 0.0 && discount < 1.0) => {
            return Err(EntropyError::InvalidSmoothing(format!(
                "discount must be in (0, 1), got {discount}"
            )))
        }
        _ => {}
    }
    if seqs.iter().all(|s| s.is_empty()) {
        return Err(EntropyError::EmptyCorpus);
    }

    let vocab: Vec<String> = seqs
        .iter()
        .flat_map(|s| s.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let bos = vocab.len() as u32 + 1;

    // raw counts of the top-order n-grams
    let mut top: StableHashMap<Vec<u32>, u32> = StableHashMap::default();
    for s in seqs {
        let mut padded = vec![bos; order - 1];
        padded.extend(s.tokens.iter().map(|t| index[t]));
        for gram in padded.windows(order) {
            *top.entry(gram.to_vec()).or_default() += 1;
        }
    }
    // sorted so that stats are built in the same order every time
    let mut top: Vec<(Vec<u32>, u32)> = top.into_iter().collect();
    top.sort_unstable();

    let mut levels: Vec<StableHashMap<Vec<u32>, ContextStats>> =
        vec![StableHashMap::default(); order];
    for (gram, c) in &top {
        let (ctx, w) = gram.split_at(order - 1);
        levels[order - 1]
            .entry(ctx.to_vec())
            .or_default()
            .add(w[0], *c);
    }
    match smoothing {
        Smoothing::AddK { .. } => {
            let top_level = levels.pop().expect("order >= 1");
            levels = vec![top_level];
        }
        Smoothing::KneserNey { .. } => {
            // continuation counts: level m counts distinct left extensions of
            // each m-gram among the (m + 1)-gram types
            for m in (1..order).rev() {
                let mut types: BTreeSet<&[u32]> = BTreeSet::new();
                for (gram, _) in &top {
                    types.insert(&gram[order - m - 1..]);
                }
                let mut cont: BTreeMap<&[u32], u32> = BTreeMap::new();
                for t in types {
                    *cont.entry(&t[1..]).or_default() += 1;
                }
                for (gram, c) in cont {
                    let (ctx, w) = gram.split_at(m - 1);
                    levels[m - 1].entry(ctx.to_vec()).or_default().add(w[0], c);
                }
            }
        }
    }

    Ok(NgramScorer {
        order,
        smoothing,
        vocab,
        index,
        levels,
    })
}

/// A scorer read back from the flat table format.
#[derive(Debug, Clone)]
pub struct TableScorer {
    order: usize,
    vocab_size: usize,
    vocab: BTreeSet<String>,
    rows: HashMap<Vec<String>, HashMap<String, f64>>,
}

impl TableScorer {
    pub fn read<R: BufRead>(input: R) -> Result<Self, EntropyError> {
        let bad = |line: usize, msg: &str| EntropyError::ScorerFormat {
            line,
            reason: msg.to_string(),
        };
        let mut lines = input.lines();
        let mut next = |n: usize| -> Result<String, EntropyError> {
            lines
                .next()
                .ok_or_else(|| bad(n, "unexpected end of input"))?
                .map_err(|e| bad(n, &e.to_string()))
        };
        if next(1)? != TABLE_MAGIC {
            return Err(bad(1, "missing header line"));
        }
        let header = next(2)?;
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(2, "expected key=value"))?;
            fields.insert(k, v);
        }
        let parse_usize = |key: &str| -> Result<usize, EntropyError> {
            fields
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(2, &format!("missing or invalid `{key}`")))
        };
        let order = parse_usize("order")?;
        let vocab_size = parse_usize("vocab_size")?;

        let mut rows: HashMap<Vec<String>, HashMap<String, f64>> = HashMap::new();
        let mut vocab = BTreeSet::new();
        let mut line_no = 2;
        for line in lines {
            line_no += 1;
            let line = line.map_err(|e| bad(line_no, &e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(ctx), Some(tok), Some(lp), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(line_no, "expected three tab-separated fields"));
            };
            let lp: f64 = lp.parse().map_err(|_| bad(line_no, "invalid log2 p"))?;
            if lp > 0.0 || lp.is_nan() {
                return Err(bad(line_no, "log2 p must be <= 0"));
            }
            let ctx: Vec<String> = ctx.split_whitespace().map(str::to_string).collect();
            if tok != UNK {
                vocab.insert(tok.to_string());
            }
            rows.entry(ctx).or_default().insert(tok.to_string(), lp);
        }
        if vocab.len() + 1 != vocab_size {
            return Err(bad(
                2,
                &format!(
                    "vocab_size={vocab_size} but table lists {} tokens",
                    vocab.len() + 1
                ),
            ));
        }
        Ok(TableScorer {
            order,
            vocab_size,
            vocab,
            rows,
        })
    }
}

impl TokenScorer for TableScorer {
    fn log2_prob(&self, context: &[String], token: &str) -> f64 {
        let want = self.order.saturating_sub(1);
        let tail = &context[context.len().saturating_sub(want)..];
        let mut ctx: Vec<String> = vec![BOS.to_string(); want - tail.len()];
        ctx.extend(tail.iter().map(|t| {
            if self.vocab.contains(t) {
                t.clone()
            } else {
                UNK.to_string()
            }
        }));
        let token = if self.vocab.contains(token) {
            token
        } else {
            UNK
        };
        for start in 0..=ctx.len() {
            if let Some(row) = self.rows.get(&ctx[start..]) {
                if let Some(lp) = row.get(token) {
                    return *lp;
                }
            }
        }
        -(self.vocab_size as f64).log2()
    }

    fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.vocab.iter().cloned().collect();
        v.push(UNK.to_string());
        v
    }
}

/// Mean surprisal of `t` under `scorer`, in bits per token.
pub fn generative_entropy(t: &TokenSeq, scorer: &dyn TokenScorer) -> Result<f64, EntropyError> {
    if t.is_empty() {
        return Err(EntropyError::EmptyText);
    }
    let total: f64 = (0..t.len())
        .map(|i| scorer.log2_prob(&t.tokens[..i], &t.tokens[i]))
        .sum();
    Ok(clamp_nonneg(-total / t.len() as f64))
}

/// Mean surprisal from externally supplied per-token log2 probabilities.
pub fn generative_entropy_from_logprobs(
    token_count: usize,
    logprobs: &[f64],
) -> Result<f64, EntropyError> {
    if logprobs.len() != token_count {
        return Err(EntropyError::LogprobLength {
            expected: token_count,
            got: logprobs.len(),
        });
    }
    if token_count == 0 {
        return Err(EntropyError::EmptyText);
    }
    let total: f64 = logprobs.iter().sum();
    Ok(clamp_nonneg(-total / token_count as f64))
}
