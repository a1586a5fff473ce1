//! Shared fixtures: a planted-signal corpus family.
//!
//! Clean samples fall into three bands of increasing information entropy,
//! fixed by the number of distinct tokens per text. Each band carries its
//! own class keywords, so a model only covers every band when trained on all
//! three. Noise samples are long, maximally diverse texts with uniformly
//! random labels; they occupy the top of the normalized scale.

#![allow(dead_code)]

use std::collections::HashSet;

use euds::corpus::{Dataset, Sample, Source, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 2] = ["pos", "neg"];

/// Distinct-token ranges per band. Min-max normalization is anchored at the
/// two-token texts (1/3 bit) and the longest noise text, which puts these
/// in `[0, 3)`, `[3, 5)`, `[5, 8)` and `[8, 10]`.
pub const BAND_TOKENS: [(usize, usize); 3] = [(2, 4), (5, 8), (9, 22)];
pub const NOISE_TOKENS: (usize, usize) = (30, 45);

/// Share of the clean samples in each band.
pub const BAND_SHARE: [f64; 3] = [0.2, 0.3, 0.5];

const KEYWORDS_PER_SET: usize = 20;
const FILLERS: usize = 400;

pub struct Planted {
    pub dataset: Dataset,
    pub noise_ids: HashSet<String>,
}

fn keyword(band: usize, class: usize, i: usize) -> String {
    format!("kw{band}{}{i}", LABELS[class])
}

fn filler(i: usize) -> String {
    format!("w{i}")
}

fn draw_text(rng: &mut ChaCha8Rng, keywords: Vec<String>, len: usize) -> String {
    let mut tokens = keywords;
    let mut fillers: Vec<usize> = (0..FILLERS).collect();
    fillers.shuffle(rng);
    tokens.extend(fillers.into_iter().take(len - tokens.len()).map(filler));
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// `n` samples, `noise_frac` of them noise, in a seeded order.
pub fn planted_corpus(n: usize, noise_frac: f64, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_noise = (n as f64 * noise_frac).round() as usize;
    let n_clean = n - n_noise;
    let mut samples = Vec::with_capacity(n);
    let mut noise_ids = HashSet::new();

    let mut band_counts = [0usize; 3];
    band_counts[0] = (n_clean as f64 * BAND_SHARE[0]).round() as usize;
    band_counts[1] = (n_clean as f64 * BAND_SHARE[1]).round() as usize;
    band_counts[2] = n_clean - band_counts[0] - band_counts[1];

    let mut kinds: Vec<Option<usize>> = Vec::with_capacity(n);
    for (band, &c) in band_counts.iter().enumerate() {
        kinds.extend(std::iter::repeat_n(Some(band), c));
    }
    kinds.extend(std::iter::repeat_n(None, n_noise));
    kinds.shuffle(&mut rng);

    for (i, kind) in kinds.into_iter().enumerate() {
        let id = format!("p{i:05}");
        let (text, label) = match kind {
            Some(band) => {
                let class = i % 2;
                let (lo, hi) = BAND_TOKENS[band];
                let len = rng.gen_range(lo..=hi);
                let n_kw = 1 + band.min(1) + (band == 2) as usize;
                let kws = rand::seq::index::sample(&mut rng, KEYWORDS_PER_SET, n_kw)
                    .into_iter()
                    .map(|k| keyword(band, class, k))
                    .collect();
                (draw_text(&mut rng, kws, len), LABELS[class])
            }
            None => {
                let content = rng.gen_range(0..2);
                let len = rng.gen_range(NOISE_TOKENS.0..=NOISE_TOKENS.1);
                let kws = (0..8)
                    .map(|j| keyword(j % 3, content, rng.gen_range(0..KEYWORDS_PER_SET)))
                    .collect::<HashSet<_>>()
                    .into_iter()
                    .collect::<Vec<_>>();
                let mut kws = kws;
                kws.sort();
                noise_ids.insert(id.clone());
                (draw_text(&mut rng, kws, len), LABELS[rng.gen_range(0..2)])
            }
        };
        samples.push(Sample::new(id, text, label, Source::Original));
    }
    Planted {
        dataset: Dataset::new("planted", Task::SentimentAnalysis, samples)
            .expect("generated samples are valid"),
        noise_ids,
    }
}
