//! SoftTFIDF string similarity.
//!
//! Token weights are `ln(1 + tf) * idf` with smoothed
//! `idf = ln((1 + N) / (1 + df)) + 1`, L2-normalised per string. Two tokens
//! match softly when their Jaro-Winkler similarity is at least the threshold
//! (0.9 by default); each token of one string contributes
//! `w_a(t) * w_b(u) * jw(t, u)` for its best match `u` in the other string.
//! The directed score is symmetrised by averaging both directions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub const DEFAULT_SOFT_THRESHOLD: f64 = 0.9;

/// Jaro similarity over Unicode scalar values.
pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut b_used = vec![false; b.len()];
    let mut a_matched = Vec::new();
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_used[j] && b[j] == *ca {
                b_used[j] = true;
                a_matched.push(*ca);
                break;
            }
        }
    }
    let m = a_matched.len();
    if m == 0 {
        return 0.0;
    }
    let b_matched = b
        .iter()
        .zip(&b_used)
        .filter(|(_, used)| **used)
        .map(|(c, _)| *c);
    let half_transpositions = a_matched
        .iter()
        .zip(b_matched)
        .filter(|(x, y)| **x != *y)
        .count();
    let m = m as f64;
    let t = (half_transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler with prefix scale 0.1 over at most 4 leading characters,
/// boosting only scores above 0.7.
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    if j <= 0.7 {
        return j;
    }
    let prefix = a
        .chars()
        .zip(b.chars())
        .take(4)
        .take_while(|(x, y)| x == y)
        .count() as f64;
    (j + prefix * 0.1 * (1.0 - j)).min(1.0)
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Similarity model with document frequencies taken from a corpus.
#[derive(Debug, Clone)]
pub struct SoftTfIdf {
    df: HashMap<String, usize>,
    docs: usize,
    threshold: f64,
}

impl SoftTfIdf {
    pub fn new<I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df = HashMap::new();
        let mut docs = 0;
        for doc in corpus {
            docs += 1;
            let uniq: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Self {
            df,
            docs,
            threshold: DEFAULT_SOFT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    /// Normalised token weights, ordered by token.
    pub fn weights(&self, text: &str) -> Vec<(String, f64)> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_insert(0) += 1;
        }
        let raw: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(t, n)| {
                let w = (1.0 + n as f64).ln() * self.idf(&t);
                (t, w)
            })
            .collect();
        let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return raw;
        }
        raw.into_iter().map(|(t, w)| (t, w / norm)).collect()
    }

    fn directed(&self, wa: &[(String, f64)], wb: &[(String, f64)]) -> f64 {
        let mut total = 0.0;
        for (t, w) in wa {
            let mut best: Option<(f64, f64)> = None;
            for (u, v) in wb {
                let s = if t == u { 1.0 } else { jaro_winkler(t, u) };
                if s >= self.threshold && best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, *v));
                }
            }
            if let Some((s, v)) = best {
                total += w * v * s;
            }
        }
        total
    }

    /// Symmetric similarity in `[0, 1]`.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let wa = self.weights(a);
        let wb = self.weights(b);
        match (wa.is_empty(), wb.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let s = 0.5 * (self.directed(&wa, &wb) + self.directed(&wb, &wa));
        s.clamp(0.0, 1.0)
    }
}

/// Similarity of two strings using the pair itself as the corpus.
pub fn soft_tfidf(a: &str, b: &str) -> f64 {
    SoftTfIdf::new([a, b]).similarity(a, b)
}
