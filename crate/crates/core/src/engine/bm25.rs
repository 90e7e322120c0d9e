//! Okapi BM25 over lowercased alphanumeric tokens.

use std::collections::{HashMap, HashSet};

use crate::text::tokenize;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// BM25 score of every document for `query`. Each distinct query term counts once.
pub fn scores(query: &str, docs: &[&str]) -> Vec<f64> {
    let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    let n = docs.len();
    let avgdl = if n == 0 {
        0.0
    } else {
        doc_tokens.iter().map(Vec::len).sum::<usize>() as f64 / n as f64
    };
    let mut seen = HashSet::new();
    let terms: Vec<String> = tokenize(query).into_iter().filter(|t| seen.insert(t.clone())).collect();
    let tfs: Vec<HashMap<&str, usize>> = doc_tokens
        .iter()
        .map(|toks| {
            let mut m = HashMap::new();
            for t in toks {
                *m.entry(t.as_str()).or_insert(0) += 1;
            }
            m
        })
        .collect();
    doc_tokens
        .iter()
        .zip(&tfs)
        .map(|(toks, tf)| {
            let dl = toks.len() as f64;
            let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
            terms
                .iter()
                .map(|t| {
                    let f = *tf.get(t.as_str()).unwrap_or(&0) as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let df = tfs.iter().filter(|m| m.contains_key(t.as_str())).count();
                    idf(n, df) * f * (K1 + 1.0) / (f + K1 * (1.0 - B + B * norm))
                })
                .sum()
        })
        .collect()
}

/// Indices of the top `k` documents, best first; ties keep input order.
pub fn rank(query: &str, docs: &[&str], k: usize) -> Vec<usize> {
    let s = scores(query, docs);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
