//! Visibility, contribution and faithfulness metrics, all in [0, 1].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chunker::extract_text;
use crate::engine::Sentence;
use crate::error::{Error, Result};
use crate::text::tokenize;

/// One row of the result table. `None` marks a metric that does not apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cr: Option<f64>,
    pub word: Option<f64>,
    pub pos: Option<f64>,
    pub wordpos: Option<f64>,
    pub tfidf: Option<f64>,
    pub embed: Option<f64>,
    pub jaccard: Option<f64>,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 7] = ["CR", "Word", "Pos", "Wordpos", "TF-IDF", "Embed", "Jaccard"];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.cr,
            self.word,
            self.pos,
            self.wordpos,
            self.tfidf,
            self.embed,
            self.jaccard,
        ]
    }

    /// Cells as percentages with two decimals, `-` when absent.
    pub fn cells(&self) -> Vec<String> {
        self.values()
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * 100.0)))
            .collect()
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn citation_rate(cited: &[bool]) -> Result<f64> {
    if cited.is_empty() {
        return Err(Error::UndefinedMetric("citation rate of an empty outcome list".into()));
    }
    Ok(cited.iter().filter(|c| **c).count() as f64 / cited.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub word: f64,
    pub pos: f64,
    pub wordpos: f64,
}

/// Word count of a sentence.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Share of the answer attributable to source `target` (1-based) out of
/// `sources`. Sentence i of n has position weight exp(-(i-1)/n); a sentence
/// citing several sources splits its mass equally between them.
pub fn contribution(sentences: &[Sentence], target: usize, sources: usize) -> Result<Contribution> {
    if target == 0 || target > sources {
        return Err(Error::Range {
            index: target,
            len: sources,
        });
    }
    if sentences.is_empty() {
        return Err(Error::UndefinedMetric("contribution of an empty answer".into()));
    }
    let n = sentences.len() as f64;
    let (mut w_num, mut w_den, mut p_num, mut p_den, mut wp_num, mut wp_den) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, s) in sentences.iter().enumerate() {
        let w = word_count(&s.text) as f64;
        let p = (-(i as f64) / n).exp();
        w_den += w;
        p_den += p;
        wp_den += w * p;
        if s.citations.contains(&target) {
            let share = s.citations.len() as f64;
            w_num += w / share;
            p_num += p / share;
            wp_num += w * p / share;
        }
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { clamp01(num / den) } else { 0.0 };
    Ok(Contribution {
        word: ratio(w_num, w_den),
        pos: ratio(p_num, p_den),
        wordpos: ratio(wp_num, wp_den),
    })
}

/// Mean contribution over queries; `None` entries (uncited or no answer) count as zero.
pub fn mean_contribution(per_query: &[Option<Contribution>]) -> Option<Contribution> {
    let all = per_query.iter().map(|c| c.unwrap_or_default());
    let n = per_query.len();
    if n == 0 {
        return None;
    }
    let sum = all.fold(Contribution::default(), |a, c| Contribution {
        word: a.word + c.word,
        pos: a.pos + c.pos,
        wordpos: a.wordpos + c.wordpos,
    });
    Some(Contribution {
        word: sum.word / n as f64,
        pos: sum.pos / n as f64,
        wordpos: sum.wordpos / n as f64,
    })
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (token_set(a), token_set(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Document frequencies of a reference corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    docs: usize,
    df: BTreeMap<String, usize>,
}

impl IdfTable {
    pub fn new<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut table = IdfTable::default();
        for doc in corpus {
            table.docs += 1;
            for t in token_set(doc) {
                *table.df.entry(t).or_default() += 1;
            }
        }
        table
    }

    pub fn len(&self) -> usize {
        self.docs
    }

    pub fn is_empty(&self) -> bool {
        self.docs == 0
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }
}

fn term_freqs(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_default() += 1.0;
    }
    let len = tokens.len() as f64;
    tf.values_mut().for_each(|v| *v /= len);
    tf
}

/// Cosine of TF-IDF vectors of `a` and `b`. Document frequencies come from
/// `corpus` with `a` and `b` added to it.
pub fn tfidf_cosine(a: &str, b: &str, corpus: &IdfTable) -> f64 {
    let (ta, tb) = (tokenize(a), tokenize(b));
    if ta.is_empty() || tb.is_empty() {
        tracing::warn!("tf-idf cosine of an empty text is 0");
        return 0.0;
    }
    let (sa, sb): (BTreeSet<&str>, BTreeSet<&str>) = (
        ta.iter().map(String::as_str).collect(),
        tb.iter().map(String::as_str).collect(),
    );
    let n = (corpus.len() + 2) as f64;
    let idf = |t: &str| {
        let df = corpus.df(t) + usize::from(sa.contains(t)) + usize::from(sb.contains(t));
        ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0
    };
    let mut va = term_freqs(&ta);
    let mut vb = term_freqs(&tb);
    for (t, f) in va.iter_mut().chain(vb.iter_mut()) {
        *f *= idf(t);
    }
    cosine_sparse(&va, &vb)
}

fn cosine_sparse(a: &BTreeMap<&str, f64>, b: &BTreeMap<&str, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        tracing::warn!("cosine of a zero vector is 0");
        return 0.0;
    }
    clamp01(dot / (na * nb))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// L2-normalized hashed bag of words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBow {
    pub dim: usize,
}

impl Default for HashedBow {
    fn default() -> Self {
        HashedBow { dim: 256 }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl HashedBow {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Embedder for HashedBow {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut v = vec![0.0; self.dim];
        for t in tokenize(text) {
            v[self.bucket(&t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

pub fn embed_cosine(a: &str, b: &str, embedder: &dyn Embedder) -> Result<f64> {
    let (va, vb) = (embedder.embed(a)?, embedder.embed(b)?);
    if va.len() != vb.len() {
        return Err(Error::Config("embedder returned vectors of different lengths".into()));
    }
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        tracing::warn!("embedding cosine of a zero vector is 0");
        return Ok(0.0);
    }
    Ok(clamp01(dot / (na * nb)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub tfidf: f64,
    pub embed: f64,
    pub jaccard: f64,
}

/// Similarity of the visible text of two versions of a page.
pub fn faithfulness(
    original_html: &str,
    optimized_html: &str,
    corpus: &IdfTable,
    embedder: &dyn Embedder,
) -> Result<Faithfulness> {
    let a = extract_text(original_html);
    let b = extract_text(optimized_html);
    if tokenize(&a).is_empty() || tokenize(&b).is_empty() {
        return Err(Error::UndefinedMetric("page has no visible text".into()));
    }
    Ok(Faithfulness {
        tfidf: tfidf_cosine(&a, &b, corpus),
        embed: embed_cosine(&a, &b, embedder)?,
        jaccard: jaccard(&a, &b),
    })
}

/// Mean faithfulness over pages; `None` when there are none.
pub fn mean_faithfulness(items: &[Faithfulness]) -> Option<Faithfulness> {
    Some(Faithfulness {
        tfidf: mean(items.iter().map(|f| f.tfidf))?,
        embed: mean(items.iter().map(|f| f.embed))?,
        jaccard: mean(items.iter().map(|f| f.jaccard))?,
    })
}
