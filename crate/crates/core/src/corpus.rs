//! Webpages, query sets, candidate pools and their JSON file format.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthCategory {
    Short,
    Medium,
    Long,
    VeryLong,
}

impl fmt::Display for LengthCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthCategory::Short => "Short",
            LengthCategory::Medium => "Medium",
            LengthCategory::Long => "Long",
            LengthCategory::VeryLong => "VeryLong",
        })
    }
}

/// Bucket by character count: `[0,2000)`, `[2000,5000)`, `[5000,10000)`, `[10000,∞)`.
pub fn length_category(html: &str) -> LengthCategory {
    match html.chars().count() {
        0..=1999 => LengthCategory::Short,
        2000..=4999 => LengthCategory::Medium,
        5000..=9999 => LengthCategory::Long,
        _ => LengthCategory::VeryLong,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Webpage {
    pub id: String,
    #[serde(default)]
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub topic: String,
    #[serde(rename = "html")]
    pub raw_html: String,
}

impl Webpage {
    pub fn new(id: impl Into<String>, raw_html: impl Into<String>) -> Self {
        let raw_html = raw_html.into();
        Webpage {
            id: id.into(),
            url: String::new(),
            title: crate::chunker::extract_title(&raw_html),
            topic: String::new(),
            raw_html,
        }
    }

    pub fn length_category(&self) -> LengthCategory {
        length_category(&self.raw_html)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Navigational,
    Informational,
    Commercial,
    Transactional,
}

impl Intent {
    pub const ALL: [Intent; 4] = [
        Intent::Navigational,
        Intent::Informational,
        Intent::Commercial,
        Intent::Transactional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Navigational => "navigational",
            Intent::Informational => "informational",
            Intent::Commercial => "commercial",
            Intent::Transactional => "transactional",
        }
    }

    /// Accepts the lowercase key and the labels used in intent classification
    /// ("Commercial Investigation", "Informational (KNOW)", ...).
    pub fn parse_label(label: &str) -> Option<Intent> {
        let l = label.trim().to_lowercase();
        let head = l.split(|c: char| !c.is_alphabetic()).next().unwrap_or("");
        Intent::ALL.into_iter().find(|i| i.as_str() == head)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub page_id: String,
    pub text: String,
    pub intent: Intent,
    #[serde(default)]
    pub persona: String,
    pub split: Split,
}

/// A loaded, cross-checked dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub version: u32,
    pub webpages: Vec<Webpage>,
    /// Queries grouped by webpage id, in file order within each page.
    pub queries: BTreeMap<String, Vec<QueryRecord>>,
    /// Ordered candidate pool per query id.
    pub pools: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: u32,
    webpages: Vec<Webpage>,
    queries: Vec<QueryRecord>,
    #[serde(default)]
    pools: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    pub fn page(&self, id: &str) -> Option<&Webpage> {
        self.webpages.iter().find(|w| w.id == id)
    }

    pub fn queries_for(&self, page_id: &str) -> &[QueryRecord] {
        self.queries.get(page_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_queries(&self) -> impl Iterator<Item = &QueryRecord> {
        self.queries.values().flatten()
    }

    pub fn query(&self, id: &str) -> Option<&QueryRecord> {
        self.all_queries().find(|q| q.id == id)
    }

    pub fn pool(&self, query_id: &str) -> Option<&[String]> {
        self.pools.get(query_id).map(Vec::as_slice)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        if file.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", file.version)));
        }
        let mut page_ids = HashSet::new();
        for w in &file.webpages {
            if !page_ids.insert(w.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate webpage id {}", w.id)));
            }
            if w.raw_html.is_empty() {
                return Err(Error::Integrity(format!("webpage {} has empty html", w.id)));
            }
        }
        let mut query_ids = HashSet::new();
        let mut queries: BTreeMap<String, Vec<QueryRecord>> = BTreeMap::new();
        for q in file.queries {
            if !query_ids.insert(q.id.clone()) {
                return Err(Error::Integrity(format!("duplicate query id {}", q.id)));
            }
            if q.text.trim().is_empty() {
                return Err(Error::Integrity(format!("query {} has empty text", q.id)));
            }
            if !page_ids.contains(q.page_id.as_str()) {
                return Err(Error::Integrity(q.page_id.clone()));
            }
            queries.entry(q.page_id.clone()).or_default().push(q);
        }
        for (qid, pool) in &file.pools {
            if !query_ids.contains(qid) {
                return Err(Error::Integrity(qid.clone()));
            }
            if let Some(bad) = pool.iter().find(|id| !page_ids.contains(id.as_str())) {
                return Err(Error::Integrity(bad.clone()));
            }
        }
        Ok(Dataset {
            version: file.version,
            webpages: file.webpages,
            queries,
            pools: file.pools,
        })
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            version: self.version,
            webpages: self.webpages.clone(),
            queries: self.all_queries().cloned().collect(),
            pools: self.pools.clone(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }

    /// Check the 60-query, 20/40 per-page shape of a MIMIQ-style dataset.
    pub fn check_mimiq_shape(&self) -> Result<()> {
        for w in &self.webpages {
            let qs = self.queries_for(&w.id);
            let train = qs.iter().filter(|q| q.split == Split::Train).count();
            if qs.len() != 60 || train != 20 {
                return Err(Error::Integrity(format!(
                    "webpage {} has {} queries ({} train)",
                    w.id,
                    qs.len(),
                    train
                )));
            }
        }
        Ok(())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&json)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_json()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitMode {
    Standard,
    /// Disjoint personas. `train_personas` picks the training side; by
    /// default the first third (at least one) of the sorted personas.
    Ood {
        train_personas: Option<Vec<String>>,
    },
}

/// Split queries into train and test, preserving input order on each side.
pub fn split_queries(
    queries: &[QueryRecord],
    mode: &SplitMode,
    seed: u64,
) -> Result<(Vec<QueryRecord>, Vec<QueryRecord>)> {
    let train_set: BTreeSet<usize> = match mode {
        SplitMode::Standard => standard_train_indices(queries, seed),
        SplitMode::Ood { train_personas } => {
            let personas: BTreeSet<&str> = queries.iter().map(|q| q.persona.as_str()).collect();
            if personas.len() < 2 {
                return Err(Error::Config("OOD split needs at least two distinct personas".into()));
            }
            let train: BTreeSet<&str> = match train_personas {
                Some(list) => {
                    let chosen: BTreeSet<&str> = list.iter().map(String::as_str).collect();
                    if chosen.is_empty() || !chosen.is_subset(&personas) || chosen.len() == personas.len() {
                        return Err(Error::Config(
                            "OOD train personas must be a non-empty proper subset of the query personas".into(),
                        ));
                    }
                    chosen
                }
                None => {
                    let k = personas.len().div_ceil(3).clamp(1, personas.len() - 1);
                    personas.iter().take(k).copied().collect()
                }
            };
            queries
                .iter()
                .enumerate()
                .filter(|(_, q)| train.contains(q.persona.as_str()))
                .map(|(i, _)| i)
                .collect()
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let mut q = q.clone();
        if train_set.contains(&i) {
            q.split = Split::Train;
            train.push(q);
        } else {
            q.split = Split::Test;
            test.push(q);
        }
    }
    Ok((train, test))
}

/// Training size for a standard split: one third, rounded.
pub fn standard_train_size(n: usize) -> usize {
    (n + 1) / 3
}

fn standard_train_indices(queries: &[QueryRecord], seed: u64) -> BTreeSet<usize> {
    let n = queries.len();
    let target = standard_train_size(n);
    let mut groups: BTreeMap<Intent, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        groups.entry(q.intent).or_default().push(i);
    }
    let quotas = largest_remainder(&groups.values().map(Vec::len).collect::<Vec<_>>(), target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeSet::new();
    for (members, quota) in groups.values().zip(quotas) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        out.extend(members.into_iter().take(quota));
    }
    out
}

/// Apportion `total` across groups proportionally to `sizes` (Hamilton
/// method; ties go to the earlier group).
pub fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|s| s * total / n).collect();
    let mut rest: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, s)| (s * total % n, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - quotas.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        quotas[i] += 1;
    }
    quotas
}
