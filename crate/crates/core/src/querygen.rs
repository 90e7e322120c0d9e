//! Benchmark construction: profile, intents, persona-conditioned queries,
//! deduplication, domain filtering and a stratified train/test split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunker::extract_text;
use crate::corpus::{largest_remainder, split_queries, Intent, QueryRecord, Split, SplitMode, Webpage};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{render, vars};
use crate::text::{first_json_array, first_json_object, prefix_chars, string_list};

pub const QUERIES_PER_INTENT: usize = 5;
pub const DEFAULT_TARGET_QUERIES: usize = 60;
pub const SUMMARY_CHARS: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCluster {
    pub core: Vec<String>,
    pub lsi_synonyms: Vec<String>,
    pub keyphrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentDecision {
    pub intents: BTreeSet<Intent>,
    pub reasoning: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchVariant {
    #[default]
    Standard,
    Ood,
    /// Standard split over pages kept as raw, irregular HTML.
    Html,
}

impl std::str::FromStr for BenchVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(BenchVariant::Standard),
            "ood" => Ok(BenchVariant::Ood),
            "html" => Ok(BenchVariant::Html),
            _ => Err(Error::Config(format!("unknown benchmark variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryGenConfig {
    pub target_queries: usize,
    pub variant: BenchVariant,
    /// Personas reserved for training in the OOD variant.
    pub train_personas: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        QueryGenConfig {
            target_queries: DEFAULT_TARGET_QUERIES,
            variant: BenchVariant::Standard,
            train_personas: None,
            seed: 0,
        }
    }
}

impl QueryGenConfig {
    fn split_mode(&self) -> SplitMode {
        match self.variant {
            BenchVariant::Ood => SplitMode::Ood {
                train_personas: self.train_personas.clone(),
            },
            BenchVariant::Standard | BenchVariant::Html => SplitMode::Standard,
        }
    }
}

fn ask(llm: &dyn LlmClient, tag: &str, system: &str, user: String) -> Result<String> {
    llm.complete(&ChatRequest::new(tag, system, user))
}

fn non_empty(list: Vec<String>) -> Vec<String> {
    list.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn extract_profile(title: &str, llm: &dyn LlmClient) -> Result<(KeywordCluster, Vec<Persona>)> {
    let title = title.trim();
    if title.is_empty() {
        return Err(Error::Profile("page has no title".into()));
    }
    let system = render(prompts::PROFILE_EXTRACTION, &vars::<&str, &str>([]))?;
    let raw = ask(llm, "querygen:profile", system.trim_end(), format!("Title: {title}"))?;
    let obj = first_json_object(&raw).ok_or_else(|| Error::Format("profile response has no JSON object".into()))?;
    let cluster = obj.get("keyword_cluster").and_then(Value::as_object);
    let field = |k: &str| non_empty(string_list(cluster.and_then(|c| c.get(k))));
    let keywords = KeywordCluster {
        core: field("core"),
        lsi_synonyms: field("lsi_synonyms"),
        keyphrases: field("keyphrases"),
    };
    if keywords.core.is_empty() {
        return Err(Error::Profile(format!("no core keywords for `{title}`")));
    }
    let personas = obj
        .get("target_personas")
        .and_then(Value::as_array)
        .map(|list| {
            list.iter()
                .filter_map(|p| {
                    let name = p.get("name")?.as_str()?.trim();
                    (!name.is_empty()).then(|| Persona {
                        name: name.to_string(),
                        description: p
                            .get("description")
                            .and_then(Value::as_str)
                            .unwrap_or("")
                            .trim()
                            .to_string(),
                    })
                })
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    if personas.is_empty() {
        return Err(Error::Profile(format!("no personas for `{title}`")));
    }
    Ok((keywords, personas))
}

/// Intent labels from a JSON `intents` array or an `Intents: [...]` line.
fn intent_labels(raw: &str) -> (Vec<String>, String) {
    if let Some(obj) = first_json_object(raw) {
        if obj.contains_key("intents") {
            let reasoning = obj.get("reasoning").and_then(Value::as_str).unwrap_or("").to_string();
            return (string_list(obj.get("intents")), reasoning);
        }
    }
    let mut labels = Vec::new();
    let mut reasoning = String::new();
    for line in raw.lines() {
        let l = line.trim().trim_start_matches(['-', '*']).trim();
        let lower = l.to_lowercase();
        if let Some(rest) = lower.strip_prefix("intents:").map(|_| &l["intents:".len()..]) {
            labels = rest
                .trim()
                .trim_start_matches('[')
                .trim_end_matches(']')
                .split(',')
                .map(|s| s.trim().trim_matches(['"', '\'']).to_string())
                .filter(|s| !s.is_empty())
                .collect();
        } else if lower.starts_with("reasoning:") {
            reasoning = l["reasoning:".len()..].trim().to_string();
        }
    }
    (labels, reasoning)
}

pub fn classify_intents(title: &str, summary: &str, llm: &dyn LlmClient) -> Result<IntentDecision> {
    let raw = ask(
        llm,
        "querygen:intent",
        prompts::INTENT_CLASSIFICATION.trim_end(),
        format!("Title: {title}\nContent Summary: {summary}"),
    )?;
    let (labels, reasoning) = intent_labels(&raw);
    let mut decision = IntentDecision {
        reasoning,
        ..Default::default()
    };
    for label in labels {
        match Intent::parse_label(&label) {
            Some(i) => {
                decision.intents.insert(i);
            }
            None => decision.warnings.push(format!("dropped unknown intent `{label}`")),
        }
    }
    Ok(decision)
}

fn intent_guideline(intent: Intent) -> &'static str {
    match intent {
        Intent::Informational => "Informational: questions that seek to learn, understand or solve something.",
        Intent::Commercial => {
            "Commercial: research before a decision, such as reviews, comparisons and best-of searches."
        }
        Intent::Transactional => {
            "Transactional: searches by a user ready to act, such as buy, order, book, download or sign up."
        }
        Intent::Navigational => "Navigational: searches for a specific site, brand page or official resource.",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratedQueries {
    pub by_intent: BTreeMap<Intent, Vec<String>>,
    pub warnings: Vec<String>,
}

pub fn generate_queries(
    keyword: &str,
    persona: &Persona,
    intents: &BTreeSet<Intent>,
    llm: &dyn LlmClient,
) -> Result<GeneratedQueries> {
    if intents.is_empty() {
        return Err(Error::Config("query generation needs at least one intent".into()));
    }
    let section = intents
        .iter()
        .map(|i| format!("- {}", intent_guideline(*i)))
        .collect::<Vec<_>>()
        .join("\n");
    let user = render(
        prompts::QUERY_GENERATION,
        &vars([
            ("keyword", keyword.to_string()),
            ("persona_name", persona.name.clone()),
            ("persona_description", persona.description.clone()),
            ("intent_section", section),
        ]),
    )?;
    let raw = ask(llm, "querygen:generate", "", user.trim_end().to_string())?;
    let obj =
        first_json_object(&raw).ok_or_else(|| Error::Format("query generation response has no JSON object".into()))?;
    let mut out = GeneratedQueries::default();
    for intent in Intent::ALL {
        let list = non_empty(string_list(obj.get(intent.as_str())));
        if !intents.contains(&intent) {
            if !list.is_empty() {
                out.warnings.push(format!(
                    "dropped {} queries for non-applicable intent {intent}",
                    list.len()
                ));
            }
            out.by_intent.insert(intent, Vec::new());
            continue;
        }
        let mut list = list;
        if list.len() > QUERIES_PER_INTENT {
            out.warnings.push(format!(
                "truncated {} {intent} queries to {QUERIES_PER_INTENT}",
                list.len()
            ));
            list.truncate(QUERIES_PER_INTENT);
        } else if list.len() < QUERIES_PER_INTENT {
            out.warnings.push(format!("only {} {intent} queries", list.len()));
        }
        out.by_intent.insert(intent, list);
    }
    Ok(out)
}

/// Drop repeats that differ at most in case and surrounding whitespace,
/// keeping the first occurrence.
pub fn exact_dedup(queries: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    queries
        .iter()
        .filter(|q| seen.insert(q.trim().to_lowercase()))
        .cloned()
        .collect()
}

/// Semantic deduplication. The model may only select from `queries`; the
/// result keeps input order.
pub fn deduplicate(queries: &[String], llm: &dyn LlmClient) -> Result<Vec<String>> {
    let queries = exact_dedup(queries);
    if queries.len() < 2 {
        return Ok(queries);
    }
    let user = serde_json::to_string_pretty(&queries).expect("string list serializes");
    let mut last = String::new();
    for _ in 0..2 {
        let raw = ask(llm, "querygen:dedup", prompts::QUERY_DEDUP.trim_end(), user.clone())?;
        let Some(list) = first_json_array(&raw) else {
            last = "response has no JSON array".into();
            continue;
        };
        let kept: BTreeSet<String> = non_empty(list.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .into_iter()
            .collect();
        let input: BTreeSet<&str> = queries.iter().map(String::as_str).collect();
        if let Some(bad) = kept.iter().find(|k| !input.contains(k.as_str())) {
            last = format!("`{bad}` is not an input query");
            continue;
        }
        return Ok(queries.into_iter().filter(|q| kept.contains(q)).collect());
    }
    Err(Error::DedupIntegrity(last))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterResult {
    pub relevant: Vec<String>,
    pub filtered: Vec<String>,
    pub warnings: Vec<String>,
}

fn multiset(items: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for s in items {
        *m.entry(s.as_str()).or_default() += 1;
    }
    m
}

fn check_partition(queries: &[String], raw: &str) -> Result<(Vec<String>, Vec<String>)> {
    let obj = first_json_object(raw).ok_or_else(|| Error::FilterIntegrity("response has no JSON object".into()))?;
    let relevant = string_list(obj.get("relevant_queries"));
    let filtered = string_list(obj.get("filtered_queries"));
    let mut union = relevant.clone();
    union.extend(filtered.iter().cloned());
    if multiset(&union) != multiset(queries) {
        return Err(Error::FilterIntegrity(format!(
            "{} input queries, {} returned, or the strings differ",
            queries.len(),
            union.len()
        )));
    }
    Ok((relevant, filtered))
}

/// Split `queries` into relevant and filtered. An answer that is not a
/// partition of the input is retried once, then everything is kept.
pub fn domain_filter(queries: &[String], title: &str, summary: &str, llm: &dyn LlmClient) -> Result<FilterResult> {
    if queries.is_empty() {
        return Ok(FilterResult::default());
    }
    let user = format!(
        "Document Title: {title}\nDocument Content: {summary}\n\nQueries:\n{}",
        serde_json::to_string_pretty(queries).expect("string list serializes")
    );
    let mut warnings = Vec::new();
    for _ in 0..2 {
        let raw = ask(llm, "querygen:filter", prompts::DOMAIN_FILTER.trim_end(), user.clone())?;
        match check_partition(queries, &raw) {
            Ok((relevant, filtered)) => {
                return Ok(FilterResult {
                    relevant,
                    filtered,
                    warnings,
                })
            }
            Err(e) => warnings.push(e.to_string()),
        }
    }
    warnings.push("keeping every query".into());
    Ok(FilterResult {
        relevant: queries.to_vec(),
        filtered: Vec::new(),
        warnings,
    })
}

/// A query before it is assigned an id and split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub text: String,
    pub intent: Intent,
    pub persona: String,
}

/// Deterministic stratified sample of `n` candidates: quotas by intent, then
/// by persona within each intent. The sample keeps input order.
pub fn stratified_sample(pool: &[Candidate], n: usize, seed: u64) -> Vec<Candidate> {
    if n >= pool.len() {
        return pool.to_vec();
    }
    let mut by_intent: BTreeMap<Intent, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, c) in pool.iter().enumerate() {
        by_intent
            .entry(c.intent)
            .or_default()
            .entry(&c.persona)
            .or_default()
            .push(i);
    }
    let intent_sizes: Vec<usize> = by_intent.values().map(|p| p.values().map(Vec::len).sum()).collect();
    let intent_quotas = largest_remainder(&intent_sizes, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = BTreeSet::new();
    for (personas, quota) in by_intent.values().zip(intent_quotas) {
        let sizes: Vec<usize> = personas.values().map(Vec::len).collect();
        for (members, q) in personas.values().zip(largest_remainder(&sizes, quota)) {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            picked.extend(members.into_iter().take(q));
        }
    }
    picked.into_iter().map(|i| pool[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub keywords: KeywordCluster,
    pub personas: Vec<Persona>,
    pub intents: IntentDecision,
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    pub filtered: Vec<String>,
    pub warnings: Vec<String>,
}

impl QuerySet {
    pub fn queries(&self) -> impl Iterator<Item = &QueryRecord> {
        self.train.iter().chain(&self.test)
    }
}

/// Full pipeline for one page.
pub fn assemble_query_set(page: &Webpage, config: &QueryGenConfig, llm: &dyn LlmClient) -> Result<QuerySet> {
    let title = if page.title.trim().is_empty() {
        crate::chunker::extract_title(&page.raw_html)
    } else {
        page.title.clone()
    };
    let summary = prefix_chars(&extract_text(&page.raw_html), SUMMARY_CHARS).to_string();
    let (keywords, personas) = extract_profile(&title, llm).map_err(|e| e.at_stage("profile"))?;
    let intents = classify_intents(&title, &summary, llm).map_err(|e| e.at_stage("intents"))?;
    let mut warnings = intents.warnings.clone();
    if intents.intents.is_empty() {
        return Err(Error::Profile(format!("page `{}` satisfies no search intent", page.id)).at_stage("intents"));
    }

    let mut generated = Vec::new();
    for persona in &personas {
        for keyword in &keywords.core {
            let g = generate_queries(keyword, persona, &intents.intents, llm).map_err(|e| e.at_stage("generate"))?;
            warnings.extend(g.warnings);
            for (intent, list) in g.by_intent {
                generated.extend(list.into_iter().map(|text| Candidate {
                    text,
                    intent,
                    persona: persona.name.clone(),
                }));
            }
        }
    }

    let texts: Vec<String> = generated.iter().map(|c| c.text.clone()).collect();
    let kept = deduplicate(&texts, llm).map_err(|e| e.at_stage("dedup"))?;
    let filter = domain_filter(&kept, &title, &summary, llm).map_err(|e| e.at_stage("filter"))?;
    warnings.extend(filter.warnings.iter().cloned());

    // First generated occurrence decides intent and persona.
    let mut origin: BTreeMap<&str, &Candidate> = BTreeMap::new();
    for c in &generated {
        origin.entry(c.text.as_str()).or_insert(c);
    }
    let relevant: BTreeSet<&str> = filter.relevant.iter().map(String::as_str).collect();
    let pool: Vec<Candidate> = kept
        .iter()
        .filter(|q| relevant.contains(q.as_str()))
        .map(|q| origin[q.as_str()].clone())
        .collect();
    if pool.len() < config.target_queries {
        warnings.push(format!("only {} queries survive filtering, keeping all", pool.len()));
    }
    let sample = stratified_sample(&pool, config.target_queries, config.seed);
    let records: Vec<QueryRecord> = sample
        .into_iter()
        .enumerate()
        .map(|(i, c)| QueryRecord {
            id: format!("{}-q{:03}", page.id, i + 1),
            page_id: page.id.clone(),
            text: c.text,
            intent: c.intent,
            persona: c.persona,
            split: Split::Test,
        })
        .collect();
    let (train, test) = split_queries(&records, &config.split_mode(), config.seed).map_err(|e| e.at_stage("split"))?;
    Ok(QuerySet {
        keywords,
        personas,
        intents,
        train,
        test,
        filtered: filter.filtered,
        warnings,
    })
}
