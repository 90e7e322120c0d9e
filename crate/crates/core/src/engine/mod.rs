//! Simulated generative engine: retrieval, cited answer generation and the
//! citation indicator for a target page.

mod attr_first;
pub mod bm25;
mod citations;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chunker::extract_text;
use crate::corpus::Webpage;
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{render, vars};

pub use attr_first::{generate_attr_first, AttrFirstTrace, HIGHLIGHT_END, HIGHLIGHT_START};
pub use citations::{parse_citations, stripped_text, Sentence};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CitationMode {
    #[default]
    InContext,
    AttrFirst,
}

impl std::str::FromStr for CitationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "in_context" | "incontext" => Ok(CitationMode::InContext),
            "attr_first" | "attrfirst" => Ok(CitationMode::AttrFirst),
            _ => Err(Error::Config(format!("unknown citation mode `{s}`"))),
        }
    }
}

/// A candidate source: an id and its HTML.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDoc {
    pub id: String,
    pub html: String,
}

impl CandidateDoc {
    pub fn new(id: impl Into<String>, html: impl Into<String>) -> Self {
        CandidateDoc {
            id: id.into(),
            html: html.into(),
        }
    }
}

impl From<&Webpage> for CandidateDoc {
    fn from(w: &Webpage) -> Self {
        CandidateDoc::new(&w.id, &w.raw_html)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub full_text: String,
    pub sentences: Vec<Sentence>,
    pub mode: CitationMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<AttrFirstTrace>,
}

impl GeneratedAnswer {
    /// Union of all sentence citations.
    pub fn cited_indices(&self) -> BTreeSet<usize> {
        self.sentences
            .iter()
            .flat_map(|s| s.citations.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationOutcome {
    pub query_id: String,
    pub target_id: String,
    /// Candidates shown to the generator, in rank order.
    pub ranked_candidates: Vec<String>,
    pub answer: GeneratedAnswer,
    pub cited_ids: BTreeSet<String>,
    pub target_cited: bool,
}

impl CitationOutcome {
    /// 1-based rank of `id` among the generator's sources.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranked_candidates.iter().position(|c| c == id).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub k: usize,
    pub mode: CitationMode,
    /// Characters of extracted text shown per source; `None` shows all.
    pub source_char_limit: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: DEFAULT_K,
            mode: CitationMode::InContext,
            source_char_limit: None,
        }
    }
}

/// Top-`k` candidate ids by BM25 over extracted text; ties keep pool order.
pub fn retrieve(query: &str, pool: &[CandidateDoc], k: usize) -> Result<Vec<String>> {
    if pool.is_empty() {
        return Err(Error::Retrieval("empty candidate pool".into()));
    }
    if k == 0 {
        return Err(Error::Config("retrieval k must be at least 1".into()));
    }
    let texts: Vec<String> = pool.iter().map(|d| extract_text(&d.html)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    Ok(bm25::rank(query, &refs, k)
        .into_iter()
        .map(|i| pool[i].id.clone())
        .collect())
}

fn source_text(doc: &CandidateDoc, limit: Option<usize>) -> String {
    let text = extract_text(&doc.html);
    match limit {
        Some(n) => crate::text::prefix_chars(&text, n).to_string(),
        None => text,
    }
}

/// The numbered source block of the in-context prompt.
pub fn format_sources(candidates: &[CandidateDoc], limit: Option<usize>) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {}", i + 1, source_text(d, limit)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Drop citation indices outside `1..=k`, recording a warning for each.
pub(crate) fn clamp_citations(sentences: &mut [Sentence], k: usize, warnings: &mut Vec<String>) {
    for s in sentences {
        let bad: Vec<usize> = s.citations.iter().copied().filter(|&i| i == 0 || i > k).collect();
        for i in bad {
            s.citations.remove(&i);
            let msg = format!("citation [{i}] out of range for {k} sources");
            tracing::warn!("{msg}");
            warnings.push(msg);
        }
    }
}

pub fn generate_incontext(
    query: &str,
    candidates: &[CandidateDoc],
    source_char_limit: Option<usize>,
    llm: &dyn LlmClient,
) -> Result<GeneratedAnswer> {
    if candidates.is_empty() {
        return Err(Error::Retrieval("no candidates to generate from".into()));
    }
    let user = render(
        prompts::INCONTEXT_USER,
        &vars([
            ("query", query.to_string()),
            ("source", format_sources(candidates, source_char_limit)),
        ]),
    )?;
    let req = ChatRequest::new("engine:incontext", prompts::INCONTEXT_SYSTEM.trim_end(), user);
    let raw = llm.complete(&req)?;
    let mut sentences = parse_citations(&raw);
    if sentences.is_empty() {
        return Err(Error::GenerationFormat("response contains no sentences".into()));
    }
    let mut warnings = Vec::new();
    clamp_citations(&mut sentences, candidates.len(), &mut warnings);
    Ok(GeneratedAnswer {
        full_text: raw.trim().to_string(),
        sentences,
        mode: CitationMode::InContext,
        warnings,
        trace: None,
    })
}

pub fn generate(
    query: &str,
    candidates: &[CandidateDoc],
    config: &EngineConfig,
    llm: &dyn LlmClient,
) -> Result<GeneratedAnswer> {
    match config.mode {
        CitationMode::InContext => generate_incontext(query, candidates, config.source_char_limit, llm),
        CitationMode::AttrFirst => generate_attr_first(query, candidates, llm),
    }
}

/// Run the engine for one query and report whether `target_id` was cited.
///
/// An answer is generated even when the target misses the top `k`, so the
/// cited competitors are still known.
pub fn verify_citation(
    query_id: &str,
    query: &str,
    target_id: &str,
    pool: &[CandidateDoc],
    config: &EngineConfig,
    llm: &dyn LlmClient,
) -> Result<CitationOutcome> {
    if !pool.iter().any(|d| d.id == target_id) {
        return Err(Error::Config(format!(
            "target {target_id} is not in the candidate pool of query {query_id}"
        )));
    }
    let ranked = retrieve(query, pool, config.k)?;
    let candidates: Vec<CandidateDoc> = ranked
        .iter()
        .map(|id| {
            pool.iter()
                .find(|d| &d.id == id)
                .cloned()
                .expect("ranked ids come from the pool")
        })
        .collect();
    let answer = generate(query, &candidates, config, llm)?;
    let cited_ids: BTreeSet<String> = answer
        .cited_indices()
        .into_iter()
        .map(|i| ranked[i - 1].clone())
        .collect();
    Ok(CitationOutcome {
        query_id: query_id.to_string(),
        target_id: target_id.to_string(),
        target_cited: cited_ids.contains(target_id),
        ranked_candidates: ranked,
        answer,
        cited_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedLlm};

    fn pool() -> Vec<CandidateDoc> {
        vec![
            CandidateDoc::new("a", "<p>Water boils at 100 degrees.</p>"),
            CandidateDoc::new("b", "<p>Ice melts at zero degrees.</p>"),
        ]
    }

    fn scripted(response: &str) -> ScriptedLlm {
        ScriptedLlm::strict(vec![ScriptEntry::new("Question:", response)]).unwrap()
    }

    #[test]
    fn retrieve_contracts() {
        let one = [CandidateDoc::new("x", "<p>hi</p>")];
        assert_eq!(retrieve("q", &one, 5).unwrap(), vec!["x"]);
        assert!(matches!(retrieve("q", &[], 5), Err(Error::Retrieval(_))));
        let three = [
            CandidateDoc::new("a", "<p>a</p>"),
            CandidateDoc::new("b", "<p>b</p>"),
            CandidateDoc::new("c", "<p>c</p>"),
        ];
        assert_eq!(retrieve("q", &three, 5).unwrap().len(), 3);
        assert_eq!(retrieve("c", &three, 5).unwrap()[0], "c");
    }

    #[test]
    fn incontext_single_sentence() {
        let ans = generate_incontext("q", &pool(), None, &scripted("Water boils at 100C.[1]")).unwrap();
        assert_eq!(ans.sentences.len(), 1);
        assert_eq!(ans.cited_indices().into_iter().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn incontext_prompt_numbers_sources() {
        let llm = ScriptedLlm::strict(vec![ScriptEntry::new(
            "Search Results: [1] Water boils at 100 degrees.\n\n[2] Ice melts",
            "ok.[1]",
        )])
        .unwrap();
        generate_incontext("when", &pool(), None, &llm).unwrap();
    }

    #[test]
    fn out_of_range_citation_is_dropped_with_warning() {
        let ans = generate_incontext("q", &pool(), None, &scripted("A.[3] B.[1]")).unwrap();
        assert_eq!(ans.cited_indices().into_iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(ans.warnings.len(), 1);
    }

    #[test]
    fn empty_response_is_generation_format_error() {
        assert!(matches!(
            generate_incontext("q", &pool(), None, &scripted("  ")),
            Err(Error::GenerationFormat(_))
        ));
    }

    #[test]
    fn union_of_three_sentences() {
        let cfg = EngineConfig::default();
        let out = verify_citation("q1", "water", "b", &pool(), &cfg, &scripted("A.[1][2] B.[2] C.[1]")).unwrap();
        assert_eq!(out.cited_ids.len(), 2);
        assert!(out.target_cited);
    }

    #[test]
    fn target_ranked_second_and_uncited() {
        let cfg = EngineConfig::default();
        let out = verify_citation("q1", "water boils", "b", &pool(), &cfg, &scripted("Boils.[1]")).unwrap();
        assert_eq!(out.ranked_candidates, vec!["a", "b"]);
        assert!(!out.target_cited);
        assert_eq!(out.cited_ids.iter().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn target_outside_top_k() {
        let cfg = EngineConfig {
            k: 1,
            ..Default::default()
        };
        let out = verify_citation("q1", "water boils", "b", &pool(), &cfg, &scripted("Boils.[1]")).unwrap();
        assert!(!out.target_cited);
        assert_eq!(out.rank_of("b"), None);
    }

    #[test]
    fn target_must_be_in_pool() {
        let cfg = EngineConfig::default();
        assert!(matches!(
            verify_citation("q1", "w", "zz", &pool(), &cfg, &scripted("A.[1]")),
            Err(Error::Config(_))
        ));
    }
}
