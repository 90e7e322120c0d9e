//! Select, cluster, then generate one sentence per cluster.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CandidateDoc, CitationMode, GeneratedAnswer, Sentence};
use crate::chunker::{extract_text, partition};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{render, vars};
use crate::text::{first_json_array, strip_fences};

pub const HIGHLIGHT_START: &str = "<highlight_start>";
pub const HIGHLIGHT_END: &str = "<highlight_end>";

static CHUNK_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+)\s*-\s*(\d+)").expect("chunk id regex"));

/// Stage outputs of one attr-first generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrFirstTrace {
    /// Selected `(doc, chunk)` pairs, 0-based; position is the highlight index.
    pub selected: Vec<(usize, usize)>,
    /// Highlight indices per cluster, in sentence order.
    pub clusters: Vec<Vec<usize>>,
}

fn doc_chunks(doc: &CandidateDoc) -> Result<Vec<String>> {
    let map = partition(&doc.html)?;
    let texts: Vec<String> = map
        .chunks
        .iter()
        .map(|c| extract_text(&c.html).replace('\n', " "))
        .collect();
    if texts.is_empty() {
        Ok(vec![extract_text(&doc.html).replace('\n', " ")])
    } else {
        Ok(texts)
    }
}

fn chunk_listing(chunks: &[Vec<String>]) -> String {
    let mut out = Vec::new();
    for (d, doc) in chunks.iter().enumerate() {
        for (c, text) in doc.iter().enumerate() {
            out.push(format!("[{d}-{c}] {text}"));
        }
    }
    out.join("\n")
}

fn parse_selection(raw: &str, chunks: &[Vec<String>]) -> Result<Vec<(usize, usize)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for cap in CHUNK_ID.captures_iter(raw) {
        let (d, c) = match (cap[1].parse::<usize>(), cap[2].parse::<usize>()) {
            (Ok(d), Ok(c)) => (d, c),
            _ => return Err(Error::SelectionFormat(format!("bad chunk id `{}`", &cap[0]))),
        };
        if chunks.get(d).is_none_or(|doc| c >= doc.len()) {
            return Err(Error::SelectionFormat(format!("chunk {d}-{c} does not exist")));
        }
        if seen.insert((d, c)) {
            out.push((d, c));
        }
    }
    if out.is_empty() {
        return Err(Error::SelectionFormat("no chunk ids in selection".into()));
    }
    Ok(out)
}

/// Passages with the given highlights marked; `mark` filters which
/// highlight indices are shown as highlighted.
fn highlighted_content(chunks: &[Vec<String>], selected: &[(usize, usize)], mark: &dyn Fn(usize) -> bool) -> String {
    let mut docs = Vec::new();
    for (d, doc) in chunks.iter().enumerate() {
        let parts: Vec<String> = doc
            .iter()
            .enumerate()
            .map(|(c, text)| match selected.iter().position(|&s| s == (d, c)) {
                Some(h) if mark(h) => format!("[{h}] {HIGHLIGHT_START}{text}{HIGHLIGHT_END}"),
                _ => text.clone(),
            })
            .collect();
        docs.push(format!("Document [{}]:\n{}", d + 1, parts.join("\n")));
    }
    docs.join("\n\n")
}

fn parse_clusters(raw: &str, n: usize) -> Option<Vec<Vec<usize>>> {
    let items = first_json_array(&strip_fences(raw))?;
    let mut used = BTreeSet::new();
    let mut clusters = Vec::new();
    for item in items {
        let members = match &item {
            Value::Object(o) => o.get("cluster")?.as_array()?.clone(),
            Value::Array(a) => a.clone(),
            _ => return None,
        };
        let mut cluster = Vec::new();
        for m in members {
            let h = match &m {
                Value::Number(x) => x.as_u64()? as usize,
                Value::String(s) => s.trim().parse().ok()?,
                _ => return None,
            };
            if h >= n {
                return None;
            }
            if used.insert(h) {
                cluster.push(h);
            }
        }
        if !cluster.is_empty() {
            clusters.push(cluster);
        }
    }
    Some(clusters)
}

pub fn generate_attr_first(query: &str, candidates: &[CandidateDoc], llm: &dyn LlmClient) -> Result<GeneratedAnswer> {
    if candidates.is_empty() {
        return Err(Error::Retrieval("no candidates to generate from".into()));
    }
    let chunks = candidates.iter().map(doc_chunks).collect::<Result<Vec<_>>>()?;

    let user = render(
        prompts::ATTR_SELECT,
        &vars([("query", query.to_string()), ("chunks", chunk_listing(&chunks))]),
    )?;
    let raw = llm.complete(&ChatRequest::new("engine:select", "", user))?;
    let selected = parse_selection(&raw, &chunks)?;

    let mut warnings = Vec::new();
    let clusters = if selected.len() == 1 {
        vec![vec![0]]
    } else {
        let content = highlighted_content(&chunks, &selected, &|_| true);
        let user = render(
            prompts::ATTR_CLUSTER,
            &vars([("query", query.to_string()), ("content", content)]),
        )?;
        let req = ChatRequest::new("engine:cluster", "", user);
        let mut attempt = 0;
        loop {
            let raw = llm.complete(&req)?;
            match parse_clusters(&raw, selected.len()) {
                Some(c) if c.len() >= 2 => break c,
                _ if attempt == 0 => {
                    warnings.push("clustering returned fewer than two clusters; retrying".to_string());
                    attempt += 1;
                }
                _ => return Err(Error::Clustering("fewer than two clusters after retry".into())),
            }
        }
    };

    let mut sentences: Vec<Sentence> = Vec::new();
    for cluster in &clusters {
        let prefix = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        let content = highlighted_content(&chunks, &selected, &|h| cluster.contains(&h));
        let user = render(
            prompts::ATTR_GENERATE,
            &vars([("query", query.to_string()), ("content", content), ("prefix", prefix)]),
        )?;
        let raw = llm.complete(&ChatRequest::new("engine:generate", "", user))?;
        let text = super::parse_citations(&raw)
            .into_iter()
            .map(|s| s.text)
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            return Err(Error::GenerationFormat("empty sentence from generation stage".into()));
        }
        let citations = cluster.iter().map(|&h| selected[h].0 + 1).collect();
        sentences.push(Sentence { text, citations });
    }

    let full_text = sentences
        .iter()
        .map(|s| {
            let marks: String = s.citations.iter().map(|i| format!("[{i}]")).collect();
            format!("{}{marks}", s.text)
        })
        .collect::<Vec<_>>()
        .join(" ");
    Ok(GeneratedAnswer {
        full_text,
        sentences,
        mode: CitationMode::AttrFirst,
        warnings,
        trace: Some(AttrFirstTrace { selected, clusters }),
    })
}
