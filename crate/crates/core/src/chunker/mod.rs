//! Structure-aware chunking of HTML pages.
//!
//! A [`ChunkMap`] freezes the partition of a page: every edit produced during
//! optimization is addressed by chunk index in that map and spliced back into
//! the normalized source by byte range, so untouched chunks and the wrapper
//! markup stay byte-identical.

pub mod dom;
mod extract;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use dom::{Document, Element, Node, SpanTree};

pub use extract::{extract_text, extract_title};

/// Chunks whose visible text is shorter than this are merged with the next
/// sibling chunk.
pub const MIN_CHUNK_CHARS: usize = 200;

const BLOCKS: &[&str] = &[
    "p",
    "div",
    "section",
    "article",
    "aside",
    "header",
    "footer",
    "nav",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "ul",
    "ol",
    "table",
    "pre",
    "blockquote",
    "main",
    "dl",
    "figure",
    "form",
    "details",
    "fieldset",
    "address",
];

/// Blocks that are split into their block children when they only wrap blocks.
const CONTAINERS: &[&str] = &[
    "div", "section", "article", "aside", "header", "footer", "nav", "main", "form", "figure", "details", "fieldset",
];

const INVISIBLE: &[&str] = &["script", "style", "noscript", "template", "head", "title"];

/// Path of element-child ordinals from the document root.
pub type Locator = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    /// Locator of the first element in the chunk.
    pub locator: Locator,
    /// Number of sibling elements covered, starting at `locator`.
    pub span: usize,
    pub html: String,
    pub text_len: usize,
    /// Byte range of the chunk in the normalized source.
    pub byte_range: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMap {
    pub source_hash: String,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkEdit {
    pub chunk_index: usize,
    pub new_html: String,
}

impl ChunkMap {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Chunk> {
        self.chunks.get(index)
    }
}

pub fn source_hash(normalized: &str) -> String {
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

/// A unit before merging: one block element in some parent.
struct Unit {
    parent: Vec<usize>,
    locator: Locator,
    range: Range<usize>,
    text_len: usize,
}

/// Partition a page into structure-aware chunks.
pub fn partition(html: &str) -> Result<ChunkMap> {
    if html.contains('\0') {
        return Err(Error::Parse("input contains NUL bytes".into()));
    }
    let doc = dom::parse(html);
    let (normalized, spans) = dom::serialize_with_spans(&doc);
    let mut units = Vec::new();
    if let Some((container, node_path, locator, span)) = content_root(&doc, &spans) {
        collect_units(container, span, &node_path, &locator, &mut units);
    }

    let mut chunks: Vec<Chunk> = Vec::new();
    // (first unit widened to the group's range, element span)
    let mut group: Option<(Unit, usize)> = None;
    for unit in units {
        group = match group.take() {
            Some((first, span)) if first.parent == unit.parent && first.text_len < MIN_CHUNK_CHARS => {
                let merged = Unit {
                    range: first.range.start..unit.range.end,
                    text_len: first.text_len + unit.text_len,
                    ..first
                };
                Some((merged, span + 1))
            }
            Some(done) => {
                push_chunk(&mut chunks, &normalized, done);
                Some((unit, 1))
            }
            None => Some((unit, 1)),
        };
    }
    if let Some(done) = group {
        push_chunk(&mut chunks, &normalized, done);
    }
    Ok(ChunkMap {
        source_hash: source_hash(&normalized),
        chunks,
    })
}

fn push_chunk(chunks: &mut Vec<Chunk>, normalized: &str, (unit, span): (Unit, usize)) {
    let html = normalized[unit.range.clone()].to_string();
    let text_len = extract_text(&html).chars().count();
    chunks.push(Chunk {
        index: chunks.len(),
        locator: unit.locator,
        span,
        html,
        text_len,
        byte_range: unit.range,
    });
}

/// The node list whose block children are chunked: `<body>` if present, else
/// the `<html>` element, else the document root.
type ContentRoot<'a> = (&'a [Node], Vec<usize>, Locator, &'a [SpanTree]);

fn content_root<'a>(doc: &'a Document, spans: &'a [SpanTree]) -> Option<ContentRoot<'a>> {
    let html_idx = doc
        .children
        .iter()
        .position(|n| n.as_element().is_some_and(|e| e.name == "html"));
    let Some(hi) = html_idx else {
        if let Some((bi, ord)) = find_child(&doc.children, "body") {
            return Some((element_at(&doc.children, bi), vec![bi], vec![ord], &spans[bi].children));
        }
        return Some((&doc.children, vec![], vec![], spans));
    };
    let html_el = doc.children[hi].as_element()?;
    let html_ord = element_ordinal(&doc.children, hi);
    if let Some((bi, ord)) = find_child(&html_el.children, "body") {
        let body = element_at(&html_el.children, bi);
        return Some((
            body,
            vec![hi, bi],
            vec![html_ord, ord],
            &spans[hi].children[bi].children,
        ));
    }
    Some((&html_el.children, vec![hi], vec![html_ord], &spans[hi].children))
}

fn find_child(nodes: &[Node], name: &str) -> Option<(usize, usize)> {
    let idx = nodes
        .iter()
        .position(|n| n.as_element().is_some_and(|e| e.name == name))?;
    Some((idx, element_ordinal(nodes, idx)))
}

fn element_at(nodes: &[Node], idx: usize) -> &[Node] {
    match &nodes[idx] {
        Node::Element(e) => &e.children,
        _ => &[],
    }
}

fn element_ordinal(nodes: &[Node], idx: usize) -> usize {
    nodes[..idx].iter().filter(|n| n.as_element().is_some()).count()
}

fn is_block(el: &Element) -> bool {
    BLOCKS.contains(&el.name.as_str())
}

/// Text or inline content sitting directly in a container, outside any block.
fn has_loose_content(nodes: &[Node]) -> bool {
    nodes.iter().any(|n| match n {
        Node::Text(t) => !t.trim().is_empty(),
        Node::Element(e) => {
            !is_block(e)
                && !INVISIBLE.contains(&e.name.as_str())
                && !(has_block_descendant(e) && !has_loose_content(&e.children))
                && !extract::element_text(e).trim().is_empty()
        }
        _ => false,
    })
}

fn has_block_descendant(el: &Element) -> bool {
    el.element_children().any(|c| is_block(c) || has_block_descendant(c))
}

fn collect_units(nodes: &[Node], spans: &[SpanTree], parent: &[usize], parent_locator: &[usize], out: &mut Vec<Unit>) {
    let mut ordinal = 0;
    for (i, node) in nodes.iter().enumerate() {
        let Node::Element(el) = node else { continue };
        let mut locator = parent_locator.to_vec();
        locator.push(ordinal);
        ordinal += 1;
        if INVISIBLE.contains(&el.name.as_str()) {
            continue;
        }
        let splittable = if is_block(el) {
            CONTAINERS.contains(&el.name.as_str())
        } else {
            true
        };
        let descend = splittable && has_block_descendant(el) && !has_loose_content(&el.children);
        let mut path = parent.to_vec();
        path.push(i);
        if descend {
            collect_units(&el.children, &spans[i].children, &path, &locator, out);
        } else if is_block(el) {
            out.push(Unit {
                parent: parent.to_vec(),
                locator,
                range: spans[i].range.clone(),
                text_len: extract::element_text(el).chars().count(),
            });
        }
    }
}

/// Resolve a locator against a parsed document.
pub fn resolve<'a>(doc: &'a Document, locator: &[usize]) -> Option<&'a Element> {
    let (first, rest) = locator.split_first()?;
    let mut el = doc.children.iter().filter_map(Node::as_element).nth(*first)?;
    for ord in rest {
        el = el.element_children().nth(*ord)?;
    }
    Some(el)
}

/// Normalize an HTML fragment produced by a tool: repairs unbalanced tags.
pub fn normalize_fragment(fragment: &str) -> String {
    dom::normalize(fragment.trim())
}

/// Splice chunk edits into a page. Untargeted chunks and wrapper markup keep
/// their normalized bytes.
pub fn apply_edits(html: &str, map: &ChunkMap, edits: &[ChunkEdit]) -> Result<String> {
    let normalized = dom::normalize(html);
    let found = source_hash(&normalized);
    if found != map.source_hash {
        return Err(Error::StaleMap {
            expected: map.source_hash.clone(),
            found,
        });
    }
    let mut by_index: BTreeMap<usize, &str> = BTreeMap::new();
    for e in edits {
        if e.chunk_index >= map.len() {
            return Err(Error::Range {
                index: e.chunk_index,
                len: map.len(),
            });
        }
        if by_index.insert(e.chunk_index, &e.new_html).is_some() {
            return Err(Error::Conflict(e.chunk_index));
        }
    }
    Ok(splice(&normalized, map, &by_index))
}

fn splice(normalized: &str, map: &ChunkMap, by_index: &BTreeMap<usize, &str>) -> String {
    let mut out = String::with_capacity(normalized.len());
    let mut cursor = 0;
    for (&idx, new_html) in by_index {
        let range = &map.chunks[idx].byte_range;
        out.push_str(&normalized[cursor..range.start]);
        out.push_str(new_html);
        cursor = range.end;
    }
    out.push_str(&normalized[cursor..]);
    out
}

/// Render the chunk map for prompt embedding: `[CHUNK i]` followed by the
/// chunk's visible text.
pub fn render_indexed(map: &ChunkMap) -> String {
    map.chunks
        .iter()
        .map(|c| format!("[CHUNK {}]\n{}", c.index, extract_text(&c.html)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// A working copy of a page whose edits are always addressed through the
/// frozen chunk map computed from its base.
#[derive(Debug, Clone)]
pub struct Surrogate {
    normalized: String,
    map: ChunkMap,
    overrides: BTreeMap<usize, String>,
}

impl Surrogate {
    pub fn new(base_html: &str, map: &ChunkMap) -> Result<Self> {
        let normalized = dom::normalize(base_html);
        let found = source_hash(&normalized);
        if found != map.source_hash {
            return Err(Error::StaleMap {
                expected: map.source_hash.clone(),
                found,
            });
        }
        Ok(Surrogate {
            normalized,
            map: map.clone(),
            overrides: BTreeMap::new(),
        })
    }

    pub fn map(&self) -> &ChunkMap {
        &self.map
    }

    /// Current fragment of chunk `index` (edited or original).
    pub fn fragment(&self, index: usize) -> Option<&str> {
        self.overrides
            .get(&index)
            .map(String::as_str)
            .or_else(|| self.map.get(index).map(|c| c.html.as_str()))
    }

    pub fn set_fragment(&mut self, index: usize, html: String) -> Result<()> {
        if index >= self.map.len() {
            return Err(Error::Range {
                index,
                len: self.map.len(),
            });
        }
        self.overrides.insert(index, html);
        Ok(())
    }

    pub fn edited_chunks(&self) -> impl Iterator<Item = usize> + '_ {
        self.overrides.keys().copied()
    }

    pub fn render(&self) -> String {
        let by_index = self.overrides.iter().map(|(k, v)| (*k, v.as_str())).collect();
        splice(&self.normalized, &self.map, &by_index)
    }

    /// Same-index view of the surrogate as a chunk map, for prompt rendering.
    pub fn current_map(&self) -> ChunkMap {
        let mut map = self.map.clone();
        for (idx, html) in &self.overrides {
            let chunk = &mut map.chunks[*idx];
            chunk.html = html.clone();
            chunk.text_len = extract_text(html).chars().count();
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(tag: &str, n: usize) -> String {
        format!("<{tag}>{}</{tag}>", "x".repeat(n))
    }

    #[test]
    fn single_paragraph_is_one_chunk() {
        let map = partition("<html><body><p>Hello</p></body></html>").unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.chunks[0].html, "<p>Hello</p>");
        assert_eq!(map.chunks[0].locator, vec![0, 0, 0]);
    }

    #[test]
    fn heading_paragraph_table_split_in_order() {
        let html = format!(
            "<html><body>{}{}<table><tr><td>{}</td></tr></table></body></html>",
            para("h2", 210),
            para("p", 400),
            "y".repeat(250)
        );
        let map = partition(&html).unwrap();
        assert_eq!(map.len(), 3);
        assert!(map.chunks[0].html.starts_with("<h2>"));
        assert!(map.chunks[1].html.starts_with("<p>"));
        assert!(map.chunks[2].html.starts_with("<table>"));
        assert_eq!(map.chunks.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn short_paragraphs_merge_forward() {
        let html = format!("<body>{}\n{}</body>", para("p", 50), para("p", 50));
        let map = partition(&html).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.chunks[0].span, 2);
        assert_eq!(map.chunks[0].text_len, 101);
    }

    #[test]
    fn short_chunk_merges_into_following_long_one() {
        let html = format!("<body>{}{}{}</body>", para("h2", 20), para("p", 300), para("p", 300));
        let map = partition(&html).unwrap();
        assert_eq!(map.len(), 2);
        assert!(map.chunks[0].html.starts_with("<h2>"));
        assert!(map.chunks[0].html.ends_with("</p>"));
    }

    #[test]
    fn wrapper_divs_are_descended() {
        let html = format!(
            "<body><div id=\"wrap\"><main>{}{}</main></div></body>",
            para("p", 250),
            para("p", 250)
        );
        let map = partition(&html).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.chunks[1].locator, vec![0, 0, 0, 1]);
    }

    #[test]
    fn mixed_container_is_one_chunk() {
        let html = format!("<body><div>loose text {}</div></body>", para("p", 250));
        let map = partition(&html).unwrap();
        assert_eq!(map.len(), 1);
        assert!(map.chunks[0].html.starts_with("<div>"));
    }

    #[test]
    fn empty_body_gives_empty_map() {
        assert!(partition("<html><body></body></html>").unwrap().is_empty());
        assert!(partition("").unwrap().is_empty());
    }

    #[test]
    fn nul_bytes_are_a_parse_error() {
        assert!(matches!(partition("<p>\0</p>"), Err(Error::Parse(_))));
    }

    #[test]
    fn locators_resolve() {
        let html = format!(
            "<html><head><title>t</title></head><body><div>{}</div><ul><li>{}</li></ul></body></html>",
            para("p", 250),
            "z".repeat(250)
        );
        let map = partition(&html).unwrap();
        let doc = dom::parse(&html);
        for c in &map.chunks {
            let el = resolve(&doc, &c.locator).expect("resolves");
            assert!(c.html.starts_with(&format!("<{}", el.name)));
        }
    }

    #[test]
    fn apply_edits_identity_and_locality() {
        let html = format!(
            "<html><body>{}\n{}\n{}</body></html>",
            para("p", 250),
            para("p", 250),
            para("p", 250)
        );
        let map = partition(&html).unwrap();
        assert_eq!(apply_edits(&html, &map, &[]).unwrap(), dom::normalize(&html));
        let out = apply_edits(
            &html,
            &map,
            &[ChunkEdit {
                chunk_index: 1,
                new_html: para("p", 300),
            }],
        )
        .unwrap();
        let norm = dom::normalize(&html);
        let r = &map.chunks[1].byte_range;
        assert!(out.starts_with(&norm[..r.start]));
        assert!(out.ends_with(&norm[r.end..]));
        let after = partition(&out).unwrap();
        assert_eq!(after.chunks[0].html, map.chunks[0].html);
        assert_eq!(after.chunks[2].html, map.chunks[2].html);
        assert_eq!(after.chunks[1].html, para("p", 300));
    }

    #[test]
    fn apply_edits_errors() {
        let html = format!("<body>{}</body>", para("p", 250));
        let map = partition(&html).unwrap();
        let edit = |i: usize| ChunkEdit {
            chunk_index: i,
            new_html: "<p>a</p>".into(),
        };
        assert!(matches!(
            apply_edits(&html, &map, &[edit(0), edit(0)]),
            Err(Error::Conflict(0))
        ));
        assert!(matches!(
            apply_edits(&html, &map, &[edit(3)]),
            Err(Error::Range { index: 3, len: 1 })
        ));
        assert!(matches!(
            apply_edits("<body><p>other</p></body>", &map, &[]),
            Err(Error::StaleMap { .. })
        ));
    }

    #[test]
    fn render_indexed_format() {
        assert_eq!(render_indexed(&ChunkMap::default()), "");
        let html = format!("<body>{}{}{}</body>", para("p", 250), para("p", 250), para("p", 250));
        let out = render_indexed(&partition(&html).unwrap());
        assert!(out.starts_with("[CHUNK 0]\n"));
        for i in 0..3 {
            assert_eq!(out.matches(&format!("[CHUNK {i}]")).count(), 1);
        }
        assert!(out.find("[CHUNK 1]") < out.find("[CHUNK 2]"));
    }

    #[test]
    fn surrogate_edits_stay_in_frozen_index_space() {
        let html = format!("<body>{}{}{}</body>", para("p", 250), para("p", 250), para("p", 250));
        let map = partition(&html).unwrap();
        let mut s = Surrogate::new(&html, &map).unwrap();
        // Chunk 0 grows into several blocks; chunk 2 must still be index 2.
        s.set_fragment(0, "<h3>new</h3><p>a</p><p>b</p>".into()).unwrap();
        s.set_fragment(2, "<p>tail</p>".into()).unwrap();
        let out = s.render();
        assert!(out.ends_with("<p>tail</p></body>"));
        assert!(out.contains(&map.chunks[1].html));
        assert_eq!(s.fragment(1), Some(map.chunks[1].html.as_str()));
    }
}
