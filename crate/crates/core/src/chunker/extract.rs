//! Visible-text extraction.

use super::dom::{self, Element, Node};

const SKIP: &[&str] = &["script", "style", "noscript", "template", "head", "title"];

/// Elements whose boundaries become line breaks.
const BREAKS: &[&str] = &[
    "p",
    "div",
    "section",
    "article",
    "aside",
    "header",
    "footer",
    "nav",
    "main",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "ul",
    "ol",
    "li",
    "dl",
    "dt",
    "dd",
    "table",
    "thead",
    "tbody",
    "tfoot",
    "tr",
    "caption",
    "pre",
    "blockquote",
    "figure",
    "figcaption",
    "form",
    "fieldset",
    "details",
    "summary",
    "address",
    "br",
    "hr",
    "body",
    "html",
];

const CELLS: &[&str] = &["td", "th"];

/// Plain text of an HTML document or fragment: scripts and styles dropped,
/// tags stripped, whitespace collapsed, block boundaries as newlines.
pub fn extract_text(html: &str) -> String {
    let doc = dom::parse(html);
    let mut raw = String::new();
    walk(&doc.children, &mut raw);
    finish(&raw)
}

pub(crate) fn element_text(el: &Element) -> String {
    let mut raw = String::new();
    walk_element(el, &mut raw);
    finish(&raw)
}

/// Content of the first `<title>` element, whitespace-collapsed.
pub fn extract_title(html: &str) -> String {
    fn find(nodes: &[Node]) -> Option<&Element> {
        nodes.iter().find_map(|n| match n {
            Node::Element(e) if e.name == "title" => Some(e),
            Node::Element(e) => find(&e.children),
            _ => None,
        })
    }
    let doc = dom::parse(html);
    let Some(title) = find(&doc.children) else {
        return String::new();
    };
    let text: String = title
        .children
        .iter()
        .filter_map(|n| match n {
            Node::Text(t) => Some(t.as_str()),
            _ => None,
        })
        .collect();
    collapse(&html_escape::decode_html_entities(&text))
}

fn walk(nodes: &[Node], out: &mut String) {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(&html_escape::decode_html_entities(t)),
            Node::Element(el) => walk_element(el, out),
            _ => {}
        }
    }
}

fn walk_element(el: &Element, out: &mut String) {
    let name = el.name.as_str();
    if SKIP.contains(&name) {
        return;
    }
    let sep = if BREAKS.contains(&name) {
        Some('\n')
    } else if CELLS.contains(&name) {
        Some(' ')
    } else {
        None
    };
    out.extend(sep);
    walk(&el.children, out);
    out.extend(sep);
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn finish(raw: &str) -> String {
    raw.split('\n')
        .map(collapse)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}
