//! Tolerant HTML tree builder and normalized serializer.
//!
//! The parser never fails on malformed markup: unclosed elements are closed
//! at the end of their parent, stray end tags are dropped, and a handful of
//! implicit-close rules (`p`, `li`, table rows and cells) mirror what browsers
//! do. Serialization is the canonical byte form for every "byte-identical"
//! guarantee in the chunker: lowercase tag names, attribute order preserved,
//! values double-quoted, no re-indentation.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attr {
    pub name: String,
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<Attr>,
    pub children: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
    Comment(String),
    Doctype(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub children: Vec<Node>,
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr",
];

const RAW_TEXT: &[&str] = &[
    "script", "style", "textarea", "title", "xmp", "iframe", "noembed", "noframes",
];

/// Start tags that implicitly close an open `<p>`.
const CLOSES_P: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "details",
    "div",
    "dl",
    "fieldset",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hr",
    "main",
    "menu",
    "nav",
    "ol",
    "p",
    "pre",
    "section",
    "table",
    "ul",
];

const SCOPE_BOUNDARY: &[&str] = &[
    "html", "body", "table", "td", "th", "caption", "button", "object", "marquee", "template",
];

pub fn is_void(name: &str) -> bool {
    VOID.contains(&name)
}

fn is_raw_text(name: &str) -> bool {
    RAW_TEXT.contains(&name)
}

impl Element {
    pub fn new(name: &str) -> Self {
        Element {
            name: name.to_string(),
            attrs: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|a| a.name == name)
            .and_then(|a| a.value.as_deref())
    }

    pub fn element_children(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(Node::as_element)
    }
}

impl Node {
    pub fn as_element(&self) -> Option<&Element> {
        match self {
            Node::Element(e) => Some(e),
            _ => None,
        }
    }
}

enum Token {
    Start {
        name: String,
        attrs: Vec<Attr>,
        self_closing: bool,
    },
    End(String),
    Text(String),
    Comment(String),
    Doctype(String),
}

struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
    raw_until: Option<String>,
}

impl<'a> Tokenizer<'a> {
    fn new(src: &'a str) -> Self {
        Tokenizer {
            src,
            pos: 0,
            raw_until: None,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn next_token(&mut self) -> Option<Token> {
        if self.pos >= self.src.len() {
            return None;
        }
        if let Some(name) = self.raw_until.take() {
            return Some(self.raw_text(&name));
        }
        let rest = self.rest();
        if let Some(after) = rest.strip_prefix('<') {
            if let Some(tok) = self.markup() {
                return Some(tok);
            }
            // A '<' that starts no construct is ordinary text. A broken tag
            // is escaped so it cannot turn into markup on reparse.
            let text_end = after.find('<').map(|i| i + 1).unwrap_or(rest.len());
            self.pos += text_end;
            if after.as_bytes().first().is_some_and(|c| c.is_ascii_alphabetic()) {
                return Some(Token::Text(format!("&lt;{}", &rest[1..text_end])));
            }
            return Some(Token::Text(rest[..text_end].to_string()));
        }
        let text_end = rest.find('<').unwrap_or(rest.len());
        self.pos += text_end;
        Some(Token::Text(rest[..text_end].to_string()))
    }

    fn raw_text(&mut self, name: &str) -> Token {
        let rest = self.rest();
        let lower = rest.to_ascii_lowercase();
        let needle = format!("</{name}");
        let mut search = 0;
        let end = loop {
            match lower[search..].find(&needle) {
                Some(i) => {
                    let at = search + i;
                    let after = lower.as_bytes().get(at + needle.len()).copied();
                    match after {
                        None | Some(b'>') | Some(b'/') => break at,
                        Some(c) if c.is_ascii_whitespace() => break at,
                        _ => search = at + needle.len(),
                    }
                }
                None => break rest.len(),
            }
        };
        self.pos += end;
        Token::Text(rest[..end].to_string())
    }

    fn markup(&mut self) -> Option<Token> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        if let Some(body) = rest.strip_prefix("<!--") {
            let (content, consumed) = match body.find("-->") {
                Some(i) => (&body[..i], 4 + i + 3),
                None => (body, rest.len()),
            };
            self.pos += consumed;
            return Some(Token::Comment(content.to_string()));
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            let (content, consumed) = match rest.find('>') {
                Some(i) => (&rest[2..i], i + 1),
                None => (&rest[2..], rest.len()),
            };
            self.pos += consumed;
            if rest.starts_with("<!") && content.to_ascii_lowercase().starts_with("doctype") {
                return Some(Token::Doctype(content.to_string()));
            }
            return Some(Token::Comment(content.replace("--", "- -")));
        }
        if let Some(after) = rest.strip_prefix("</") {
            if !bytes.get(2).is_some_and(|c| c.is_ascii_alphabetic()) {
                return None;
            }
            let name_end = after
                .find(|c: char| c.is_ascii_whitespace() || c == '/' || c == '>')
                .map(|i| i + 2)
                .unwrap_or(rest.len());
            let name = rest[2..name_end].to_ascii_lowercase();
            let consumed = match rest[name_end..].find('>') {
                Some(i) => name_end + i + 1,
                None => rest.len(),
            };
            self.pos += consumed;
            return Some(Token::End(name));
        }
        if !bytes.get(1).is_some_and(|c| c.is_ascii_alphabetic()) {
            return None;
        }
        self.start_tag()
    }

    fn start_tag(&mut self) -> Option<Token> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut i = 1;
        while i < bytes.len() && !is_tag_delim(bytes[i]) {
            i += 1;
        }
        let name = rest[1..i].to_ascii_lowercase();
        let mut attrs = Vec::new();
        let mut self_closing = false;
        loop {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i >= bytes.len() {
                return self.unterminated();
            }
            match bytes[i] {
                b'>' => {
                    i += 1;
                    break;
                }
                b'/' => {
                    if bytes.get(i + 1) == Some(&b'>') {
                        self_closing = true;
                        i += 2;
                        break;
                    }
                    i += 1;
                    continue;
                }
                _ => {}
            }
            let name_start = i;
            if bytes[i] == b'=' {
                i += 1;
            }
            while i < bytes.len() && !is_tag_delim(bytes[i]) && bytes[i] != b'=' {
                i += 1;
            }
            let attr_name = rest[name_start..i].to_ascii_lowercase();
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'=' {
                j += 1;
                while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                    j += 1;
                }
                if j >= bytes.len() {
                    return self.unterminated();
                }
                let value = match bytes[j] {
                    q @ (b'"' | b'\'') => {
                        let close = rest[j + 1..].find(q as char)?;
                        let v = &rest[j + 1..j + 1 + close];
                        j += close + 2;
                        v
                    }
                    _ => {
                        let start = j;
                        while j < bytes.len() && !bytes[j].is_ascii_whitespace() && bytes[j] != b'>' {
                            j += 1;
                        }
                        &rest[start..j]
                    }
                };
                attrs.push(Attr {
                    name: attr_name,
                    value: Some(value.to_string()),
                });
                i = j;
            } else {
                attrs.push(Attr {
                    name: attr_name,
                    value: None,
                });
            }
        }
        self.pos += i;
        if is_raw_text(&name) && !self_closing {
            self.raw_until = Some(name.clone());
        }
        Some(Token::Start {
            name,
            attrs,
            self_closing,
        })
    }

    /// A start tag running into end of input becomes escaped text so the
    /// repaired document reparses to the same tree.
    fn unterminated(&mut self) -> Option<Token> {
        let rest = self.rest();
        self.pos = self.src.len();
        Some(Token::Text(format!("&lt;{}", &rest[1..])))
    }
}

fn is_tag_delim(b: u8) -> bool {
    b.is_ascii_whitespace() || b == b'/' || b == b'>'
}

struct Builder {
    stack: Vec<Element>,
}

impl Builder {
    fn top(&mut self) -> &mut Element {
        self.stack.last_mut().expect("root is never popped")
    }

    fn append(&mut self, node: Node) {
        let top = self.top();
        if let Node::Text(t) = &node {
            if let Some(Node::Text(prev)) = top.children.last_mut() {
                prev.push_str(t);
                return;
            }
        }
        top.children.push(node);
    }

    fn pop(&mut self) {
        let el = self.stack.pop().expect("pop above root");
        self.top().children.push(Node::Element(el));
    }

    /// Search the open stack from the top for `targets`, stopping at any of
    /// `boundaries`. Returns the stack index of the match.
    fn find_open(&self, targets: &[&str], boundaries: &[&str]) -> Option<usize> {
        for (idx, el) in self.stack.iter().enumerate().skip(1).rev() {
            if targets.contains(&el.name.as_str()) {
                return Some(idx);
            }
            if boundaries.contains(&el.name.as_str()) {
                return None;
            }
        }
        None
    }

    fn close_to(&mut self, idx: usize) {
        while self.stack.len() > idx {
            self.pop();
        }
    }

    fn implicit_close(&mut self, name: &str) {
        if CLOSES_P.contains(&name) {
            if let Some(idx) = self.find_open(&["p"], SCOPE_BOUNDARY) {
                self.close_to(idx);
            }
        }
        let rule: Option<(&[&str], &[&str])> = match name {
            "li" => Some((&["li"], &["ul", "ol", "menu", "table", "td", "th"])),
            "dt" | "dd" => Some((&["dt", "dd"], &["dl", "table", "td", "th"])),
            "tr" => Some((&["tr", "td", "th"], &["table", "tbody", "thead", "tfoot"])),
            "td" | "th" => Some((&["td", "th"], &["tr", "table"])),
            "tbody" | "thead" | "tfoot" => Some((&["tbody", "thead", "tfoot", "tr", "td", "th"], &["table"])),
            "option" => Some((&["option"], &["select", "datalist"])),
            _ => None,
        };
        if let Some((targets, bounds)) = rule {
            if let Some(idx) = self.find_open(targets, bounds) {
                self.close_to(idx);
            }
        }
    }
}

/// Parse an HTML document or fragment. Never fails; malformed markup is repaired.
pub fn parse(src: &str) -> Document {
    let mut tokenizer = Tokenizer::new(src);
    let mut builder = Builder {
        stack: vec![Element::new("#root")],
    };
    while let Some(tok) = tokenizer.next_token() {
        match tok {
            Token::Text(t) => {
                if !t.is_empty() {
                    builder.append(Node::Text(t));
                }
            }
            Token::Comment(c) => builder.append(Node::Comment(c)),
            Token::Doctype(d) => builder.append(Node::Doctype(d)),
            Token::Start {
                name,
                attrs,
                self_closing,
            } => {
                builder.implicit_close(&name);
                let el = Element {
                    name,
                    attrs,
                    children: Vec::new(),
                };
                if is_void(&el.name) || self_closing {
                    builder.append(Node::Element(el));
                } else {
                    builder.stack.push(el);
                }
            }
            Token::End(name) => {
                if is_void(&name) {
                    continue;
                }
                if let Some(idx) = builder.find_open(&[name.as_str()], &[]) {
                    builder.close_to(idx);
                }
            }
        }
    }
    builder.close_to(1);
    let root = builder.stack.pop().expect("root");
    Document {
        children: root.children,
    }
}

/// Byte span of a node in the serialized output, with its children's spans.
#[derive(Debug, Clone, Default)]
pub struct SpanTree {
    pub range: Range<usize>,
    pub children: Vec<SpanTree>,
}

pub fn serialize(doc: &Document) -> String {
    serialize_nodes(&doc.children)
}

pub fn serialize_nodes(nodes: &[Node]) -> String {
    let mut out = String::new();
    for n in nodes {
        write_node(n, &mut out);
    }
    out
}

/// Serialize and record the byte span of every node.
pub fn serialize_with_spans(doc: &Document) -> (String, Vec<SpanTree>) {
    let mut out = String::new();
    let spans = doc.children.iter().map(|n| write_node_spans(n, &mut out)).collect();
    (out, spans)
}

fn write_open_tag(el: &Element, out: &mut String) {
    out.push('<');
    out.push_str(&el.name);
    for a in &el.attrs {
        out.push(' ');
        out.push_str(&a.name);
        if let Some(v) = &a.value {
            if v.contains('"') && !v.contains('\'') {
                out.push_str("='");
                out.push_str(v);
                out.push('\'');
            } else {
                out.push_str("=\"");
                out.push_str(&v.replace('"', "&quot;"));
                out.push('"');
            }
        }
    }
    out.push('>');
}

fn write_node(node: &Node, out: &mut String) {
    write_node_spans(node, out);
}

fn write_node_spans(node: &Node, out: &mut String) -> SpanTree {
    let start = out.len();
    let mut children = Vec::new();
    match node {
        Node::Text(t) => out.push_str(t),
        Node::Comment(c) => {
            out.push_str("<!--");
            out.push_str(c);
            out.push_str("-->");
        }
        Node::Doctype(d) => {
            out.push_str("<!");
            out.push_str(d);
            out.push('>');
        }
        Node::Element(el) => {
            write_open_tag(el, out);
            if !is_void(&el.name) {
                for c in &el.children {
                    children.push(write_node_spans(c, out));
                }
                out.push_str("</");
                out.push_str(&el.name);
                out.push('>');
            }
        }
    }
    SpanTree {
        range: start..out.len(),
        children,
    }
}

/// Canonical byte form of an HTML string.
pub fn normalize(src: &str) -> String {
    serialize(&parse(src))
}
