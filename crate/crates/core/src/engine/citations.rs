//! Sentence segmentation and inline citation markers.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*\d+(?:\s*,\s*\d+)*\s*\]").expect("marker regex"));
static MARKER_AT_START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[\s*\d+(?:\s*,\s*\d+)*\s*\]").expect("marker regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    /// 1-based source indices.
    pub citations: BTreeSet<usize>,
}

/// Split `text` into sentences and collect their citation markers.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace, a marker or
/// the end of the line; markers right after the punctuation belong to the
/// sentence they follow. Both `[1][2]` and `[1, 2]` are accepted.
pub fn parse_citations(text: &str) -> Vec<Sentence> {
    let mut out: Vec<Sentence> = Vec::new();
    for line in text.lines() {
        for seg in segments(line) {
            let (stripped, cites) = strip_markers(seg);
            if stripped.is_empty() {
                if let Some(prev) = out.last_mut() {
                    prev.citations.extend(cites);
                }
                continue;
            }
            out.push(Sentence {
                text: stripped,
                citations: cites,
            });
        }
    }
    out
}

/// Text of sentences with markers removed, one per line.
pub fn stripped_text(sentences: &[Sentence]) -> String {
    sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
}

fn segments(line: &str) -> Vec<&str> {
    let mut segs = Vec::new();
    let bytes = line.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?') {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b'.' | b'!' | b'?') {
                j += 1;
            }
            let rest = &line[j..];
            let boundary = rest.is_empty()
                || rest.starts_with(char::is_whitespace)
                || MARKER_AT_START
                    .find(rest)
                    .is_some_and(|m| !m.as_str().starts_with(char::is_whitespace));
            if boundary {
                while let Some(m) = MARKER_AT_START.find(&line[j..]) {
                    j += m.end();
                }
                segs.push(&line[start..j]);
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if start < line.len() {
        segs.push(&line[start..]);
    }
    segs
}

fn strip_markers(seg: &str) -> (String, BTreeSet<usize>) {
    let mut cites = BTreeSet::new();
    let mut out = String::new();
    let mut last = 0;
    for m in MARKER.find_iter(seg) {
        out.push_str(seg[last..m.start()].trim_end());
        last = m.end();
        let inner = &m.as_str()[1..m.as_str().len() - 1];
        for n in inner.split(',') {
            if let Ok(n) = n.trim().parse::<usize>() {
                cites.insert(n);
            }
        }
    }
    out.push_str(&seg[last..]);
    let text = out.split_whitespace().collect::<Vec<_>>().join(" ");
    (text, cites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cites(text: &str) -> Vec<Vec<usize>> {
        parse_citations(text)
            .into_iter()
            .map(|s| s.citations.into_iter().collect())
            .collect()
    }

    #[test]
    fn adjacent_and_comma_forms() {
        assert_eq!(cites("A.[1][2] B.[2]"), vec![vec![1, 2], vec![2]]);
        assert_eq!(cites("X.[1, 3]"), vec![vec![1, 3]]);
        let s = parse_citations("A.[1][2] B.[2]");
        assert_eq!(s[0].text, "A.");
        assert_eq!(s[1].text, "B.");
    }

    #[test]
    fn no_citations() {
        let s = parse_citations("No citations here.");
        assert_eq!(s.len(), 1);
        assert!(s[0].citations.is_empty());
    }

    #[test]
    fn markers_before_punctuation() {
        let s = parse_citations("Water boils at 100C [1]. It freezes at 0C [2].");
        assert_eq!(s[0].text, "Water boils at 100C.");
        assert_eq!(
            cites("Water boils at 100C [1]. It freezes at 0C [2]."),
            vec![vec![1], vec![2]]
        );
    }

    #[test]
    fn decimals_do_not_split() {
        assert_eq!(parse_citations("Pi is 3.14 roughly.[1]").len(), 1);
    }

    #[test]
    fn marker_after_space_attaches_to_previous_sentence() {
        let s = parse_citations("First. [1] Second.");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].citations.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert!(s[1].citations.is_empty());
    }

    #[test]
    fn stripped_output_is_a_fixed_point() {
        let s = parse_citations("A.[1][2] B, c? [3]\nTail without stop [4]");
        let again = parse_citations(&stripped_text(&s));
        assert_eq!(
            again.iter().map(|x| &x.text).collect::<Vec<_>>(),
            s.iter().map(|x| &x.text).collect::<Vec<_>>()
        );
        assert!(again.iter().all(|x| x.citations.is_empty()));
    }
}
