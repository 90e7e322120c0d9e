//! Single-pass `{name}` substitution.
//!
//! `{{` and `}}` render as literal braces. A `{` that does not open a
//! well-formed placeholder is copied through. Substituted values are never
//! rescanned, so argument text containing braces is inserted verbatim.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub type Vars = BTreeMap<String, String>;

enum Piece<'a> {
    Lit(&'a str),
    Var(&'a str),
}

fn scan(tpl: &str) -> Vec<Piece<'_>> {
    let bytes = tpl.as_bytes();
    let mut pieces = Vec::new();
    let mut lit_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Lit(&tpl[lit_start..i + 1]));
                i += 2;
                lit_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Lit(&tpl[lit_start..i + 1]));
                i += 2;
                lit_start = i;
            }
            b'{' => match ident_len(&bytes[i + 1..]) {
                Some(n) if bytes.get(i + 1 + n) == Some(&b'}') => {
                    pieces.push(Piece::Lit(&tpl[lit_start..i]));
                    pieces.push(Piece::Var(&tpl[i + 1..i + 1 + n]));
                    i += n + 2;
                    lit_start = i;
                }
                _ => i += 1,
            },
            _ => i += 1,
        }
    }
    pieces.push(Piece::Lit(&tpl[lit_start..]));
    pieces
}

fn ident_len(b: &[u8]) -> Option<usize> {
    let first = *b.first()?;
    if !(first.is_ascii_alphabetic() || first == b'_') {
        return None;
    }
    Some(
        b.iter()
            .take_while(|c| c.is_ascii_alphanumeric() || **c == b'_')
            .count(),
    )
}

/// Names of all placeholders in a template.
pub fn placeholders(tpl: &str) -> BTreeSet<String> {
    scan(tpl)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Var(v) => Some(v.to_string()),
            Piece::Lit(_) => None,
        })
        .collect()
}

pub fn render(tpl: &str, vars: &Vars) -> Result<String> {
    let mut out = String::with_capacity(tpl.len());
    for piece in scan(tpl) {
        match piece {
            Piece::Lit(s) => out.push_str(s),
            Piece::Var(name) => match vars.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(Error::Template(name.to_string())),
            },
        }
    }
    Ok(out)
}

/// Build a [`Vars`] map from `(name, value)` pairs.
pub fn vars<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Vars {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}
