use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmClient};
use crate::error::{Error, Result};

/// One transcript entry. `match` is a substring of the user prompt, or a
/// regex when prefixed with `re:`. `tag`, when set, must equal the request tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl ScriptEntry {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: matcher.into(),
            response: response.into(),
            max_uses: None,
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn uses(mut self, n: usize) -> Self {
        self.max_uses = Some(n);
        self
    }
}

enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

struct State {
    uses: Vec<usize>,
    log: Vec<String>,
}

/// Deterministic adapter that answers from an ordered transcript.
pub struct ScriptedLlm {
    entries: Vec<(ScriptEntry, Matcher)>,
    strict: bool,
    state: Mutex<State>,
}

impl ScriptedLlm {
    pub fn new(entries: Vec<ScriptEntry>, strict: bool) -> Result<Self> {
        let compiled = entries
            .into_iter()
            .map(|e| {
                let m = match e.matcher.strip_prefix("re:") {
                    Some(pat) => Matcher::Regex(
                        Regex::new(pat).map_err(|err| Error::Config(format!("bad matcher regex: {err}")))?,
                    ),
                    None => Matcher::Substring(e.matcher.clone()),
                };
                Ok((e, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = compiled.len();
        Ok(ScriptedLlm {
            entries: compiled,
            strict,
            state: Mutex::new(State {
                uses: vec![0; n],
                log: Vec::new(),
            }),
        })
    }

    pub fn strict(entries: Vec<ScriptEntry>) -> Result<Self> {
        Self::new(entries, true)
    }

    pub fn from_json(json: &str, strict: bool) -> Result<Self> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("transcript: {e}")))?;
        Self::new(entries, strict)
    }

    pub fn from_file(path: impl AsRef<Path>, strict: bool) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json, strict)
    }

    /// Number of requests served so far.
    pub fn calls(&self) -> usize {
        self.state.lock().expect("scripted state").log.len()
    }

    /// Tags of all requests, in arrival order.
    pub fn tags(&self) -> Vec<String> {
        self.state.lock().expect("scripted state").log.clone()
    }

    pub fn calls_tagged(&self, prefix: &str) -> usize {
        self.state
            .lock()
            .expect("scripted state")
            .log
            .iter()
            .filter(|t| t.starts_with(prefix))
            .count()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let mut state = self.state.lock().expect("scripted state");
        state.log.push(req.tag.clone());
        for (i, (entry, matcher)) in self.entries.iter().enumerate() {
            if entry.max_uses.is_some_and(|m| state.uses[i] >= m) {
                continue;
            }
            if entry.tag.as_deref().is_some_and(|t| t != req.tag) {
                continue;
            }
            if matcher.is_match(&req.user) {
                state.uses[i] += 1;
                return Ok(entry.response.clone());
            }
        }
        if self.strict {
            Err(Error::UnmatchedPrompt { tag: req.tag.clone() })
        } else {
            Ok(String::new())
        }
    }
}
