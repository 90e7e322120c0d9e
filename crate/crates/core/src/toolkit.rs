//! Repair tools: prompt-templated rewrites of a single chunk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::chunker::normalize_fragment;
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{placeholders, render, Vars};
use crate::text::strip_fences;

pub const SUMMARY_MARKER: &str = "---MODIFICATION_SUMMARY---";
pub const DEFAULT_PERSUASION_STRATEGY: &str = "authoritative_tone";
pub const DEFAULT_REDTEAM_STRATEGY: &str = "timeline_framing";

pub const PRESERVATION_RULES: &str = "PRESERVATION RULES:
- Keep every fact, figure, link and named entity already present in the target content.
- The context sections are read-only; do not repeat or edit them.
- Keep all previous modifications intact.";

pub const AGGRESSIVE_DIRECTIVE: &str = "AGGRESSIVE MODE: the page is being cut off before its main content. Wrap every non-essential element (menus, banners, share bars, related links, legal text) so that only the core content remains in <article>.";

/// Tool-argument keys the system fills in regardless of what the selector sent.
pub const INJECTED_ARGS: [&str; 5] = [
    "target_content",
    "context_before",
    "context_after",
    "core_idea",
    "previous_modifications",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    EntityInjection,
    DataSerialization,
    StructureOptimization,
    NoiseIsolation,
    BlufOptimization,
    ContentRelocation,
    IntentRealignment,
    PersuasiveRewriting,
    HistoricalRedteam,
    StaticRenderer,
}

impl ToolId {
    pub const ALL: [ToolId; 10] = [
        ToolId::EntityInjection,
        ToolId::DataSerialization,
        ToolId::StructureOptimization,
        ToolId::NoiseIsolation,
        ToolId::BlufOptimization,
        ToolId::ContentRelocation,
        ToolId::IntentRealignment,
        ToolId::PersuasiveRewriting,
        ToolId::HistoricalRedteam,
        ToolId::StaticRenderer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolId::EntityInjection => "entity_injection",
            ToolId::DataSerialization => "data_serialization",
            ToolId::StructureOptimization => "structure_optimization",
            ToolId::NoiseIsolation => "noise_isolation",
            ToolId::BlufOptimization => "bluf_optimization",
            ToolId::ContentRelocation => "content_relocation",
            ToolId::IntentRealignment => "intent_realignment",
            ToolId::PersuasiveRewriting => "persuasive_rewriting",
            ToolId::HistoricalRedteam => "historical_redteam",
            ToolId::StaticRenderer => "static_renderer",
        }
    }

    pub fn tag(self) -> String {
        format!("tool:{}", self.as_str())
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ToolId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown tool `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolCategory {
    InfoAugmentation,
    StructuralEnhancement,
    ContentPositioning,
    PersuasiveRefinement,
    Rendering,
}

#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub id: ToolId,
    pub category: ToolCategory,
    pub template: &'static str,
    pub required_args: BTreeSet<String>,
    pub description: &'static str,
}

const REDTEAM_VARIANTS: [(&str, &str); 5] = [
    ("timeline_framing", prompts::REDTEAM_TIMELINE_FRAMING),
    ("implicit_prompt", prompts::REDTEAM_IMPLICIT_PROMPT),
    ("comparative_analysis", prompts::REDTEAM_COMPARATIVE_ANALYSIS),
    ("completeness_emphasis", prompts::REDTEAM_COMPLETENESS_EMPHASIS),
    ("knowledge_anchoring", prompts::REDTEAM_KNOWLEDGE_ANCHORING),
];

static REGISTRY: LazyLock<Vec<ToolSpec>> = LazyLock::new(|| {
    use ToolCategory::*;
    use ToolId::*;
    let rows: [(ToolId, ToolCategory, &'static str, &'static str); 10] = [
        (
            EntityInjection,
            InfoAugmentation,
            prompts::TOOL_ENTITY_INJECTION,
            "Adds specific missing facts or entities into the chunk, marked with <strong>. Needs `missing_entities`.",
        ),
        (
            DataSerialization,
            InfoAugmentation,
            prompts::TOOL_DATA_SERIALIZATION,
            "Turns numbers and comparisons buried in prose into HTML tables or lists.",
        ),
        (
            StructureOptimization,
            StructuralEnhancement,
            prompts::TOOL_STRUCTURE_OPTIMIZATION,
            "Adds headings, lists and emphasis to a wall of text without changing its wording.",
        ),
        (
            NoiseIsolation,
            StructuralEnhancement,
            prompts::TOOL_NOISE_ISOLATION,
            "Wraps navigation, ads and footers in semantic noise containers and the real content in <article>.",
        ),
        (
            BlufOptimization,
            ContentPositioning,
            prompts::TOOL_BLUF_OPTIMIZATION,
            "Prepends a one-sentence summary box with the key takeaway. Needs `key_takeaway`.",
        ),
        (
            ContentRelocation,
            ContentPositioning,
            prompts::TOOL_CONTENT_RELOCATION,
            "Surfaces content hidden deep in the page as a short summary section at the top of the chunk. Needs `hidden_summary`.",
        ),
        (
            IntentRealignment,
            ContentPositioning,
            prompts::TOOL_INTENT_REALIGNMENT,
            "Rewrites the opening so it answers the query directly; unrelated details move to the end.",
        ),
        (
            PersuasiveRewriting,
            PersuasiveRefinement,
            prompts::TOOL_PERSUASIVE_REWRITING,
            "Rewrites with a persuasion strategy (`strategy`: authoritative_tone, counter_argument, emotional_hook, social_proof, scarcity_urgency, logical_structure).",
        ),
        (
            HistoricalRedteam,
            PersuasiveRefinement,
            prompts::REDTEAM_TIMELINE_FRAMING,
            "Reframes possibly outdated content against current knowledge (`strategy`: timeline_framing, implicit_prompt, comparative_analysis, completeness_emphasis, knowledge_anchoring). Needs `outdated_info`.",
        ),
        (
            StaticRenderer,
            Rendering,
            prompts::TOOL_STATIC_RENDERER,
            "Replaces script-dependent or broken markup with the static HTML it would render to.",
        ),
    ];
    rows.into_iter()
        .map(|(id, category, template, description)| ToolSpec {
            id,
            category,
            template,
            required_args: placeholders(template),
            description,
        })
        .collect()
});

pub fn registry() -> &'static [ToolSpec] {
    &REGISTRY
}

pub fn spec(id: ToolId) -> &'static ToolSpec {
    REGISTRY.iter().find(|s| s.id == id).expect("every tool is registered")
}

/// Numbered tool list for the selection prompt.
pub fn tool_descriptions(tools: &[ToolId]) -> String {
    tools
        .iter()
        .map(|&t| format!("- {t}: {}", spec(t).description))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolArgs {
    pub target_content: String,
    pub context_before: String,
    pub context_after: String,
    pub core_idea: String,
    /// Summaries of earlier successful changes on this trajectory.
    pub previous_modifications: Vec<String>,
    pub query: String,
    /// Tool-specific arguments such as `missing_entities` or `strategy`.
    pub extras: BTreeMap<String, String>,
    /// Stronger noise pruning for repeated truncation.
    pub aggressive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub content: String,
    pub summary: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn history_section(summaries: &[String]) -> String {
    if summaries.is_empty() {
        return String::new();
    }
    let list = summaries
        .iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n");
    prompts::HISTORY_SECTION
        .trim_end()
        .replace("{previous_modifications}", &list)
}

pub fn context_section(before: &str, after: &str) -> String {
    let mut parts = Vec::new();
    if !before.trim().is_empty() {
        parts.push(format!(
            "=== CONTEXT BEFORE (READ ONLY) ===\n{}\n=== END CONTEXT BEFORE ===",
            before.trim()
        ));
    }
    if !after.trim().is_empty() {
        parts.push(format!(
            "=== CONTEXT AFTER (READ ONLY) ===\n{}\n=== END CONTEXT AFTER ===",
            after.trim()
        ));
    }
    parts.join("\n")
}

fn snake(title: &str) -> String {
    title
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Persuasion strategies listed in the persuasive_rewriting reference, keyed
/// by snake-cased title.
pub fn persuasion_strategies() -> &'static BTreeMap<String, String> {
    static STRATEGIES: LazyLock<BTreeMap<String, String>> = LazyLock::new(|| {
        let reference = prompts::TOOL_PERSUASIVE_REWRITING
            .split_once("STRATEGIES REFERENCE:")
            .map(|(_, r)| r)
            .unwrap_or_default();
        let mut out = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in reference.lines() {
            if let Some(title) = line.strip_prefix("- ").and_then(|l| l.strip_suffix(':')) {
                if let Some((k, body)) = current.take() {
                    out.insert(k, body.join("\n"));
                }
                current = Some((snake(title), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                if !line.trim().is_empty() {
                    body.push(line.trim());
                }
            }
        }
        if let Some((k, body)) = current {
            out.insert(k, body.join("\n"));
        }
        out
    });
    &STRATEGIES
}

pub fn redteam_strategies() -> impl Iterator<Item = &'static str> {
    REDTEAM_VARIANTS.iter().map(|(k, _)| *k)
}

fn template_for(spec: &ToolSpec, args: &ToolArgs) -> Result<&'static str> {
    if spec.id != ToolId::HistoricalRedteam {
        return Ok(spec.template);
    }
    let strategy = args
        .extras
        .get("strategy")
        .map(|s| snake(s))
        .unwrap_or_else(|| DEFAULT_REDTEAM_STRATEGY.to_string());
    REDTEAM_VARIANTS
        .iter()
        .find(|(k, _)| *k == strategy)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("unknown historical_redteam strategy `{strategy}`")))
}

pub fn render_prompt(spec: &ToolSpec, args: &ToolArgs) -> Result<String> {
    let template = template_for(spec, args)?;
    let mut v: Vars = args
        .extras
        .iter()
        .filter(|(_, val)| !val.trim().is_empty())
        .map(|(k, val)| (k.clone(), val.clone()))
        .collect();
    for k in INJECTED_ARGS {
        v.remove(k);
    }
    v.insert("target_content".into(), args.target_content.clone());
    v.insert("core_idea".into(), args.core_idea.clone());
    v.insert(
        "context_section".into(),
        context_section(&args.context_before, &args.context_after),
    );
    v.insert("history_section".into(), history_section(&args.previous_modifications));
    v.insert("preservation_rules".into(), PRESERVATION_RULES.into());
    v.insert("query".into(), args.query.clone());
    v.insert("user_query".into(), args.query.clone());
    v.insert("target_query".into(), args.query.clone());
    if spec.id == ToolId::PersuasiveRewriting {
        let strategy = args
            .extras
            .get("strategy")
            .map(|s| snake(s))
            .unwrap_or_else(|| DEFAULT_PERSUASION_STRATEGY.to_string());
        let instruction = persuasion_strategies()
            .get(&strategy)
            .ok_or_else(|| Error::Config(format!("unknown persuasion strategy `{strategy}`")))?;
        v.insert("strategy".into(), strategy.clone());
        v.insert("strategy_instruction".into(), instruction.clone());
    }
    let mut prompt = render(template, &v)?;
    if spec.id == ToolId::NoiseIsolation && args.aggressive {
        prompt.push_str("\n\n");
        prompt.push_str(AGGRESSIVE_DIRECTIVE);
    }
    Ok(prompt)
}

/// Split a tool response into content and change summary.
pub fn parse_tool_output(raw: &str) -> ToolResult {
    let mut warnings = Vec::new();
    let (content, tail) = match raw.lines().position(|l| l.trim() == SUMMARY_MARKER) {
        Some(i) => {
            let lines: Vec<&str> = raw.lines().collect();
            (lines[..i].join("\n"), Some(lines[i + 1..].to_vec()))
        }
        None => {
            if !raw.trim().is_empty() {
                let msg = "tool output has no modification summary".to_string();
                tracing::warn!("{msg}");
                warnings.push(msg);
            }
            (raw.to_string(), None)
        }
    };
    let summary = tail
        .unwrap_or_default()
        .into_iter()
        .filter_map(|l| l.trim().strip_prefix("- ").map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    ToolResult {
        content: strip_fences(&content).trim().to_string(),
        summary,
        warnings,
    }
}

pub fn invoke(spec: &ToolSpec, args: &ToolArgs, llm: &dyn LlmClient) -> Result<ToolResult> {
    let prompt = render_prompt(spec, args)?;
    let raw = llm.complete(&ChatRequest::new(spec.id.tag(), "", prompt))?;
    let result = parse_tool_output(&raw);
    if result.content.is_empty() {
        return Err(Error::ToolOutput(format!("{} returned no content", spec.id)));
    }
    Ok(result)
}

/// The chunk fragment after a tool result: BLUF boxes go in front of the
/// original content, every other tool replaces it.
pub fn apply_result(tool: ToolId, original: &str, result: &ToolResult) -> String {
    match tool {
        ToolId::BlufOptimization => normalize_fragment(&format!("{}\n{}", result.content, original)),
        _ => normalize_fragment(&result.content),
    }
}
