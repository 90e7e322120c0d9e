//! Tool selection: diagnosis routing, trajectory-memory masks, escalation and
//! controller-backed chunk targeting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunker::{render_indexed, ChunkMap};
use crate::diagnosis::{Diagnosis, RootCause};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{render, vars};
use crate::text::{first_json_object, strip_fences};
use crate::toolkit::{tool_descriptions, ToolId, INJECTED_ARGS};

pub const MAX_TOOL_USES: usize = 3;
pub const STABILITY_FAILURES: usize = 2;
pub const DEFAULT_DECISION_CONFIDENCE: f64 = 0.5;

pub const FORMAT_INSTRUCTIONS: &str = "Respond with a single JSON object and nothing else:
{\"tool_name\": \"<one of the available tools>\", \"target_chunk_index\": <int>, \"tool_arguments\": {\"target_content\": \"\", \"context_before\": \"\", \"context_after\": \"\", \"core_idea\": \"\", \"previous_modifications\": \"\", \"<tool-specific argument>\": \"<value>\"}, \"confidence\": <number between 0 and 1>, \"reasoning\": \"<one sentence>\"}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    CitationAchieved,
    StillUncited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub iteration: usize,
    pub root_cause: RootCause,
    pub tool: ToolId,
    pub outcome: Outcome,
}

/// Per-query record of (diagnosis, tool, outcome) triples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMemory {
    pub entries: Vec<MemoryEntry>,
}

impl TrajectoryMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, root_cause: RootCause, tool: ToolId, outcome: Outcome) {
        let iteration = self.entries.len() + 1;
        self.entries.push(MemoryEntry {
            iteration,
            root_cause,
            tool,
            outcome,
        });
    }

    pub fn uses(&self, tool: ToolId) -> usize {
        self.entries.iter().filter(|e| e.tool == tool).count()
    }

    /// Failures of `tool` in an unbroken run at the end of the trajectory.
    pub fn consecutive_failures(&self, tool: ToolId) -> usize {
        self.entries
            .iter()
            .rev()
            .take_while(|e| e.tool == tool && e.outcome == Outcome::StillUncited)
            .count()
    }

    /// Whether the last use of `tool` under `cause` left `cause` in place.
    /// `current` is the diagnosis that followed the final entry.
    pub fn repeats_cause(&self, tool: ToolId, cause: RootCause, current: RootCause) -> bool {
        let Some(i) = self
            .entries
            .iter()
            .rposition(|e| e.tool == tool && e.root_cause == cause)
        else {
            return false;
        };
        if self.entries[i].outcome == Outcome::CitationAchieved {
            return false;
        }
        let after = self.entries.get(i + 1).map_or(current, |e| e.root_cause);
        after == cause
    }

    /// Tools whose trailing failures reached the stability threshold.
    pub fn unstable_tools(&self) -> BTreeSet<ToolId> {
        ToolId::ALL
            .into_iter()
            .filter(|&t| self.consecutive_failures(t) >= STABILITY_FAILURES)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mandatory: Option<ToolId>,
    pub candidates: Vec<ToolId>,
}

/// Root cause to tools. Causes absent from the table may use any tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoutingTable(pub BTreeMap<RootCause, Route>);

impl Default for RoutingTable {
    fn default() -> Self {
        use RootCause::*;
        use ToolId::*;
        let free = |c: &[ToolId]| Route {
            mandatory: None,
            candidates: c.to_vec(),
        };
        let forced = |t: ToolId| Route {
            mandatory: Some(t),
            candidates: vec![t],
        };
        let table = [
            (ParsingFailure, free(&[StaticRenderer])),
            (DataIntegrity, free(&[StaticRenderer])),
            (WebNoise, forced(NoiseIsolation)),
            (LowSignalRatio, free(&[NoiseIsolation])),
            (ContentTruncated, forced(ContentRelocation)),
            (MissingInfo, free(&[EntityInjection, DataSerialization])),
            (
                LowInfoDensity,
                free(&[EntityInjection, DataSerialization, StructureOptimization]),
            ),
            (StructuralWeakness, free(&[StructureOptimization])),
            (SemanticIrrelevance, free(&[IntentRealignment])),
            (AttributeMismatch, free(&[IntentRealignment])),
            (BuriedAnswer, free(&[BlufOptimization, ContentRelocation])),
            (NonFactualContent, free(&[PersuasiveRewriting])),
            (TrustCredibility, free(&[PersuasiveRewriting])),
            (OutdatedContent, free(&[HistoricalRedteam])),
        ];
        RoutingTable(table.into_iter().collect())
    }
}

impl RoutingTable {
    pub fn route(&self, cause: RootCause) -> Route {
        self.0.get(&cause).cloned().unwrap_or_else(|| Route {
            mandatory: None,
            candidates: ToolId::ALL.to_vec(),
        })
    }
}

/// Reach of stability pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    Trajectory,
    /// Also mask tools pruned on other trajectories of the same page in
    /// earlier batches.
    Webpage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub memory_enabled: bool,
    pub prune_scope: PruneScope,
    pub routing: RoutingTable,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            memory_enabled: true,
            prune_scope: PruneScope::Trajectory,
            routing: RoutingTable::default(),
        }
    }
}

/// Tools not masked by idempotency, budget or stability. `page_pruned` is
/// only consulted under [`PruneScope::Webpage`].
pub fn eligible_tools(
    memory: &TrajectoryMemory,
    cause: RootCause,
    config: &PolicyConfig,
    page_pruned: &BTreeSet<ToolId>,
) -> BTreeSet<ToolId> {
    if !config.memory_enabled {
        return ToolId::ALL.into_iter().collect();
    }
    ToolId::ALL
        .into_iter()
        .filter(|&t| !memory.repeats_cause(t, cause, cause))
        .filter(|&t| memory.uses(t) < MAX_TOOL_USES)
        .filter(|&t| memory.consecutive_failures(t) < STABILITY_FAILURES)
        .filter(|t| config.prune_scope == PruneScope::Trajectory || !page_pruned.contains(t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Escalation {
    pub tool: ToolId,
    pub aggressive: bool,
}

const REORGANIZING_TOOLS: [ToolId; 3] = [
    ToolId::StructureOptimization,
    ToolId::ContentRelocation,
    ToolId::NoiseIsolation,
];

/// Escalation override from the most recent memory entry.
pub fn escalate(memory: &TrajectoryMemory, cause: RootCause) -> Option<Escalation> {
    let last = memory.entries.last()?;
    if last.outcome != Outcome::StillUncited {
        return None;
    }
    if cause == RootCause::ContentTruncated && last.root_cause == RootCause::ContentTruncated {
        return Some(Escalation {
            tool: ToolId::NoiseIsolation,
            aggressive: true,
        });
    }
    if last.tool == ToolId::EntityInjection {
        return Some(Escalation {
            tool: ToolId::PersuasiveRewriting,
            aggressive: false,
        });
    }
    if last.root_cause == RootCause::BuriedAnswer && REORGANIZING_TOOLS.contains(&last.tool) {
        return Some(Escalation {
            tool: ToolId::BlufOptimization,
            aggressive: false,
        });
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Mandatory,
    Escalation,
    Controller,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub tool: ToolId,
    pub target_chunk_index: usize,
    /// Tool-specific arguments from the controller; injected keys removed.
    pub tool_arguments: BTreeMap<String, String>,
    pub confidence: f64,
    pub rationale: String,
    pub source: DecisionSource,
    pub aggressive: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn history_context(memory: &TrajectoryMemory) -> String {
    if memory.entries.is_empty() {
        return "none".into();
    }
    memory
        .entries
        .iter()
        .map(|e| {
            let result = match e.outcome {
                Outcome::CitationAchieved => "cited",
                Outcome::StillUncited => "still not cited",
            };
            format!("iteration {}: {} -> {} ({result})", e.iteration, e.root_cause, e.tool)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn policy_guidelines(cause: RootCause, forced: Option<ToolId>, allowed: &[ToolId]) -> String {
    let names = allowed.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ");
    match forced {
        Some(t) => format!("- {cause} requires {t}. Use it; only choose the chunk to modify."),
        None => format!("- For {cause}, choose among (in priority order): {names}.\n- Do not choose any other tool."),
    }
}

struct ControllerReply {
    tool: Option<String>,
    chunk: Option<i64>,
    arguments: BTreeMap<String, String>,
    confidence: f64,
    rationale: String,
}

fn parse_reply(raw: &str) -> Option<ControllerReply> {
    let obj = first_json_object(&strip_fences(raw))?;
    let tool = ["tool_name", "tool", "selected_tool"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(str::to_string);
    let chunk = match obj.get("target_chunk_index") {
        Some(Value::Number(n)) => n.as_i64(),
        Some(Value::String(s)) => s.trim().trim_start_matches("CHUNK").trim().parse().ok(),
        _ => None,
    };
    let mut arguments = BTreeMap::new();
    if let Some(Value::Object(args)) = obj.get("tool_arguments") {
        for (k, v) in args {
            if INJECTED_ARGS.contains(&k.as_str()) {
                continue;
            }
            let text = match v {
                Value::String(s) => s.clone(),
                Value::Bool(b) => b.to_string(),
                Value::Number(n) => n.to_string(),
                Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(", "),
                _ => continue,
            };
            arguments.insert(k.clone(), text);
        }
    }
    let confidence = obj
        .get("confidence")
        .and_then(Value::as_f64)
        .filter(|c| c.is_finite())
        .map_or(DEFAULT_DECISION_CONFIDENCE, |c| c.clamp(0.0, 1.0));
    let rationale = ["reasoning", "rationale"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_string();
    Some(ControllerReply {
        tool,
        chunk,
        arguments,
        confidence,
        rationale,
    })
}

/// Choose a tool and target chunk for one repair iteration.
pub fn select(
    diagnosis: &Diagnosis,
    memory: &TrajectoryMemory,
    map: &ChunkMap,
    query: &str,
    config: &PolicyConfig,
    page_pruned: &BTreeSet<ToolId>,
    llm: &dyn LlmClient,
) -> Result<PolicyDecision> {
    let cause = diagnosis.root_cause;
    let eligible = eligible_tools(memory, cause, config, page_pruned);
    if eligible.is_empty() {
        return Err(Error::PolicyExhausted);
    }
    if map.is_empty() {
        return Err(Error::Targeting("page has no chunks".into()));
    }
    let route = config.routing.route(cause);
    let mut allowed: Vec<ToolId> = route
        .candidates
        .iter()
        .copied()
        .filter(|t| eligible.contains(t))
        .collect();
    if allowed.is_empty() {
        allowed = ToolId::ALL.into_iter().filter(|t| eligible.contains(t)).collect();
    }

    let mut forced = None;
    if let Some(t) = route.mandatory.filter(|t| eligible.contains(t)) {
        forced = Some((t, DecisionSource::Mandatory, false));
    } else if config.memory_enabled {
        if let Some(e) = escalate(memory, cause).filter(|e| eligible.contains(&e.tool)) {
            forced = Some((e.tool, DecisionSource::Escalation, e.aggressive));
        }
    }

    let shown: Vec<ToolId> = match forced {
        Some((t, _, _)) => vec![t],
        None => allowed.clone(),
    };
    let user = render(
        prompts::TOOL_SELECTION,
        &vars([
            ("query", query.to_string()),
            ("diagnosis_cause", cause.to_string()),
            ("diagnosis_explanation", diagnosis.explanation.clone()),
            ("history_context", history_context(memory)),
            (
                "policy_guidelines",
                policy_guidelines(cause, forced.map(|f| f.0), &allowed),
            ),
            ("target_content", render_indexed(map)),
            ("tool_descriptions", tool_descriptions(&shown)),
            ("format_instructions", FORMAT_INSTRUCTIONS.to_string()),
        ]),
    )?;

    let mut warnings = Vec::new();
    let mut req = ChatRequest::new("policy", "", user.clone());
    let mut reply = None;
    for attempt in 0..2 {
        let parsed = parse_reply(&llm.complete(&req)?);
        let in_range = parsed
            .as_ref()
            .and_then(|r| r.chunk)
            .is_some_and(|i| i >= 0 && (i as usize) < map.len());
        if in_range {
            reply = parsed;
            break;
        }
        if attempt == 0 {
            let msg = "controller gave no valid target_chunk_index; asking again".to_string();
            tracing::warn!("{msg}");
            warnings.push(msg);
            req = ChatRequest::new(
                "policy",
                "",
                format!(
                    "{user}\n\nYour previous answer had no valid target_chunk_index. It must be an integer from 0 to {}.",
                    map.len() - 1
                ),
            );
        }
    }
    let reply = reply
        .ok_or_else(|| Error::Targeting(format!("no valid target_chunk_index in 0..{} after re-ask", map.len())))?;

    let (tool, source, aggressive) = match forced {
        Some(f) => f,
        None => match reply.tool.as_deref().map(str::parse::<ToolId>) {
            Some(Ok(t)) if allowed.contains(&t) => (t, DecisionSource::Controller, false),
            other => {
                let msg = match other {
                    Some(Ok(t)) => format!("controller chose ineligible tool {t}; using {}", allowed[0]),
                    _ => format!("controller gave no usable tool; using {}", allowed[0]),
                };
                tracing::warn!("{msg}");
                warnings.push(msg);
                (allowed[0], DecisionSource::Fallback, false)
            }
        },
    };

    Ok(PolicyDecision {
        tool,
        target_chunk_index: reply.chunk.expect("validated above") as usize,
        tool_arguments: reply.arguments,
        confidence: reply.confidence,
        rationale: reply.rationale,
        source,
        aggressive,
        warnings,
    })
}
