use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{with_target, BatchContext, EditSuggestion};
use crate::chunker::{extract_text, Surrogate};
use crate::corpus::QueryRecord;
use crate::diagnosis::{diagnose, select_competitor, Diagnosis};
use crate::engine::{verify_citation, CandidateDoc, CitationOutcome};
use crate::error::{Error, Result};
use crate::policy::{self, Outcome, PolicyDecision, TrajectoryMemory, STABILITY_FAILURES};
use crate::text::prefix_chars;
use crate::toolkit::{self, ToolArgs, ToolId};

/// Tool arguments filled from the diagnosis when the controller leaves them out.
const DIAGNOSIS_EXTRAS: [&str; 4] = ["missing_entities", "key_takeaway", "hidden_summary", "outdated_info"];

const CORE_IDEA_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub competitor_id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub competitor_fallback: bool,
    pub diagnosis: Option<Diagnosis>,
    pub decision: Option<PolicyDecision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_summary: Vec<String>,
    pub cited_after: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub iterations: Vec<IterationLog>,
    pub memory: TrajectoryMemory,
    pub suggestion: Option<EditSuggestion>,
    pub error: Option<String>,
}

/// Tools that ended a trajectory with two failures in a row.
pub(crate) fn unstable_tools(iterations: &[IterationLog]) -> BTreeSet<ToolId> {
    let mut out = BTreeSet::new();
    let mut run: Option<(ToolId, usize)> = None;
    for it in iterations {
        let Some(d) = &it.decision else { continue };
        if it.cited_after {
            run = None;
            continue;
        }
        run = match run {
            Some((t, n)) if t == d.tool => Some((t, n + 1)),
            _ => Some((d.tool, 1)),
        };
        if let Some((t, n)) = run {
            if n >= STABILITY_FAILURES {
                out.insert(t);
            }
        }
    }
    out
}

fn core_idea(ctx: &BatchContext<'_>) -> String {
    let title = ctx.page.title.trim();
    if !title.is_empty() {
        return title.to_string();
    }
    prefix_chars(&extract_text(ctx.base_html), CORE_IDEA_CHARS).replace('\n', " ")
}

fn tool_args(
    ctx: &BatchContext<'_>,
    surrogate: &Surrogate,
    query: &str,
    decision: &PolicyDecision,
    diagnosis: &Diagnosis,
    history: &[String],
) -> ToolArgs {
    let i = decision.target_chunk_index;
    let neighbour_text = |j: Option<usize>| {
        j.and_then(|j| surrogate.fragment(j))
            .map(extract_text)
            .unwrap_or_default()
    };
    let mut extras = decision.tool_arguments.clone();
    let required = &toolkit::spec(decision.tool).required_args;
    for key in DIAGNOSIS_EXTRAS {
        if !required.contains(key) && !(decision.tool == ToolId::HistoricalRedteam && key == "outdated_info") {
            continue;
        }
        if extras.get(key).is_some_and(|v| !v.trim().is_empty()) {
            continue;
        }
        let value = diagnosis
            .extras
            .get(key)
            .filter(|v| !v.trim().is_empty())
            .cloned()
            .unwrap_or_else(|| {
                if diagnosis.explanation.is_empty() {
                    query.to_string()
                } else {
                    diagnosis.explanation.clone()
                }
            });
        extras.insert(key.to_string(), value);
    }
    ToolArgs {
        target_content: surrogate.fragment(i).unwrap_or_default().to_string(),
        context_before: neighbour_text(i.checked_sub(1)),
        context_after: neighbour_text(Some(i + 1)),
        core_idea: core_idea(ctx),
        previous_modifications: history.to_vec(),
        query: query.to_string(),
        extras,
        aggressive: decision.aggressive,
    }
}

/// Diagnose, repair and re-verify one uncited query on a private surrogate
/// of the batch's base page, for at most `max_iterations` rounds.
pub fn repair_loop(
    ctx: &BatchContext<'_>,
    q: &QueryRecord,
    ordinal: usize,
    pool: &[CandidateDoc],
    initial: CitationOutcome,
) -> Result<RepairOutcome> {
    let mut surrogate = Surrogate::new(ctx.base_html, ctx.map)?;
    let mut memory = TrajectoryMemory::new();
    let mut history: Vec<String> = Vec::new();
    let mut iterations = Vec::new();
    let mut outcome = initial;
    let engine = ctx.config.engine();
    let page_id = &ctx.page.id;

    // Non-fatal errors end the trajectory; fatal ones abort the run.
    macro_rules! soft {
        ($expr:expr, $stage:literal, $log:ident) => {
            match $expr {
                Ok(v) => v,
                Err(e) if e.is_fatal() => return Err(e.at_stage($stage)),
                Err(e) => {
                    let msg = format!("{}: {e}", $stage);
                    $log.error = Some(msg.clone());
                    iterations.push($log);
                    return Ok(RepairOutcome {
                        iterations,
                        memory,
                        suggestion: None,
                        error: Some(msg),
                    });
                }
            }
        };
    }

    for t in 1..=ctx.config.max_iterations {
        let mut log = IterationLog {
            iteration: t,
            competitor_id: String::new(),
            competitor_fallback: false,
            diagnosis: None,
            decision: None,
            tool_summary: Vec::new(),
            cited_after: false,
            error: None,
        };
        let competitor = soft!(select_competitor(&outcome), "competitor", log);
        log.competitor_id = competitor.id.clone();
        log.competitor_fallback = competitor.fallback;
        let competitor_html = pool
            .iter()
            .find(|d| d.id == competitor.id)
            .map(|d| d.html.clone())
            .unwrap_or_default();

        let current_html = surrogate.render();
        let diagnosis = soft!(
            diagnose(&q.text, &current_html, &competitor.id, &competitor_html, ctx.llm),
            "diagnosis",
            log
        );
        log.diagnosis = Some(diagnosis.clone());

        let decision = soft!(
            policy::select(
                &diagnosis,
                &memory,
                &surrogate.current_map(),
                &q.text,
                &ctx.policy,
                ctx.page_pruned,
                ctx.llm,
            ),
            "policy",
            log
        );
        log.decision = Some(decision.clone());

        let args = tool_args(ctx, &surrogate, &q.text, &decision, &diagnosis, &history);
        let result = match toolkit::invoke(toolkit::spec(decision.tool), &args, ctx.llm) {
            Ok(r) => r,
            Err(e) if e.is_fatal() => return Err(e.at_stage("tool")),
            Err(e @ Error::ToolOutput(_)) => {
                log.error = Some(format!("tool: {e}"));
                memory.record(diagnosis.root_cause, decision.tool, Outcome::StillUncited);
                iterations.push(log);
                continue;
            }
            Err(e) => soft!(Err::<toolkit::ToolResult, _>(e), "tool", log),
        };
        log.tool_summary = result.summary.clone();
        let i = decision.target_chunk_index;
        let original = surrogate.fragment(i).unwrap_or_default().to_string();
        surrogate.set_fragment(i, toolkit::apply_result(decision.tool, &original, &result))?;

        let candidates = with_target(pool, page_id, &surrogate.render());
        outcome = soft!(
            verify_citation(&q.id, &q.text, page_id, &candidates, &engine, ctx.llm),
            "verify",
            log
        );
        if outcome.target_cited {
            log.cited_after = true;
            memory.record(diagnosis.root_cause, decision.tool, Outcome::CitationAchieved);
            iterations.push(log);
            let suggestion = EditSuggestion {
                query_id: q.id.clone(),
                ordinal,
                root_cause: diagnosis.root_cause,
                severity: diagnosis.severity,
                confidence: decision.confidence,
                tool: decision.tool,
                target_chunk_index: i,
                fragment_html: surrogate.fragment(i).unwrap_or_default().to_string(),
                summary: result.summary,
            };
            return Ok(RepairOutcome {
                iterations,
                memory,
                suggestion: Some(suggestion),
                error: None,
            });
        }
        memory.record(diagnosis.root_cause, decision.tool, Outcome::StillUncited);
        history.extend(result.summary);
        iterations.push(log);
    }
    Ok(RepairOutcome {
        iterations,
        memory,
        suggestion: None,
        error: None,
    })
}
