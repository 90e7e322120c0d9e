//! Batch optimization of one webpage over its training queries.

mod aggregate;
mod repair;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chunker::{apply_edits, partition, ChunkEdit};
use crate::corpus::{Dataset, QueryRecord, Webpage};
use crate::diagnosis::{RootCause, Severity};
use crate::engine::{verify_citation, CandidateDoc, CitationMode, EngineConfig};
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::policy::{PolicyConfig, PruneScope, RoutingTable};
use crate::toolkit::ToolId;

pub use aggregate::{aggregate, AggregatedEdit, ConflictStrategy};
pub use repair::{repair_loop, IterationLog, RepairOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub citation_mode: CitationMode,
    pub retrieval_k: usize,
    pub source_char_limit: Option<usize>,
    pub memory_enabled: bool,
    pub prune_scope: PruneScope,
    pub conflict_strategy: ConflictStrategy,
    pub seed: u64,
    pub routing: RoutingTable,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            batch_size: 5,
            max_iterations: 5,
            citation_mode: CitationMode::InContext,
            retrieval_k: crate::engine::DEFAULT_K,
            source_char_limit: None,
            memory_enabled: true,
            prune_scope: PruneScope::Trajectory,
            conflict_strategy: ConflictStrategy::DiagnosisAware,
            seed: 0,
            routing: RoutingTable::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            k: self.retrieval_k,
            mode: self.citation_mode,
            source_char_limit: self.source_char_limit,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            memory_enabled: self.memory_enabled,
            prune_scope: self.prune_scope,
            routing: self.routing.clone(),
        }
    }
}

/// A successful repair, expressed against the batch's frozen chunk map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSuggestion {
    pub query_id: String,
    /// Position of the query in the training list.
    pub ordinal: usize,
    pub root_cause: RootCause,
    pub severity: Severity,
    pub confidence: f64,
    pub tool: ToolId,
    pub target_chunk_index: usize,
    pub fragment_html: String,
    pub summary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub query_id: String,
    pub ordinal: usize,
    pub batch: usize,
    pub initially_cited: bool,
    pub iterations: Vec<IterationLog>,
    pub suggestion: Option<EditSuggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub index: usize,
    pub query_ids: Vec<String>,
    /// Hash of the page version the batch's chunk map was frozen on.
    pub source_hash: String,
    pub chunk_count: usize,
    pub suggestions: usize,
    pub edits: Vec<AggregatedEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub page_id: String,
    pub batches: Vec<BatchLog>,
    pub queries: Vec<QueryLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl OptimizationReport {
    fn new(page_id: &str) -> Self {
        OptimizationReport {
            page_id: page_id.to_string(),
            batches: Vec::new(),
            queries: Vec::new(),
            aborted: None,
        }
    }

    /// Chunk edits applied over the whole run.
    pub fn edit_count(&self) -> usize {
        self.batches.iter().map(|b| b.edits.len()).sum()
    }

    pub fn initially_cited(&self) -> usize {
        self.queries.iter().filter(|q| q.initially_cited).count()
    }

    pub fn repaired(&self) -> usize {
        self.queries.iter().filter(|q| q.suggestion.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub html: String,
    pub report: OptimizationReport,
}

/// A run stopped by a fatal error. `html` is the page after the last
/// completed batch.
#[derive(Debug)]
pub struct PartialRun {
    pub html: String,
    pub report: OptimizationReport,
    pub error: Error,
}

/// Candidate pools of `queries` resolved against `dataset`.
pub fn pools_from_dataset(dataset: &Dataset, queries: &[QueryRecord]) -> Result<BTreeMap<String, Vec<CandidateDoc>>> {
    let mut out = BTreeMap::new();
    for q in queries {
        let ids = dataset
            .pool(&q.id)
            .ok_or_else(|| Error::Integrity(format!("query {} has no candidate pool", q.id)))?;
        let docs = ids
            .iter()
            .map(|id| {
                dataset
                    .page(id)
                    .map(CandidateDoc::from)
                    .ok_or_else(|| Error::Integrity(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(q.id.clone(), docs);
    }
    Ok(out)
}

/// Pool with the target's HTML replaced by `html`.
pub fn with_target(pool: &[CandidateDoc], target_id: &str, html: &str) -> Vec<CandidateDoc> {
    pool.iter()
        .map(|d| {
            if d.id == target_id {
                CandidateDoc::new(&d.id, html)
            } else {
                d.clone()
            }
        })
        .collect()
}

/// Shared, read-only inputs of one batch's repair loops.
pub struct BatchContext<'a> {
    pub page: &'a Webpage,
    pub base_html: &'a str,
    pub map: &'a crate::chunker::ChunkMap,
    pub config: &'a OptimizerConfig,
    pub policy: PolicyConfig,
    pub page_pruned: &'a BTreeSet<ToolId>,
    pub llm: &'a dyn LlmClient,
}

/// Optimize `page` against its training queries, batch by batch.
///
/// Repair loops of a batch run on a pool of `threads` workers; results do
/// not depend on the pool size.
pub fn optimize(
    page: &Webpage,
    train: &[QueryRecord],
    pools: &BTreeMap<String, Vec<CandidateDoc>>,
    config: &OptimizerConfig,
    llm: &dyn LlmClient,
    threads: usize,
) -> std::result::Result<Optimized, Box<PartialRun>> {
    let mut report = OptimizationReport::new(&page.id);
    let mut html = page.raw_html.clone();
    let fail = |html: String, mut report: OptimizationReport, error: Error| {
        report.aborted = Some(error.to_string());
        Box::new(PartialRun { html, report, error })
    };

    let checked = config.validate().and_then(|_| {
        for q in train {
            let pool = pools
                .get(&q.id)
                .ok_or_else(|| Error::Config(format!("query {} has no candidate pool", q.id)))?;
            if !pool.iter().any(|d| d.id == page.id) {
                return Err(Error::Config(format!(
                    "pool of query {} does not contain page {}",
                    q.id, page.id
                )));
            }
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    });
    let workers = match checked {
        Ok(w) => w,
        Err(e) => return Err(fail(html, report, e)),
    };

    let engine = config.engine();
    let mut page_pruned = BTreeSet::new();
    for (b, batch) in train.chunks(config.batch_size).enumerate() {
        let map = match partition(&html) {
            Ok(m) => m,
            Err(e) => return Err(fail(html, report, e.at_stage("partition"))),
        };
        let ctx = BatchContext {
            page,
            base_html: &html,
            map: &map,
            config,
            policy: config.policy(),
            page_pruned: &page_pruned,
            llm,
        };
        let first_ordinal = b * config.batch_size;
        let results: Vec<Result<QueryLog>> = workers.install(|| {
            use rayon::prelude::*;
            batch
                .par_iter()
                .enumerate()
                .map(|(i, q)| run_query(&ctx, q, first_ordinal + i, b, &pools[&q.id], &engine))
                .collect()
        });

        let mut logs = Vec::new();
        for r in results {
            match r {
                Ok(log) => logs.push(log),
                Err(e) => {
                    report.queries.extend(logs);
                    return Err(fail(html, report, e));
                }
            }
        }
        let suggestions: Vec<EditSuggestion> = logs.iter().filter_map(|l| l.suggestion.clone()).collect();
        let edits = aggregate(&suggestions, config.conflict_strategy);
        if config.prune_scope == PruneScope::Webpage {
            for log in &logs {
                page_pruned.extend(repair::unstable_tools(&log.iterations));
            }
        }
        report.batches.push(BatchLog {
            index: b,
            query_ids: batch.iter().map(|q| q.id.clone()).collect(),
            source_hash: map.source_hash.clone(),
            chunk_count: map.len(),
            suggestions: suggestions.len(),
            edits: edits.clone(),
        });
        report.queries.extend(logs);
        if !edits.is_empty() {
            let chunk_edits: Vec<ChunkEdit> = edits.into_iter().map(|e| e.edit).collect();
            html = match apply_edits(&html, &map, &chunk_edits) {
                Ok(h) => h,
                Err(e) => return Err(fail(html, report, e.at_stage("apply_edits"))),
            };
        }
    }
    Ok(Optimized { html, report })
}

fn run_query(
    ctx: &BatchContext<'_>,
    q: &QueryRecord,
    ordinal: usize,
    batch: usize,
    pool: &[CandidateDoc],
    engine: &EngineConfig,
) -> Result<QueryLog> {
    let current = with_target(pool, &ctx.page.id, ctx.base_html);
    let mut log = QueryLog {
        query_id: q.id.clone(),
        ordinal,
        batch,
        initially_cited: false,
        iterations: Vec::new(),
        suggestion: None,
        error: None,
    };
    let outcome = match verify_citation(&q.id, &q.text, &ctx.page.id, &current, engine, ctx.llm) {
        Ok(o) => o,
        Err(e) if e.is_fatal() => return Err(e.at_stage("verify")),
        Err(e) => {
            log.error = Some(format!("verify: {e}"));
            return Ok(log);
        }
    };
    if outcome.target_cited {
        log.initially_cited = true;
        return Ok(log);
    }
    let r = repair_loop(ctx, q, ordinal, &current, outcome)?;
    log.iterations = r.iterations;
    log.suggestion = r.suggestion;
    log.error = r.error;
    Ok(log)
}
