//! Whole-dataset runs: evaluate, optimize each page, evaluate again.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chunker::extract_text;
use crate::corpus::{Dataset, QueryRecord, Split, Webpage};
use crate::engine::{verify_citation, CandidateDoc, EngineConfig};
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::metrics::{faithfulness, Embedder, IdfTable};
use crate::optimizer::{optimize, pools_from_dataset, with_target, OptimizerConfig};
use crate::report::{summarize, OutcomeSummary, PageRun, QueryOutcome, RunRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    #[default]
    Test,
    All,
}

impl EvalSplit {
    fn admits(self, split: Split) -> bool {
        match self {
            EvalSplit::Train => split == Split::Train,
            EvalSplit::Test => split == Split::Test,
            EvalSplit::All => true,
        }
    }
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(Error::Config(format!("unknown evaluation split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub optimizer: OptimizerConfig,
    /// Skip optimization and only evaluate the original pages.
    pub optimize: bool,
    pub eval_split: EvalSplit,
    /// Use only the first n training queries of each page.
    pub train_size: Option<usize>,
    /// Restrict the run to these pages.
    pub pages: Option<Vec<String>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            optimizer: OptimizerConfig::default(),
            optimize: true,
            eval_split: EvalSplit::Test,
            train_size: None,
            pages: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    /// Optimized HTML by page id.
    pub optimized: BTreeMap<String, String>,
}

/// A run aborted by a fatal error; `output` holds everything finished before it.
#[derive(Debug)]
pub struct RunFailure {
    pub output: RunOutput,
    pub error: Error,
}

fn evaluate(
    queries: &[&QueryRecord],
    page_id: &str,
    html: &str,
    pools: &BTreeMap<String, Vec<CandidateDoc>>,
    engine: &EngineConfig,
    llm: &dyn LlmClient,
) -> Result<Vec<std::result::Result<OutcomeSummary, String>>> {
    let mut out = Vec::new();
    for q in queries {
        let pool = with_target(&pools[&q.id], page_id, html);
        let r =
            verify_citation(&q.id, &q.text, page_id, &pool, engine, llm).and_then(|o| OutcomeSummary::from_outcome(&o));
        match r {
            Ok(s) => out.push(Ok(s)),
            Err(e) if e.is_fatal() => return Err(e.at_stage("evaluate")),
            Err(e) => out.push(Err(e.to_string())),
        }
    }
    Ok(out)
}

fn selected_pages<'a>(dataset: &'a Dataset, options: &RunOptions) -> Result<Vec<&'a Webpage>> {
    match &options.pages {
        None => Ok(dataset.webpages.iter().collect()),
        Some(ids) => ids
            .iter()
            .map(|id| {
                dataset
                    .page(id)
                    .ok_or_else(|| Error::Config(format!("unknown page `{id}`")))
            })
            .collect(),
    }
}

/// Run the pipeline page by page. Pages are processed in dataset order.
pub fn run(
    dataset: &Dataset,
    options: &RunOptions,
    run_id: &str,
    llm: &dyn LlmClient,
    embedder: &dyn Embedder,
    threads: usize,
) -> std::result::Result<RunOutput, Box<RunFailure>> {
    let config = serde_json::to_value(options).expect("options serialize");
    let mut output = RunOutput {
        record: RunRecord::new(run_id, config),
        optimized: BTreeMap::new(),
    };
    let fail = |mut output: RunOutput, error: Error| {
        output.record.aborted = Some(error.to_string());
        output.record.metrics = Some(summarize(&output.record));
        Box::new(RunFailure { output, error })
    };
    let pages = match options
        .optimizer
        .validate()
        .and_then(|_| selected_pages(dataset, options))
    {
        Ok(p) => p,
        Err(e) => return Err(fail(output, e)),
    };
    let texts: Vec<String> = dataset.webpages.iter().map(|p| extract_text(&p.raw_html)).collect();
    let idf = IdfTable::new(texts.iter().map(String::as_str));
    let engine = options.optimizer.engine();

    for page in pages {
        let all = dataset.queries_for(&page.id);
        if all.is_empty() {
            continue;
        }
        let mut train: Vec<QueryRecord> = all.iter().filter(|q| q.split == Split::Train).cloned().collect();
        if let Some(n) = options.train_size {
            train.truncate(n);
        }
        let eval: Vec<&QueryRecord> = all.iter().filter(|q| options.eval_split.admits(q.split)).collect();
        let needed: Vec<QueryRecord> = train.iter().cloned().chain(eval.iter().map(|q| (*q).clone())).collect();
        let pools = match pools_from_dataset(dataset, &needed) {
            Ok(p) => p,
            Err(e) => return Err(fail(output, e)),
        };
        let mut page_run = PageRun {
            page_id: page.id.clone(),
            topic: page.topic.clone(),
            length: page.length_category(),
            optimized: None,
            report: None,
            faithfulness: None,
            error: None,
        };

        let before = match evaluate(&eval, &page.id, &page.raw_html, &pools, &engine, llm) {
            Ok(b) => b,
            Err(e) => return Err(fail(output, e)),
        };
        let mut outcomes: Vec<QueryOutcome> = eval
            .iter()
            .zip(before)
            .map(|(q, b)| QueryOutcome {
                query_id: q.id.clone(),
                page_id: page.id.clone(),
                split: q.split,
                error: b.as_ref().err().cloned(),
                before: b.ok(),
                after: None,
            })
            .collect();

        if options.optimize {
            let html = match optimize(page, &train, &pools, &options.optimizer, llm, threads) {
                Ok(done) => {
                    page_run.report = Some(done.report);
                    done.html
                }
                Err(partial) => {
                    let partial = *partial;
                    page_run.report = Some(partial.report);
                    output.record.pages.push(page_run);
                    output.record.outcomes.extend(outcomes);
                    return Err(fail(output, partial.error.at_stage("optimize")));
                }
            };
            let after = match evaluate(&eval, &page.id, &html, &pools, &engine, llm) {
                Ok(a) => a,
                Err(e) => {
                    output.record.pages.push(page_run);
                    output.record.outcomes.extend(outcomes);
                    return Err(fail(output, e));
                }
            };
            for (o, a) in outcomes.iter_mut().zip(after) {
                match a {
                    Ok(s) => o.after = Some(s),
                    Err(e) => o.error = Some(e),
                }
            }
            match faithfulness(&page.raw_html, &html, &idf, embedder) {
                Ok(f) => page_run.faithfulness = Some(f),
                Err(e) => page_run.error = Some(e.to_string()),
            }
            page_run.optimized = Some(format!("{}.html", page.id));
            output.optimized.insert(page.id.clone(), html);
        }
        output.record.pages.push(page_run);
        output.record.outcomes.extend(outcomes);
    }
    output.record.metrics = Some(summarize(&output.record));
    Ok(output)
}
