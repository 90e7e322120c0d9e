//! Run records and the summary tables derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{LengthCategory, Split};
use crate::diagnosis::{histogram, Category, CategoryMap, RootCause, TaxonomyHistogram};
use crate::engine::CitationOutcome;
use crate::error::Result;
use crate::metrics::{
    citation_rate, contribution, mean_contribution, mean_faithfulness, Contribution, Faithfulness, MetricReport,
};
use crate::optimizer::OptimizationReport;

pub const RUN_RECORD_VERSION: u32 = 1;

/// What one engine call said about the target page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub cited: bool,
    /// 1-based position of the target among the generator's sources.
    pub rank: Option<usize>,
    pub contribution: Option<Contribution>,
    pub cited_ids: Vec<String>,
}

impl OutcomeSummary {
    pub fn from_outcome(o: &CitationOutcome) -> Result<Self> {
        let rank = o.rank_of(&o.target_id);
        let contribution = match rank {
            Some(r) if o.target_cited => Some(contribution(&o.answer.sentences, r, o.ranked_candidates.len())?),
            _ => None,
        };
        Ok(OutcomeSummary {
            cited: o.target_cited,
            rank,
            contribution,
            cited_ids: o.cited_ids.iter().cloned().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub page_id: String,
    pub split: Split,
    pub before: Option<OutcomeSummary>,
    pub after: Option<OutcomeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRun {
    pub page_id: String,
    pub topic: String,
    pub length: LengthCategory,
    /// Path of the optimized HTML, relative to the output directory.
    pub optimized: Option<String>,
    pub report: Option<OptimizationReport>,
    pub faithfulness: Option<Faithfulness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub vanilla: MetricReport,
    pub optimized: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub run_id: String,
    pub config: serde_json::Value,
    pub pages: Vec<PageRun>,
    pub outcomes: Vec<QueryOutcome>,
    pub metrics: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, config: serde_json::Value) -> Self {
        RunRecord {
            version: RUN_RECORD_VERSION,
            run_id: run_id.into(),
            config,
            pages: Vec::new(),
            outcomes: Vec::new(),
            metrics: None,
            aborted: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| crate::Error::Format(format!("run record: {e}")))
    }
}

fn contribution_columns(summaries: &[&OutcomeSummary]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let per_query: Vec<Option<Contribution>> = summaries.iter().map(|s| s.contribution).collect();
    match mean_contribution(&per_query) {
        Some(c) => (Some(c.word), Some(c.pos), Some(c.wordpos)),
        None => (None, None, None),
    }
}

fn metric_row(summaries: &[&OutcomeSummary], faithfulness: Option<Faithfulness>) -> MetricReport {
    let cited: Vec<bool> = summaries.iter().map(|s| s.cited).collect();
    let (word, pos, wordpos) = contribution_columns(summaries);
    MetricReport {
        cr: citation_rate(&cited).ok(),
        word,
        pos,
        wordpos,
        tfidf: faithfulness.map(|f| f.tfidf),
        embed: faithfulness.map(|f| f.embed),
        jaccard: faithfulness.map(|f| f.jaccard),
    }
}

/// Metric rows for the original and, when evaluated, the optimized pages.
pub fn summarize(run: &RunRecord) -> MetricSummary {
    let before: Vec<&OutcomeSummary> = run.outcomes.iter().filter_map(|o| o.before.as_ref()).collect();
    let after: Vec<&OutcomeSummary> = run.outcomes.iter().filter_map(|o| o.after.as_ref()).collect();
    let faith: Vec<Faithfulness> = run.pages.iter().filter_map(|p| p.faithfulness).collect();
    MetricSummary {
        vanilla: metric_row(&before, None),
        optimized: (!after.is_empty()).then(|| metric_row(&after, mean_faithfulness(&faith))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub key: String,
    pub queries: usize,
    pub cr_before: Option<f64>,
    pub cr_after: Option<f64>,
}

impl BreakdownRow {
    pub fn improvement(&self) -> Option<f64> {
        Some(self.cr_after? - self.cr_before?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub overall: Option<BreakdownRow>,
    pub by_topic: Vec<BreakdownRow>,
    pub by_length: Vec<BreakdownRow>,
    pub taxonomy: TaxonomyHistogram,
    pub metrics: MetricSummary,
}

fn rate(values: impl Iterator<Item = bool>) -> Option<f64> {
    citation_rate(&values.collect::<Vec<_>>()).ok()
}

fn breakdown(key: String, outcomes: &[&QueryOutcome]) -> BreakdownRow {
    BreakdownRow {
        key,
        queries: outcomes.len(),
        cr_before: rate(outcomes.iter().filter_map(|o| o.before.as_ref()).map(|s| s.cited)),
        cr_after: rate(outcomes.iter().filter_map(|o| o.after.as_ref()).map(|s| s.cited)),
    }
}

pub fn report(run: &RunRecord) -> Tables {
    let pages: BTreeMap<&str, &PageRun> = run.pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let all: Vec<&QueryOutcome> = run.outcomes.iter().collect();
    let group = |key: &dyn Fn(&PageRun) -> String| {
        let mut groups: BTreeMap<String, Vec<&QueryOutcome>> = BTreeMap::new();
        for o in &all {
            let k = pages
                .get(o.page_id.as_str())
                .map_or_else(|| "unknown".to_string(), |p| key(p));
            groups.entry(k).or_default().push(o);
        }
        groups.into_iter().map(|(k, v)| breakdown(k, &v)).collect::<Vec<_>>()
    };
    let by_topic = group(&|p| {
        if p.topic.is_empty() {
            "unknown".into()
        } else {
            p.topic.clone()
        }
    });
    let by_length = group(&|p| p.length.to_string());
    let diagnoses = run
        .pages
        .iter()
        .filter_map(|p| p.report.as_ref())
        .flat_map(|r| &r.queries)
        .flat_map(|q| &q.iterations)
        .filter_map(|i| i.diagnosis.as_ref());
    Tables {
        overall: (!all.is_empty()).then(|| breakdown("all".into(), &all)),
        by_topic,
        by_length,
        taxonomy: histogram(diagnoses, &CategoryMap::default()),
        metrics: summarize(run),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * 100.0))
}

/// Plain-text table with left-aligned first column and right-aligned rest.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(headers.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn breakdown_rows(rows: &[BreakdownRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let delta = r
                .improvement()
                .map_or_else(|| "-".to_string(), |d| format!("{:+.2}", d * 100.0));
            vec![
                r.key.clone(),
                r.queries.to_string(),
                pct(r.cr_before),
                pct(r.cr_after),
                delta,
            ]
        })
        .collect()
}

pub fn metric_table(metrics: &MetricSummary, method: &str) -> String {
    let mut headers = vec!["Method"];
    headers.extend(MetricReport::COLUMNS);
    let mut rows = Vec::new();
    let mut row = |name: &str, r: &MetricReport| {
        let mut cells = vec![name.to_string()];
        cells.extend(r.cells());
        rows.push(cells);
    };
    row("Vanilla", &metrics.vanilla);
    if let Some(o) = &metrics.optimized {
        row(method, o);
    }
    format_table(&headers, &rows)
}

impl Tables {
    pub fn render(&self) -> String {
        let breakdown_headers = ["", "Queries", "CR before", "CR after", "Change"];
        let mut out = String::new();
        let overall: Vec<BreakdownRow> = self.overall.iter().cloned().collect();
        let _ = writeln!(
            out,
            "Citation rate\n{}",
            format_table(&breakdown_headers, &breakdown_rows(&overall))
        );
        let mut h = breakdown_headers;
        h[0] = "Topic";
        let _ = writeln!(out, "By topic\n{}", format_table(&h, &breakdown_rows(&self.by_topic)));
        h[0] = "Length";
        let _ = writeln!(out, "By length\n{}", format_table(&h, &breakdown_rows(&self.by_length)));

        let tax = &self.taxonomy;
        let mut rows = Vec::new();
        if tax.total > 0 {
            for c in Category::ALL {
                rows.push(vec![
                    format!("{c:?}"),
                    tax.by_category[&c].to_string(),
                    format!("{:.2}", tax.category_percent(c)),
                ]);
            }
            for c in RootCause::ALL {
                let n = tax.by_cause[&c];
                if n > 0 {
                    rows.push(vec![
                        format!("  {c}"),
                        n.to_string(),
                        format!("{:.2}", tax.cause_percent(c)),
                    ]);
                }
            }
        }
        let _ = writeln!(
            out,
            "Failure taxonomy\n{}",
            format_table(&["Category", "Count", "%"], &rows)
        );
        let _ = write!(out, "Metrics\n{}", metric_table(&self.metrics, "AgentGEO"));
        out
    }
}
