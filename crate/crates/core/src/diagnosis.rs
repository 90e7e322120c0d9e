//! Contrastive failure analysis of an uncited target against the winning
//! competitor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunker::extract_text;
use crate::engine::CitationOutcome;
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::template::{render, vars};
use crate::text::{first_json_object, strip_fences};

pub const DEFAULT_CONFIDENCE: f64 = 0.5;

pub const FORMAT_INSTRUCTIONS: &str = "Respond with a single JSON object and nothing else:
{\"root_cause\": \"<one of the names above>\", \"severity\": \"critical|high|medium|low\", \"explanation\": \"<what is missing or wrong>\", \"confidence\": <number between 0 and 1>}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RootCause {
    ParsingFailure,
    ContentTruncated,
    DataIntegrity,
    WebNoise,
    LowSignalRatio,
    LowInfoDensity,
    MissingInfo,
    StructuralWeakness,
    SemanticIrrelevance,
    AttributeMismatch,
    BuriedAnswer,
    NonFactualContent,
    TrustCredibility,
    OutdatedContent,
    Unknown,
}

impl RootCause {
    pub const ALL: [RootCause; 15] = [
        RootCause::ParsingFailure,
        RootCause::ContentTruncated,
        RootCause::DataIntegrity,
        RootCause::WebNoise,
        RootCause::LowSignalRatio,
        RootCause::LowInfoDensity,
        RootCause::MissingInfo,
        RootCause::StructuralWeakness,
        RootCause::SemanticIrrelevance,
        RootCause::AttributeMismatch,
        RootCause::BuriedAnswer,
        RootCause::NonFactualContent,
        RootCause::TrustCredibility,
        RootCause::OutdatedContent,
        RootCause::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RootCause::ParsingFailure => "PARSING_FAILURE",
            RootCause::ContentTruncated => "CONTENT_TRUNCATED",
            RootCause::DataIntegrity => "DATA_INTEGRITY",
            RootCause::WebNoise => "WEB_NOISE",
            RootCause::LowSignalRatio => "LOW_SIGNAL_RATIO",
            RootCause::LowInfoDensity => "LOW_INFO_DENSITY",
            RootCause::MissingInfo => "MISSING_INFO",
            RootCause::StructuralWeakness => "STRUCTURAL_WEAKNESS",
            RootCause::SemanticIrrelevance => "SEMANTIC_IRRELEVANCE",
            RootCause::AttributeMismatch => "ATTRIBUTE_MISMATCH",
            RootCause::BuriedAnswer => "BURIED_ANSWER",
            RootCause::NonFactualContent => "NON_FACTUAL_CONTENT",
            RootCause::TrustCredibility => "TRUST_CREDIBILITY",
            RootCause::OutdatedContent => "OUTDATED_CONTENT",
            RootCause::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for RootCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RootCause {
    type Err = Error;

    /// Exact names only.
    fn from_str(s: &str) -> Result<Self> {
        RootCause::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::DiagnosisFormat(format!("unknown root cause `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn rank(self) -> u8 {
        match self {
            Severity::Low => 1,
            Severity::Medium => 2,
            Severity::High => 3,
            Severity::Critical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Severity::Low),
            "medium" => Ok(Severity::Medium),
            "high" => Ok(Severity::High),
            "critical" => Ok(Severity::Critical),
            _ => Err(Error::DiagnosisFormat(format!("unknown severity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub root_cause: RootCause,
    pub severity: Severity,
    pub explanation: String,
    pub confidence: f64,
    pub competitor_id: String,
    /// Other string fields of the response, e.g. `missing_entities`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    tracing::warn!("{msg}");
    warnings.push(msg);
}

/// Parse a diagnosis response. `competitor_id` is left empty.
pub fn parse_diagnosis(raw: &str) -> Result<Diagnosis> {
    let obj = first_json_object(&strip_fences(raw))
        .ok_or_else(|| Error::DiagnosisFormat("response contains no JSON object".into()))?;
    let mut warnings = Vec::new();

    let root_cause = match obj.get("root_cause").and_then(Value::as_str) {
        Some(s) => s.trim().parse().unwrap_or_else(|_| {
            warn(
                &mut warnings,
                format!("root cause `{s}` is not an exact category name; using UNKNOWN"),
            );
            RootCause::Unknown
        }),
        None => {
            warn(&mut warnings, "response has no root_cause; using UNKNOWN".into());
            RootCause::Unknown
        }
    };
    let severity = match obj.get("severity").and_then(Value::as_str) {
        Some(s) => s.parse().unwrap_or_else(|_| {
            warn(&mut warnings, format!("severity `{s}` not recognised; using medium"));
            Severity::Medium
        }),
        None => {
            warn(&mut warnings, "response has no severity; using medium".into());
            Severity::Medium
        }
    };
    let confidence = match obj.get("confidence") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(DEFAULT_CONFIDENCE),
        Some(Value::String(s)) => s.trim().parse().unwrap_or(DEFAULT_CONFIDENCE),
        _ => DEFAULT_CONFIDENCE,
    };
    let confidence = if confidence.is_finite() {
        confidence.clamp(0.0, 1.0)
    } else {
        DEFAULT_CONFIDENCE
    };
    let explanation = obj
        .get("explanation")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_string();

    let mut extras = BTreeMap::new();
    for (k, v) in &obj {
        if matches!(k.as_str(), "root_cause" | "severity" | "confidence" | "explanation") {
            continue;
        }
        let text = match v {
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .filter_map(|i| {
                    i.as_str()
                        .map(str::to_string)
                        .or_else(|| (!i.is_null()).then(|| i.to_string()))
                })
                .collect::<Vec<_>>()
                .join(", "),
            Value::Number(n) => n.to_string(),
            _ => continue,
        };
        extras.insert(k.clone(), text);
    }

    Ok(Diagnosis {
        root_cause,
        severity,
        explanation,
        confidence,
        competitor_id: String::new(),
        extras,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Competitor {
    pub id: String,
    /// Set when nothing else was cited and the top-ranked non-target stands in.
    pub fallback: bool,
}

/// Best-ranked cited non-target, else the best-ranked non-target.
pub fn select_competitor(outcome: &CitationOutcome) -> Result<Competitor> {
    let non_target = || outcome.ranked_candidates.iter().filter(|id| **id != outcome.target_id);
    if let Some(id) = non_target().find(|id| outcome.cited_ids.contains(*id)) {
        return Ok(Competitor {
            id: id.clone(),
            fallback: false,
        });
    }
    match non_target().next() {
        Some(id) => {
            tracing::warn!(query = %outcome.query_id, "no cited competitor; falling back to rank-1 candidate {id}");
            Ok(Competitor {
                id: id.clone(),
                fallback: true,
            })
        }
        None => Err(Error::Retrieval(format!(
            "query {} has no candidate other than the target",
            outcome.query_id
        ))),
    }
}

/// Ask the model why `target_html` lost to `competitor_html`.
pub fn diagnose(
    query: &str,
    target_html: &str,
    competitor_id: &str,
    competitor_html: &str,
    llm: &dyn LlmClient,
) -> Result<Diagnosis> {
    let user = render(
        prompts::FAILURE_ANALYSIS,
        &vars([
            ("query", query.to_string()),
            ("competitor", extract_text(competitor_html)),
            ("target", extract_text(target_html)),
            ("failure_taxonomy", prompts::FAILURE_TAXONOMY.trim_end().to_string()),
            ("format_instructions", FORMAT_INSTRUCTIONS.to_string()),
        ]),
    )?;
    let raw = llm.complete(&ChatRequest::new("diagnosis", "", user))?;
    let mut d = parse_diagnosis(&raw)?;
    d.competitor_id = competitor_id.to_string();
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    TechnicalIntegrity,
    SemanticAlignment,
    ContentQuality,
    SystemicExclusion,
    Uncategorized,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::TechnicalIntegrity,
        Category::SemanticAlignment,
        Category::ContentQuality,
        Category::SystemicExclusion,
        Category::Uncategorized,
    ];
}

/// Root cause to top-level category; causes absent from the map are uncategorized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryMap(pub BTreeMap<RootCause, Category>);

impl Default for CategoryMap {
    fn default() -> Self {
        use Category::*;
        use RootCause::*;
        let pairs = [
            (ParsingFailure, TechnicalIntegrity),
            (DataIntegrity, TechnicalIntegrity),
            (WebNoise, TechnicalIntegrity),
            (LowSignalRatio, TechnicalIntegrity),
            (SemanticIrrelevance, SemanticAlignment),
            (AttributeMismatch, SemanticAlignment),
            (MissingInfo, SemanticAlignment),
            (OutdatedContent, SemanticAlignment),
            (LowInfoDensity, ContentQuality),
            (StructuralWeakness, ContentQuality),
            (BuriedAnswer, ContentQuality),
            (NonFactualContent, ContentQuality),
            (TrustCredibility, ContentQuality),
            (ContentTruncated, SystemicExclusion),
        ];
        CategoryMap(pairs.into_iter().collect())
    }
}

impl CategoryMap {
    pub fn category(&self, cause: RootCause) -> Category {
        self.0.get(&cause).copied().unwrap_or(Category::Uncategorized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyHistogram {
    pub total: usize,
    pub by_category: BTreeMap<Category, usize>,
    pub by_cause: BTreeMap<RootCause, usize>,
}

impl TaxonomyHistogram {
    /// Share of `category` in percent; 0 for an empty histogram.
    pub fn category_percent(&self, category: Category) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.by_category.get(&category).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn cause_percent(&self, cause: RootCause) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.by_cause.get(&cause).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

pub fn histogram<'a>(diagnoses: impl IntoIterator<Item = &'a Diagnosis>, map: &CategoryMap) -> TaxonomyHistogram {
    let mut by_category: BTreeMap<Category, usize> = Category::ALL.into_iter().map(|c| (c, 0)).collect();
    let mut by_cause: BTreeMap<RootCause, usize> = RootCause::ALL.into_iter().map(|c| (c, 0)).collect();
    let mut total = 0;
    for d in diagnoses {
        total += 1;
        *by_cause.entry(d.root_cause).or_default() += 1;
        *by_category.entry(map.category(d.root_cause)).or_default() += 1;
    }
    TaxonomyHistogram {
        total,
        by_category,
        by_cause,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::engine::{CitationMode, GeneratedAnswer};
    use crate::llm::{ScriptEntry, ScriptedLlm};

    #[test]
    fn every_exact_name_round_trips() {
        for c in RootCause::ALL {
            let raw = format!(r#"{{"root_cause":"{c}","severity":"low"}}"#);
            assert_eq!(parse_diagnosis(&raw).unwrap().root_cause, c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
    }

    #[test]
    fn non_exact_cause_is_unknown() {
        let d = parse_diagnosis(r#"{"root_cause":"Missing Information","severity":"high"}"#).unwrap();
        assert_eq!(d.root_cause, RootCause::Unknown);
        assert_eq!(d.warnings.len(), 1);
        let d = parse_diagnosis(r#"{"root_cause":"missing_info","severity":"high"}"#).unwrap();
        assert_eq!(d.root_cause, RootCause::Unknown);
    }

    #[test]
    fn defaults_and_fences() {
        let d = parse_diagnosis("```json\n{\"root_cause\": \"PARSING_FAILURE\", \"extra\": 1}\n```").unwrap();
        assert_eq!(d.root_cause, RootCause::ParsingFailure);
        assert_eq!(d.severity, Severity::Medium);
        assert_eq!(d.confidence, DEFAULT_CONFIDENCE);
        assert_eq!(d.warnings.len(), 1);
        let d = parse_diagnosis(r#"{"root_cause":"BURIED_ANSWER","severity":"HIGH","confidence":7}"#).unwrap();
        assert_eq!(
            (d.root_cause, d.severity, d.confidence),
            (RootCause::BuriedAnswer, Severity::High, 1.0)
        );
        assert!(matches!(
            parse_diagnosis("the page is bad"),
            Err(Error::DiagnosisFormat(_))
        ));
    }

    #[test]
    fn extras_are_kept_as_text() {
        let d =
            parse_diagnosis(r#"{"root_cause":"MISSING_INFO","missing_entities":["price","date"],"key_takeaway":"x"}"#)
                .unwrap();
        assert_eq!(d.extras["missing_entities"], "price, date");
        assert_eq!(d.extras["key_takeaway"], "x");
    }

    #[test]
    fn severity_order() {
        assert!(
            Severity::Critical > Severity::High
                && Severity::High > Severity::Medium
                && Severity::Medium > Severity::Low
        );
        assert_eq!(Severity::Critical.rank(), 4);
    }

    fn outcome(ranked: &[&str], cited: &[&str], target: &str) -> CitationOutcome {
        CitationOutcome {
            query_id: "q".into(),
            target_id: target.into(),
            ranked_candidates: ranked.iter().map(|s| s.to_string()).collect(),
            answer: GeneratedAnswer {
                full_text: String::new(),
                sentences: vec![],
                mode: CitationMode::InContext,
                warnings: vec![],
                trace: None,
            },
            cited_ids: cited.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
            target_cited: cited.contains(&target),
        }
    }

    #[test]
    fn competitor_is_best_ranked_cited() {
        let o = outcome(&["a", "b", "t", "d"], &["d", "b"], "t");
        assert_eq!(
            select_competitor(&o).unwrap(),
            Competitor {
                id: "b".into(),
                fallback: false
            }
        );
        let o = outcome(&["t", "a", "b"], &[], "t");
        assert_eq!(
            select_competitor(&o).unwrap(),
            Competitor {
                id: "a".into(),
                fallback: true
            }
        );
        assert!(select_competitor(&outcome(&["t"], &[], "t")).is_err());
    }

    #[test]
    fn diagnose_fills_prompt() {
        let llm = ScriptedLlm::strict(vec![ScriptEntry::new(
            "=== COMPETITOR DOCUMENT (Winner - Was Cited) ===\nWinner text\n",
            r#"{"root_cause":"MISSING_INFO","severity":"high","explanation":"no price"}"#,
        )
        .tagged("diagnosis")])
        .unwrap();
        let d = diagnose("q", "<p>Loser</p>", "c1", "<p>Winner text</p>", &llm).unwrap();
        assert_eq!((d.root_cause, d.severity), (RootCause::MissingInfo, Severity::High));
        assert_eq!(d.competitor_id, "c1");
        assert_eq!(d.explanation, "no price");
    }

    fn diag(c: RootCause) -> Diagnosis {
        Diagnosis {
            root_cause: c,
            severity: Severity::Low,
            explanation: String::new(),
            confidence: 0.5,
            competitor_id: String::new(),
            extras: BTreeMap::new(),
            warnings: vec![],
        }
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[], &CategoryMap::default());
        assert_eq!(h.total, 0);
        assert!(h.by_category.values().all(|&n| n == 0));
        let mut ds: Vec<Diagnosis> = [
            RootCause::MissingInfo,
            RootCause::AttributeMismatch,
            RootCause::OutdatedContent,
        ]
        .into_iter()
        .cycle()
        .take(6)
        .map(diag)
        .collect();
        ds.extend(
            [
                RootCause::WebNoise,
                RootCause::BuriedAnswer,
                RootCause::ContentTruncated,
                RootCause::Unknown,
            ]
            .map(diag),
        );
        let h = histogram(&ds, &CategoryMap::default());
        assert_eq!(h.category_percent(Category::SemanticAlignment), 60.0);
        let sum: f64 = Category::ALL.iter().map(|&c| h.category_percent(c)).sum();
        assert!((sum - 100.0).abs() < 1e-9);
        for c in Category::ALL {
            let members: usize = RootCause::ALL
                .iter()
                .filter(|&&r| CategoryMap::default().category(r) == c)
                .map(|r| h.by_cause[r])
                .sum();
            assert_eq!(h.by_category[&c], members);
        }
    }
}
