use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EditSuggestion;
use crate::chunker::ChunkEdit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictStrategy {
    /// Highest severity, then confidence, then earliest query.
    #[default]
    DiagnosisAware,
    /// Fragment proposed by the most queries; severity breaks ties.
    Voting,
}

impl std::str::FromStr for ConflictStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.replace('-', "_").as_str() {
            "diagnosis_aware" => Ok(ConflictStrategy::DiagnosisAware),
            "voting" => Ok(ConflictStrategy::Voting),
            _ => Err(crate::Error::Config(format!("unknown conflict strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedEdit {
    pub edit: ChunkEdit,
    /// Query whose suggestion won.
    pub query_id: String,
    pub ordinal: usize,
    /// Suggestions that competed for this chunk.
    pub candidates: usize,
}

fn diagnosis_key(s: &EditSuggestion) -> (u8, OrderedConf, Reverse<usize>) {
    (s.severity.rank(), OrderedConf(s.confidence), Reverse(s.ordinal))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedConf(f64);

impl Eq for OrderedConf {}

impl PartialOrd for OrderedConf {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedConf {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Resolve suggestions to at most one edit per chunk, ordered by chunk index.
pub fn aggregate(suggestions: &[EditSuggestion], strategy: ConflictStrategy) -> Vec<AggregatedEdit> {
    let mut by_chunk: BTreeMap<usize, Vec<&EditSuggestion>> = BTreeMap::new();
    for s in suggestions {
        by_chunk.entry(s.target_chunk_index).or_default().push(s);
    }
    by_chunk
        .into_iter()
        .map(|(chunk, group)| {
            let winner = match strategy {
                ConflictStrategy::DiagnosisAware => *group
                    .iter()
                    .max_by_key(|s| diagnosis_key(s))
                    .expect("groups are non-empty"),
                ConflictStrategy::Voting => vote(&group),
            };
            AggregatedEdit {
                edit: ChunkEdit {
                    chunk_index: chunk,
                    new_html: winner.fragment_html.clone(),
                },
                query_id: winner.query_id.clone(),
                ordinal: winner.ordinal,
                candidates: group.len(),
            }
        })
        .collect()
}

fn vote<'a>(group: &[&'a EditSuggestion]) -> &'a EditSuggestion {
    let mut tallies: BTreeMap<&str, Vec<&'a EditSuggestion>> = BTreeMap::new();
    for s in group {
        tallies.entry(s.fragment_html.as_str()).or_default().push(s);
    }
    let best = tallies
        .values()
        .max_by_key(|voters| {
            let top = voters.iter().map(|s| s.severity.rank()).max().unwrap_or(0);
            let first = voters.iter().map(|s| s.ordinal).min().unwrap_or(usize::MAX);
            (voters.len(), top, Reverse(first))
        })
        .expect("groups are non-empty");
    best.iter()
        .copied()
        .max_by_key(|s| diagnosis_key(s))
        .expect("tallies are non-empty")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::diagnosis::{RootCause, Severity};
    use crate::toolkit::ToolId;

    fn sugg(ordinal: usize, chunk: usize, severity: Severity, confidence: f64, html: &str) -> EditSuggestion {
        EditSuggestion {
            query_id: format!("q{ordinal}"),
            ordinal,
            root_cause: RootCause::MissingInfo,
            severity,
            confidence,
            tool: ToolId::EntityInjection,
            target_chunk_index: chunk,
            fragment_html: html.into(),
            summary: vec![],
        }
    }

    #[test]
    fn disjoint_chunks() {
        let e = aggregate(
            &[sugg(0, 1, Severity::Low, 0.5, "a"), sugg(1, 3, Severity::Low, 0.5, "b")],
            ConflictStrategy::DiagnosisAware,
        );
        assert_eq!(e.iter().map(|x| x.edit.chunk_index).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn severity_then_confidence() {
        let e = aggregate(
            &[
                sugg(0, 2, Severity::High, 0.6, "a"),
                sugg(1, 2, Severity::Critical, 0.4, "b"),
            ],
            ConflictStrategy::DiagnosisAware,
        );
        assert_eq!(e[0].edit.new_html, "b");
        let e = aggregate(
            &[
                sugg(0, 2, Severity::High, 0.6, "a"),
                sugg(1, 2, Severity::High, 0.9, "b"),
            ],
            ConflictStrategy::DiagnosisAware,
        );
        assert_eq!(e[0].edit.new_html, "b");
        let e = aggregate(
            &[
                sugg(3, 2, Severity::High, 0.6, "late"),
                sugg(1, 2, Severity::High, 0.6, "early"),
            ],
            ConflictStrategy::DiagnosisAware,
        );
        assert_eq!((e[0].edit.new_html.as_str(), e[0].candidates), ("early", 2));
    }

    #[test]
    fn voting_majority_with_severity_tiebreak() {
        let e = aggregate(
            &[
                sugg(0, 0, Severity::Critical, 0.9, "x"),
                sugg(1, 0, Severity::Low, 0.1, "y"),
                sugg(2, 0, Severity::Low, 0.1, "y"),
            ],
            ConflictStrategy::Voting,
        );
        assert_eq!(e[0].edit.new_html, "y");
        let e = aggregate(
            &[
                sugg(0, 0, Severity::Low, 0.9, "x"),
                sugg(1, 0, Severity::High, 0.1, "y"),
            ],
            ConflictStrategy::Voting,
        );
        assert_eq!(e[0].edit.new_html, "y");
    }

    fn severity() -> impl Strategy<Value = Severity> {
        prop::sample::select(vec![
            Severity::Low,
            Severity::Medium,
            Severity::High,
            Severity::Critical,
        ])
    }

    proptest! {
        #[test]
        fn one_edit_per_chunk_and_order_independent(
            raw in prop::collection::vec((0usize..4, severity(), 0u8..=10), 1..20),
            rotate in 0usize..20,
        ) {
            let list: Vec<EditSuggestion> = raw
                .iter()
                .enumerate()
                .map(|(i, (c, s, conf))| sugg(i, *c, *s, *conf as f64 / 10.0, &format!("h{i}")))
                .collect();
            let mut shuffled = list.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rotate % n);
            for strategy in [ConflictStrategy::DiagnosisAware, ConflictStrategy::Voting] {
                let a = aggregate(&list, strategy);
                prop_assert_eq!(&a, &aggregate(&shuffled, strategy));
                let mut chunks: Vec<usize> = a.iter().map(|e| e.edit.chunk_index).collect();
                chunks.dedup();
                prop_assert_eq!(chunks.len(), a.len());
            }
        }
    }
}
