//! Acceptance suite. Prints one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use agentgeo_core::chunker::{apply_edits, dom, partition, ChunkEdit};
use agentgeo_core::corpus::{load_dataset, Intent, Split, Webpage};
use agentgeo_core::diagnosis::{Diagnosis, RootCause, Severity};
use agentgeo_core::engine::{parse_citations, Sentence};
use agentgeo_core::llm::{ChatRequest, LlmClient, ScriptedLlm};
use agentgeo_core::metrics::{contribution, faithfulness, jaccard, tfidf_cosine, HashedBow, IdfTable};
use agentgeo_core::optimizer::{aggregate, ConflictStrategy, EditSuggestion};
use agentgeo_core::pipeline::{run, EvalSplit, RunOptions, RunOutput};
use agentgeo_core::policy::{
    eligible_tools, select, DecisionSource, MemoryEntry, Outcome, PolicyConfig, TrajectoryMemory,
};
use agentgeo_core::querygen::{assemble_query_set, BenchVariant, QueryGenConfig};
use agentgeo_core::toolkit::ToolId;
use agentgeo_core::Error;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Check {
    let t = start.elapsed();
    ensure!(
        t < limit,
        "took {:.2}s, limit {:.0}s",
        t.as_secs_f64(),
        limit.as_secs_f64()
    );
    Ok(format!("{:.2}s", t.as_secs_f64()))
}

fn manifest_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

const WORDS: &[&str] = &[
    "river", "stone", "market", "garden", "winter", "signal", "copper", "harbor", "lantern", "meadow", "orbit",
    "pepper", "quartz", "saddle", "timber", "velvet", "willow", "anchor", "basket", "candle", "dragon", "engine",
    "forest", "glacier", "hammer", "island", "jacket", "kettle", "ladder", "mirror", "needle", "oyster", "pillow",
    "rabbit", "silver", "tunnel", "violet", "wagon", "yellow", "zephyr",
];

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

// AC1

fn inline_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(3..60);
    let mut s = words(rng, n);
    match rng.gen_range(0..4) {
        0 => s.push_str(&format!(" <strong>{}</strong>", words(rng, 2))),
        1 => s.push_str(&format!(" <a href=\"/x?a=1&amp;b=2\">{}</a> tail", words(rng, 3))),
        _ => {}
    }
    s
}

fn random_block(rng: &mut ChaCha8Rng, depth: usize) -> String {
    match rng.gen_range(0..if depth < 2 { 7 } else { 4 }) {
        0 | 1 => format!("<p>{}</p>", inline_text(rng)),
        2 => format!("<h2>{}</h2>", words(rng, 3)),
        3 => {
            let items: String = (0..rng.gen_range(1..5))
                .map(|_| format!("<li>{}</li>", inline_text(rng)))
                .collect();
            format!("<ul>{items}</ul>")
        }
        4 => {
            let rows: String = (0..rng.gen_range(1..4))
                .map(|_| format!("<tr><td>{}</td><td>{}</td></tr>", words(rng, 2), words(rng, 4)))
                .collect();
            format!("<table>{rows}</table>")
        }
        _ => {
            let tag = ["div", "section", "article"].choose(rng).unwrap();
            let inner: String = (0..rng.gen_range(1..5)).map(|_| random_block(rng, depth + 1)).collect();
            format!("<{tag} class=\"c{}\">{inner}</{tag}>", rng.gen_range(0..9))
        }
    }
}

fn random_page(rng: &mut ChaCha8Rng) -> String {
    let mut body = String::new();
    if rng.gen_bool(0.3) {
        body.push_str(&format!("<nav><a href=\"/\">{}</a></nav>", words(rng, 2)));
    }
    for _ in 0..rng.gen_range(1..9) {
        body.push_str(&random_block(rng, 0));
        if rng.gen_bool(0.3) {
            body.push('\n');
        }
    }
    if rng.gen_bool(0.3) {
        body.push_str(&format!("<footer><p>{}</p></footer>", words(rng, 4)));
    }
    format!(
        "<!DOCTYPE html><html><head><title>{}</title></head><body>{body}</body></html>",
        words(rng, 2)
    )
}

fn ac1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut fixtures, mut edited) = (0, 0);
    for _ in 0..300 {
        let html = random_page(&mut rng);
        let map = partition(&html).map_err(|e| e.to_string())?;
        let normalized = dom::normalize(&html);
        let same = apply_edits(&html, &map, &[]).map_err(|e| e.to_string())?;
        ensure!(same == normalized, "identity failed on {html}");
        fixtures += 1;
        if map.is_empty() {
            continue;
        }
        let idx = rng.gen_range(0..map.len());
        let new_html = format!("<p>{}</p>", words(&mut rng, 40));
        let out = apply_edits(
            &html,
            &map,
            &[ChunkEdit {
                chunk_index: idx,
                new_html: new_html.clone(),
            }],
        )
        .map_err(|e| e.to_string())?;
        let r = &map.chunks[idx].byte_range;
        ensure!(
            out[..r.start] == normalized[..r.start],
            "prefix changed editing chunk {idx} of {html}"
        );
        ensure!(
            out[r.start..r.start + new_html.len()] == new_html,
            "edited region differs"
        );
        ensure!(
            out[r.start + new_html.len()..] == normalized[r.end..],
            "suffix changed editing chunk {idx} of {html}"
        );
        for (j, c) in map.chunks.iter().enumerate().filter(|(j, _)| *j != idx) {
            let shift = |p: usize| {
                if p >= r.end {
                    p + new_html.len() - (r.end - r.start)
                } else {
                    p
                }
            };
            let range = shift(c.byte_range.start)..shift(c.byte_range.end);
            ensure!(
                out[range] == c.html,
                "chunk {j} not byte-identical after editing chunk {idx}"
            );
        }
        edited += 1;
    }
    ensure!(edited >= 100, "only {edited} fixtures had chunks");
    Ok(format!(
        "{fixtures} fixtures, {edited} single edits, {}",
        within(start, Duration::from_secs(5))?
    ))
}

// AC2

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let mut sa = oracle_tokens(a);
    let mut sb = oracle_tokens(b);
    sa.sort();
    sa.dedup();
    sb.sort();
    sb.dedup();
    let inter = sa.iter().filter(|t| sb.contains(t)).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_tfidf(docs: &[String], a: &str, b: &str) -> f64 {
    let (ta, tb) = (oracle_tokens(a), oracle_tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut corpus: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(d)).collect();
    corpus.push(ta.clone());
    corpus.push(tb.clone());
    let mut vocab: Vec<String> = ta.iter().chain(&tb).cloned().collect();
    vocab.sort();
    vocab.dedup();
    let n = corpus.len() as f64;
    let vector = |toks: &Vec<String>| -> Vec<f64> {
        vocab
            .iter()
            .map(|t| {
                let tf = toks.iter().filter(|x| *x == t).count() as f64 / toks.len() as f64;
                let df = corpus.iter().filter(|d| d.contains(t)).count() as f64;
                tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
            })
            .collect()
    };
    let (va, vb) = (vector(&ta), vector(&tb));
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn noisy_text(rng: &mut ChaCha8Rng, max_tokens: usize) -> String {
    let n = rng.gen_range(0..=max_tokens);
    let mut s = String::new();
    for _ in 0..n {
        let w = WORDS[rng.gen_range(0..12)];
        let w = if rng.gen_bool(0.2) {
            w.to_uppercase()
        } else {
            w.to_string()
        };
        s.push_str(&w);
        s.push_str([" ", ", ", ". ", "-", "  "].choose(rng).unwrap());
    }
    s
}

fn ac2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let instances = 1500;
    for case in 0..instances {
        let a = noisy_text(&mut rng, 50);
        let b = noisy_text(&mut rng, 50);
        let d = (jaccard(&a, &b) - oracle_jaccard(&a, &b)).abs();
        ensure!(d <= 1e-9, "jaccard case {case}: off by {d}");
        worst = worst.max(d);

        let docs: Vec<String> = (0..rng.gen_range(0..5)).map(|_| noisy_text(&mut rng, 50)).collect();
        let table = IdfTable::new(docs.iter().map(String::as_str));
        let d = (tfidf_cosine(&a, &b, &table) - oracle_tfidf(&docs, &a, &b)).abs();
        ensure!(d <= 1e-9, "tf-idf case {case}: off by {d}");
        worst = worst.max(d);

        let sources = rng.gen_range(1..=5);
        let mut sentences = Vec::new();
        let mut counts = Vec::new();
        for _ in 0..rng.gen_range(1..=5) {
            let wc = rng.gen_range(0..10);
            let cites: BTreeSet<usize> = (1..=sources).filter(|_| rng.gen_bool(0.4)).collect();
            sentences.push(Sentence {
                text: words(&mut rng, wc),
                citations: cites,
            });
            counts.push(wc as f64);
        }
        let target = rng.gen_range(1..=sources);
        let got = contribution(&sentences, target, sources).map_err(|e| e.to_string())?;
        let n = sentences.len() as f64;
        let mut num = [0.0f64; 3];
        let mut den = [0.0f64; 3];
        for (i, s) in sentences.iter().enumerate() {
            let p = (-(i as f64) / n).exp();
            let masses = [counts[i], p, counts[i] * p];
            for k in 0..3 {
                den[k] += masses[k];
                if s.citations.contains(&target) {
                    num[k] += masses[k] / s.citations.len() as f64;
                }
            }
        }
        let want: Vec<f64> = (0..3)
            .map(|k| if den[k] > 0.0 { num[k] / den[k] } else { 0.0 })
            .collect();
        for (name, g, w) in [
            ("word", got.word, want[0]),
            ("pos", got.pos, want[1]),
            ("wordpos", got.wordpos, want[2]),
        ] {
            let d = (g - w).abs();
            ensure!(d <= 1e-9, "{name} contribution case {case}: {g} vs {w}");
            worst = worst.max(d);
        }
    }
    Ok(format!(
        "{instances} instances x 3 metrics, max error {worst:.1e}, {}",
        within(start, Duration::from_secs(10))?
    ))
}

// AC3

struct RandomController {
    rng: Mutex<ChaCha8Rng>,
    chunks: usize,
    proposals: Mutex<Vec<Option<ToolId>>>,
}

impl LlmClient for RandomController {
    fn complete(&self, req: &ChatRequest) -> agentgeo_core::Result<String> {
        assert_eq!(req.tag, "policy");
        let mut rng = self.rng.lock().unwrap();
        let tool = if rng.gen_bool(0.05) {
            None
        } else {
            Some(*ToolId::ALL.choose(&mut *rng).unwrap())
        };
        self.proposals.lock().unwrap().push(tool);
        let name = tool.map_or("no_such_tool", |t| t.as_str());
        Ok(json!({"tool_name": name, "target_chunk_index": rng.gen_range(0..self.chunks)}).to_string())
    }
}

struct Fixed(ToolId);

impl LlmClient for Fixed {
    fn complete(&self, _req: &ChatRequest) -> agentgeo_core::Result<String> {
        Ok(json!({"tool_name": self.0.as_str(), "target_chunk_index": 0}).to_string())
    }
}

fn diag(cause: RootCause) -> Diagnosis {
    Diagnosis {
        root_cause: cause,
        severity: Severity::High,
        explanation: "weak".into(),
        confidence: 0.5,
        competitor_id: "c".into(),
        extras: BTreeMap::new(),
        warnings: vec![],
    }
}

fn oracle_budget(entries: &[MemoryEntry], t: ToolId) -> bool {
    entries.iter().filter(|e| e.tool == t).count() >= 3
}

fn oracle_idempotent(entries: &[MemoryEntry], t: ToolId, current: RootCause) -> bool {
    let mut masked = false;
    for j in 0..entries.len() {
        if entries[j].tool == t && entries[j].root_cause == current {
            let next = entries.get(j + 1).map_or(current, |e| e.root_cause);
            masked = entries[j].outcome == Outcome::StillUncited && next == current;
        }
    }
    masked
}

fn oracle_unstable(entries: &[MemoryEntry], t: ToolId) -> bool {
    let mut run = 0;
    for e in entries.iter().rev() {
        if e.tool != t || e.outcome != Outcome::StillUncited {
            break;
        }
        run += 1;
    }
    run >= 2
}

fn random_memory(rng: &mut ChaCha8Rng, causes: &[RootCause], tools: &[ToolId]) -> TrajectoryMemory {
    let mut m = TrajectoryMemory::new();
    for _ in 0..rng.gen_range(0..9) {
        let outcome = if rng.gen_bool(0.85) {
            Outcome::StillUncited
        } else {
            Outcome::CitationAchieved
        };
        m.record(*causes.choose(rng).unwrap(), *tools.choose(rng).unwrap(), outcome);
    }
    m
}

fn ac3() -> Check {
    let start = Instant::now();
    let p = words(&mut ChaCha8Rng::seed_from_u64(0), 60);
    let map = partition(&format!("<body><p>{p}</p><p>{p}</p><p>{p}</p></body>")).map_err(|e| e.to_string())?;
    let llm = RandomController {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(33)),
        chunks: map.len(),
        proposals: Mutex::new(Vec::new()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let causes = [
        RootCause::MissingInfo,
        RootCause::BuriedAnswer,
        RootCause::Unknown,
        RootCause::ContentTruncated,
    ];
    let tools = [
        ToolId::EntityInjection,
        ToolId::PersuasiveRewriting,
        ToolId::BlufOptimization,
        ToolId::ContentRelocation,
        ToolId::NoiseIsolation,
    ];
    let on = PolicyConfig::default();
    let none = BTreeSet::new();
    let trajectories = 12_000;
    let (mut budget_hits, mut idem_hits, mut stab_hits, mut exhausted) = (0, 0, 0, 0);
    for i in 0..trajectories {
        let memory = random_memory(&mut rng, &causes, &tools);
        let current = *causes.choose(&mut rng).unwrap();
        let e = &memory.entries;
        let masked = |t: ToolId| oracle_budget(e, t) || oracle_idempotent(e, t, current) || oracle_unstable(e, t);
        let expected: BTreeSet<ToolId> = ToolId::ALL.into_iter().filter(|&t| !masked(t)).collect();
        ensure!(
            eligible_tools(&memory, current, &on, &none) == expected,
            "trajectory {i}: eligible set differs from oracle"
        );
        let before = llm.proposals.lock().unwrap().len();
        match select(&diag(current), &memory, &map, "q", &on, &none, &llm) {
            Ok(d) => {
                ensure!(
                    !oracle_budget(e, d.tool),
                    "trajectory {i}: budget violated by {}",
                    d.tool
                );
                ensure!(
                    !oracle_idempotent(e, d.tool, current),
                    "trajectory {i}: idempotency violated by {}",
                    d.tool
                );
                ensure!(
                    !oracle_unstable(e, d.tool),
                    "trajectory {i}: stability violated by {}",
                    d.tool
                );
                let proposals = llm.proposals.lock().unwrap();
                if let Some(Some(t)) = proposals[before..].last() {
                    budget_hits += usize::from(oracle_budget(e, *t));
                    idem_hits += usize::from(oracle_idempotent(e, *t, current));
                    stab_hits += usize::from(oracle_unstable(e, *t));
                }
            }
            Err(Error::PolicyExhausted) => {
                ensure!(expected.is_empty(), "trajectory {i}: exhausted with tools left");
                exhausted += 1;
            }
            Err(err) => return Err(format!("trajectory {i}: {err}")),
        }
    }
    ensure!(
        budget_hits > 0 && idem_hits > 0 && stab_hits > 0,
        "a constraint was never exercised"
    );

    // Without memory the same histories mask nothing.
    let off = PolicyConfig {
        memory_enabled: false,
        ..Default::default()
    };
    let all: BTreeSet<ToolId> = ToolId::ALL.into_iter().collect();
    let mut repeated = 0;
    for i in 0..2_000 {
        let memory = random_memory(&mut rng, &causes, &tools);
        let current = *causes.choose(&mut rng).unwrap();
        ensure!(
            eligible_tools(&memory, current, &off, &none) == all,
            "memory off, trajectory {i}: tools masked"
        );
        let d = select(&diag(current), &memory, &map, "q", &off, &none, &llm).map_err(|e| e.to_string())?;
        ensure!(
            d.source != DecisionSource::Escalation,
            "memory off, trajectory {i}: escalated"
        );
    }
    let mut memory = TrajectoryMemory::new();
    for _ in 0..6 {
        let d = select(
            &diag(RootCause::MissingInfo),
            &memory,
            &map,
            "q",
            &off,
            &none,
            &Fixed(ToolId::EntityInjection),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            d.tool == ToolId::EntityInjection,
            "memory off: controller choice overridden"
        );
        repeated += 1;
        memory.record(RootCause::MissingInfo, d.tool, Outcome::StillUncited);
    }
    ensure!(repeated > 3, "memory off: repeated use not shown");

    Ok(format!(
        "{trajectories} trajectories, masked proposals budget={budget_hits} idempotency={idem_hits} stability={stab_hits}, exhausted={exhausted}, memory off inert, {}",
        within(start, Duration::from_secs(60))?
    ))
}

// AC4

fn fixture_run(split: EvalSplit, threads: usize) -> Result<RunOutput, String> {
    let dataset = load_dataset(manifest_path("tests/fixtures/scripted_dataset.json")).map_err(|e| e.to_string())?;
    let llm = ScriptedLlm::from_file(manifest_path("tests/fixtures/scripted_transcript.json"), true)
        .map_err(|e| e.to_string())?;
    let options = RunOptions {
        eval_split: split,
        ..Default::default()
    };
    run(&dataset, &options, "fixture", &llm, &HashedBow::default(), threads).map_err(|f| f.error.to_string())
}

fn rate(out: &RunOutput, after: bool) -> f64 {
    let cited: Vec<bool> = out
        .record
        .outcomes
        .iter()
        .map(|o| if after { o.after.as_ref() } else { o.before.as_ref() }.is_some_and(|s| s.cited))
        .collect();
    cited.iter().filter(|c| **c).count() as f64 / cited.len() as f64
}

fn ac4() -> Check {
    let start = Instant::now();
    let dataset = load_dataset(manifest_path("tests/fixtures/scripted_dataset.json")).map_err(|e| e.to_string())?;
    let first = fixture_run(EvalSplit::Train, 1)?;
    ensure!(
        first.record.outcomes.len() == 20,
        "{} train outcomes",
        first.record.outcomes.len()
    );
    ensure!(
        first.record.outcomes.iter().all(|o| o.split == Split::Train),
        "non-train outcome"
    );
    let (before, after) = (rate(&first, false), rate(&first, true));
    ensure!(
        (before - 0.6).abs() < 1e-12 && (after - 1.0).abs() < 1e-12,
        "CR {before} -> {after}"
    );

    let mut repaired = Vec::new();
    for page in dataset
        .webpages
        .iter()
        .filter(|p| !dataset.queries_for(&p.id).is_empty())
    {
        let html = &first.optimized[&page.id];
        let report = first
            .record
            .pages
            .iter()
            .find(|p| p.page_id == page.id)
            .and_then(|p| p.report.as_ref());
        let edits = report.map_or(0, |r| r.edit_count());
        if edits == 0 {
            ensure!(html == &page.raw_html, "unrepaired page {} changed", page.id);
            continue;
        }
        let a = partition(&page.raw_html).map_err(|e| e.to_string())?;
        let b = partition(html).map_err(|e| e.to_string())?;
        ensure!(
            a.len() == b.len(),
            "page {} chunk count {} -> {}",
            page.id,
            a.len(),
            b.len()
        );
        let changed = a.chunks.iter().zip(&b.chunks).filter(|(x, y)| x.html != y.html).count();
        ensure!(changed == 1, "page {} has {changed} modified chunks", page.id);
        repaired.push(page.id.clone());
    }
    ensure!(repaired == ["p4", "p5"], "repaired pages {repaired:?}");

    let test = fixture_run(EvalSplit::Test, 1)?;
    let (tb, ta) = (rate(&test, false), rate(&test, true));
    ensure!(
        (tb - 0.6).abs() < 1e-12 && (ta - 1.0).abs() < 1e-12,
        "test split CR {tb} -> {ta}"
    );

    let json = first.record.to_json();
    for (i, threads) in [1, 1, 4, 4].into_iter().enumerate() {
        let again = fixture_run(EvalSplit::Train, threads)?;
        ensure!(
            again.record.to_json() == json,
            "run {} with {threads} threads: record differs",
            i + 2
        );
        ensure!(
            again.optimized == first.optimized,
            "run {} with {threads} threads: HTML differs",
            i + 2
        );
    }
    Ok(format!(
        "CR {:.0}% -> {:.0}% (train), {:.0}% -> {:.0}% (test), repaired {repaired:?}, identical over 5 runs and threads 1/4, {}",
        before * 100.0,
        after * 100.0,
        tb * 100.0,
        ta * 100.0,
        within(start, Duration::from_secs(30))?
    ))
}

// AC5

fn ac5() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let severities = [Severity::Low, Severity::Medium, Severity::High, Severity::Critical];
    let (mut sets, mut contested) = (0, 0);
    for case in 0..5_000 {
        let n = rng.gen_range(1..12);
        let mut ordinals: Vec<usize> = (0..n * 2).collect();
        ordinals.shuffle(&mut rng);
        let list: Vec<EditSuggestion> = (0..n)
            .map(|i| EditSuggestion {
                query_id: format!("q{}", ordinals[i]),
                ordinal: ordinals[i],
                root_cause: RootCause::MissingInfo,
                severity: *severities.choose(&mut rng).unwrap(),
                confidence: rng.gen_range(0..4) as f64 / 4.0,
                tool: ToolId::EntityInjection,
                target_chunk_index: rng.gen_range(0..3),
                fragment_html: format!("<p>{i}</p>"),
                summary: vec![],
            })
            .collect();
        let edits = aggregate(&list, ConflictStrategy::DiagnosisAware);
        let chunks: BTreeSet<usize> = list.iter().map(|s| s.target_chunk_index).collect();
        ensure!(
            edits.len() == chunks.len(),
            "case {case}: {} edits for {} chunks",
            edits.len(),
            chunks.len()
        );
        for e in &edits {
            let group: Vec<&EditSuggestion> = list
                .iter()
                .filter(|s| s.target_chunk_index == e.edit.chunk_index)
                .collect();
            let mut best = group[0];
            for s in &group[1..] {
                let better = s.severity > best.severity
                    || (s.severity == best.severity && s.confidence > best.confidence)
                    || (s.severity == best.severity && s.confidence == best.confidence && s.ordinal < best.ordinal);
                if better {
                    best = s;
                }
            }
            ensure!(
                e.ordinal == best.ordinal && e.edit.new_html == best.fragment_html,
                "case {case}: wrong winner on chunk {}",
                e.edit.chunk_index
            );
            let top = group.iter().map(|s| s.severity).max().unwrap();
            ensure!(best.severity == top, "case {case}: severity dominance");
            contested += usize::from(group.len() > 1);
        }
        let mut shuffled = list.clone();
        shuffled.shuffle(&mut rng);
        ensure!(
            aggregate(&shuffled, ConflictStrategy::DiagnosisAware) == edits,
            "case {case}: order dependent"
        );
        sets += 1;
    }
    Ok(format!(
        "{sets} suggestion sets, {contested} contested chunks, severity dominance 100%, {}",
        within(start, Duration::from_secs(10))?
    ))
}

// AC6

struct Zipf {
    vocab: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Zipf {
    fn new(size: usize) -> Self {
        let syllables = [
            "ka", "lo", "mi", "ren", "to", "sa", "vel", "dor", "pi", "nu", "gar", "es",
        ];
        let vocab = (0..size)
            .map(|i| {
                let mut w = String::new();
                let mut x = i + 12;
                while x > 0 {
                    w.push_str(syllables[x % syllables.len()]);
                    x /= syllables.len();
                }
                w
            })
            .collect();
        let dist = WeightedIndex::new((0..size).map(|r| 1.0 / (r as f64 + 1.0))).unwrap();
        Zipf { vocab, dist }
    }

    fn words(&self, rng: &mut ChaCha8Rng, n: usize) -> String {
        (0..n)
            .map(|_| self.vocab[self.dist.sample(rng)].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn ac6() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let zipf = Zipf::new(3000);
    let mut pages = Vec::new();
    for _ in 0..60 {
        let body: String = (0..rng.gen_range(3..12))
            .map(|_| {
                let n = rng.gen_range(40..140);
                format!("<p>{}.</p>", zipf.words(&mut rng, n))
            })
            .collect();
        pages.push(format!(
            "<html><head><title>t</title></head><body><h1>Heading</h1>{body}</body></html>"
        ));
    }
    let texts: Vec<String> = pages.iter().map(|p| agentgeo_core::chunker::extract_text(p)).collect();
    let idf = IdfTable::new(texts.iter().map(String::as_str));
    let mut min = f64::MAX;
    for (i, html) in pages.iter().enumerate() {
        let map = partition(html).map_err(|e| e.to_string())?;
        let total = agentgeo_core::text::tokenize(&texts[i]).len();
        let k = total * 5 / 100;
        let idx = rng.gen_range(0..map.len());
        let chunk = &map.chunks[idx].html;
        let inserted: String = (0..k).map(|j| format!(" novel{i}x{j}")).collect();
        let cut = chunk.rfind("</p>").ok_or("chunk without paragraph")?;
        let new_html = format!("{}{inserted}{}", &chunk[..cut], &chunk[cut..]);
        let edited = apply_edits(
            html,
            &map,
            &[ChunkEdit {
                chunk_index: idx,
                new_html,
            }],
        )
        .map_err(|e| e.to_string())?;
        let f = faithfulness(html, &edited, &idf, &HashedBow::default()).map_err(|e| e.to_string())?;
        ensure!(
            f.jaccard >= 0.80,
            "page {i}: jaccard {:.4} after inserting {k} of {total} tokens",
            f.jaccard
        );
        min = min.min(f.jaccard);
    }
    Ok(format!(
        "{} pages, min jaccard {min:.4}, {}",
        pages.len(),
        within(start, Duration::from_secs(10))?
    ))
}

// AC7

struct FakeBuilder {
    generated: Mutex<BTreeSet<String>>,
}

fn after_marker<'a>(text: &'a str, marker: &str) -> &'a str {
    let at = text.find(marker).map_or(text.len(), |i| i + marker.len());
    text[at..].lines().next().unwrap_or("").trim()
}

fn json_list(text: &str) -> Vec<String> {
    let at = text.find('[').unwrap_or(0);
    serde_json::from_str(&text[at..]).unwrap_or_default()
}

impl LlmClient for FakeBuilder {
    fn complete(&self, req: &ChatRequest) -> agentgeo_core::Result<String> {
        let reply = match req.tag.as_str() {
            "querygen:profile" => {
                let title = after_marker(&req.user, "Title:").to_lowercase();
                let stem = title.split_whitespace().next().unwrap_or("topic").to_string();
                json!({
                    "keyword_cluster": {"core": [format!("{stem} basics"), format!("{stem} tools"), format!("{stem} history")]},
                    "target_personas": [
                        {"name": "Hobbyist", "description": "learns on weekends"},
                        {"name": "Student", "description": "writes a report"},
                        {"name": "Professional", "description": "works in the field"}
                    ]
                })
                .to_string()
            }
            "querygen:intent" => {
                r#"{"intents": ["informational", "commercial", "astrology"], "reasoning": "guides and buying advice"}"#
                    .into()
            }
            "querygen:generate" => {
                let keyword = after_marker(&req.user, "Focus Keyword:");
                let persona = after_marker(&req.user, "Role/Demographics:");
                let persona = persona.split(" (").next().unwrap_or(persona);
                let mut by_intent = serde_json::Map::new();
                for intent in ["informational", "commercial"] {
                    let list: Vec<String> = (0..5)
                        .map(|j| match (j, persona) {
                            (4, _) => format!("{keyword} {intent} overview"),
                            (3, "Hobbyist") => format!("{keyword} {intent} dup phrasing"),
                            (2, "Student") => format!("{keyword} {intent} offtopic lottery numbers"),
                            _ => format!("{keyword} {intent} question {j} for {persona}"),
                        })
                        .collect();
                    self.generated.lock().unwrap().extend(list.iter().cloned());
                    by_intent.insert(intent.into(), json!(list));
                }
                by_intent.insert("navigational".into(), json!([]));
                by_intent.insert("transactional".into(), json!([]));
                Value::Object(by_intent).to_string()
            }
            "querygen:dedup" => {
                let kept: Vec<String> = json_list(&req.user)
                    .into_iter()
                    .filter(|q| !q.contains("dup"))
                    .collect();
                json!(kept).to_string()
            }
            "querygen:filter" => {
                let list = json_list(&req.user[req.user.find("Queries:").unwrap_or(0)..]);
                let (off, on): (Vec<String>, Vec<String>) = list.into_iter().partition(|q| q.contains("offtopic"));
                json!({"relevant_queries": on, "filtered_queries": off}).to_string()
            }
            other => panic!("unexpected request tag {other}"),
        };
        Ok(reply)
    }
}

fn ac7() -> Check {
    let start = Instant::now();
    let pages = [
        ("k", "Kelp farming in cold water"),
        ("b", "Basalt columns and how they form"),
        ("o", "Origami cranes for beginners"),
    ];
    let personas: BTreeSet<&str> = ["Hobbyist", "Student", "Professional"].into();
    let mut summary = Vec::new();
    for (id, title) in pages {
        let html = format!(
            "<html><head><title>{title}</title></head><body><p>{title}. {}</p></body></html>",
            words(&mut ChaCha8Rng::seed_from_u64(7), 80)
        );
        let page = Webpage::new(id, html);
        for variant in [BenchVariant::Standard, BenchVariant::Ood] {
            let llm = FakeBuilder {
                generated: Mutex::new(BTreeSet::new()),
            };
            let config = QueryGenConfig {
                variant,
                ..Default::default()
            };
            let set = assemble_query_set(&page, &config, &llm).map_err(|e| format!("{id}: {e}"))?;
            let generated = llm.generated.lock().unwrap();
            let all: Vec<_> = set.queries().collect();
            ensure!(all.len() == 60, "{id}: {} queries", all.len());
            let texts: BTreeSet<&str> = all.iter().map(|q| q.text.as_str()).collect();
            ensure!(texts.len() == all.len(), "{id}: duplicate queries survived");
            for q in &all {
                ensure!(generated.contains(&q.text), "{id}: invented query `{}`", q.text);
                ensure!(
                    matches!(q.intent, Intent::Informational | Intent::Commercial),
                    "{id}: invalid intent {}",
                    q.intent
                );
                ensure!(
                    personas.contains(q.persona.as_str()),
                    "{id}: invalid persona {}",
                    q.persona
                );
                ensure!(
                    !q.text.contains("dup") && !q.text.contains("offtopic"),
                    "{id}: removed query kept: {}",
                    q.text
                );
                ensure!(
                    q.text.contains(&format!("for {}", q.persona)) || q.text.ends_with("overview"),
                    "{id}: persona mislabelled on {}",
                    q.text
                );
                ensure!(
                    q.text.contains(q.intent.as_str()),
                    "{id}: intent mislabelled on {}",
                    q.text
                );
            }
            ensure!(
                set.filtered.iter().all(|q| q.contains("offtopic")) && set.filtered.len() == 6,
                "{id}: filtered {:?}",
                set.filtered
            );
            ensure!(
                set.intents.warnings.iter().any(|w| w.contains("astrology")),
                "{id}: unknown intent not reported"
            );
            match variant {
                BenchVariant::Standard => {
                    ensure!(
                        set.train.len() * 2 == set.test.len(),
                        "{id}: split {}:{}",
                        set.train.len(),
                        set.test.len()
                    );
                }
                _ => {
                    let tr: BTreeSet<&str> = set.train.iter().map(|q| q.persona.as_str()).collect();
                    let te: BTreeSet<&str> = set.test.iter().map(|q| q.persona.as_str()).collect();
                    ensure!(
                        !tr.is_empty() && !te.is_empty() && tr.is_disjoint(&te),
                        "{id}: OOD personas {tr:?} / {te:?}"
                    );
                }
            }
            summary.push(format!("{id}/{variant:?} {}:{}", set.train.len(), set.test.len()));
        }
    }
    Ok(format!(
        "{}, {}",
        summary.join(" "),
        within(start, Duration::from_secs(10))?
    ))
}

// AC8

fn ac8() -> Check {
    let raw = std::fs::read_to_string(manifest_path("tests/golden/citations.json")).map_err(|e| e.to_string())?;
    let cases: Vec<Value> = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    ensure!(cases.len() >= 50, "only {} golden cases", cases.len());
    let mut failures = Vec::new();
    for case in &cases {
        let input = case["input"].as_str().unwrap_or_default();
        let expected: Vec<Sentence> = serde_json::from_value(case["expected"].clone()).map_err(|e| e.to_string())?;
        let got = parse_citations(input);
        if got != expected {
            failures.push(format!("{}: {input:?} gave {got:?}", case["name"]));
        }
    }
    ensure!(
        failures.is_empty(),
        "{} of {} cases differ:\n  {}",
        failures.len(),
        cases.len(),
        failures.join("\n  ")
    );
    Ok(format!("{} golden cases", cases.len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("AC1 chunker identity and locality", ac1),
        ("AC2 metric oracles", ac2),
        ("AC3 policy constraints", ac3),
        ("AC4 scripted end-to-end", ac4),
        ("AC5 aggregation determinism", ac5),
        ("AC6 faithfulness locality", ac6),
        ("AC7 benchmark builder", ac7),
        ("AC8 citation grammar", ac8),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("{name}: PASS ({detail})"),
            Err(why) => {
                println!("{name}: FAIL ({why})");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
