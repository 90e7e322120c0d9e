use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use agentgeo_core::chunker::{extract_text, partition};
use agentgeo_core::corpus::load_dataset;
use agentgeo_core::engine::bm25;
use agentgeo_core::llm::ScriptedLlm;
use agentgeo_core::metrics::{faithfulness, HashedBow, IdfTable};
use agentgeo_core::pipeline::{run, RunOptions};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn synthetic_page(sections: usize) -> String {
    let mut html = String::from("<html><head><title>Bench</title></head><body>");
    for s in 0..sections {
        html.push_str(&format!("<h2>Section {s}</h2>"));
        for p in 0..4 {
            html.push_str(&format!(
                "<p>Paragraph {p} of section {s} covers tides, kelp, basalt and sourdough starters in some detail. \
                 Each sentence adds a few more words so the chunker has something to merge.</p>"
            ));
        }
        html.push_str("<ul><li>one item</li><li>another item</li></ul>");
    }
    html.push_str("</body></html>");
    html
}

fn chunker(c: &mut Criterion) {
    let page = synthetic_page(40);
    c.bench_function("partition_40_sections", |b| {
        b.iter(|| partition(black_box(&page)).unwrap())
    });
}

fn retrieval(c: &mut Criterion) {
    let docs: Vec<String> = (0..50).map(|i| extract_text(&synthetic_page(2 + i % 5))).collect();
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    c.bench_function("bm25_rank_50_docs", |b| {
        b.iter(|| bm25::rank(black_box("kelp tides basalt section 3"), &refs, 5))
    });
}

fn metrics(c: &mut Criterion) {
    let original = synthetic_page(20);
    let optimized = original.replace("kelp", "giant kelp forests");
    let texts = [extract_text(&original), extract_text(&synthetic_page(5))];
    let idf = IdfTable::new(texts.iter().map(String::as_str));
    let embedder = HashedBow::default();
    c.bench_function("faithfulness_20_sections", |b| {
        b.iter(|| faithfulness(black_box(&original), black_box(&optimized), &idf, &embedder).unwrap())
    });
}

fn optimize(c: &mut Criterion) {
    let dataset = load_dataset(fixture("scripted_dataset.json")).unwrap();
    let transcript = std::fs::read_to_string(fixture("scripted_transcript.json")).unwrap();
    let options = RunOptions::default();
    let mut group = c.benchmark_group("scripted_optimize");
    group.sample_size(20);
    for threads in [1, 4] {
        group.bench_function(format!("threads_{threads}"), |b| {
            b.iter_batched(
                || ScriptedLlm::from_json(&transcript, true).unwrap(),
                |llm| run(&dataset, &options, "bench", &llm, &HashedBow::default(), threads).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, chunker, retrieval, metrics, optimize);
criterion_main!(benches);
