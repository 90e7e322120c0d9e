use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::json;

use agentgeo_core::chunker::extract_text;
use agentgeo_core::corpus::{load_dataset, save_dataset, Dataset, QueryRecord};
use agentgeo_core::diagnosis::{diagnose, select_competitor};
use agentgeo_core::engine::{verify_citation, CitationOutcome};
use agentgeo_core::llm::LlmClient;
use agentgeo_core::metrics::{faithfulness, IdfTable};
use agentgeo_core::optimizer::{pools_from_dataset, with_target};
use agentgeo_core::pipeline::{self, RunOptions, RunOutput};
use agentgeo_core::querygen::assemble_query_set;
use agentgeo_core::report::{metric_table, report, summarize, RunRecord};

use crate::config::AppConfig;
use crate::{error_code, Command, Failure, RunArgs, EXIT_PARTIAL, EXIT_USAGE};

const METHOD: &str = "AgentGEO";

pub fn dispatch(command: Command, cfg: &AppConfig, json: bool) -> Result<(), Failure> {
    match command {
        Command::BuildBench {
            output,
            variant,
            target_queries,
            seed,
            pages,
        } => {
            let mut q = cfg.querygen.clone();
            if let Some(v) = variant {
                q.variant = v;
            }
            if let Some(n) = target_queries {
                q.target_queries = n;
            }
            if let Some(s) = seed {
                q.seed = s;
            }
            let cfg = AppConfig {
                querygen: q,
                ..cfg.clone()
            };
            build_bench(&cfg, &output, pages, json)
        }
        Command::Optimize {
            run,
            run_id,
            pages,
            vanilla,
        } => optimize(cfg, &run, run_id, pages, vanilla, json),
        Command::Simulate {
            query,
            html,
            citation_mode,
        } => {
            let mut cfg = cfg.clone();
            if let Some(m) = citation_mode {
                cfg.optimizer.citation_mode = m;
            }
            simulate(&cfg, &query, html.as_deref(), json)
        }
        Command::Diagnose { query, html } => diagnose_query(cfg, &query, html.as_deref(), json),
        Command::Evaluate { run, optimized_dir } => evaluate(cfg, &run, optimized_dir, json),
        Command::Report { run } => report_run(&run, json),
    }
}

fn dataset(cfg: &AppConfig) -> Result<Dataset, Failure> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Failure::usage("no dataset given; pass --dataset <file> or set `dataset` in the config"))?;
    if !path.is_file() {
        return Err(Failure::usage(format!("dataset not found: {}", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::data)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn default_run_id() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("run-{secs}")
}

fn apply_run_args(options: &mut RunOptions, args: &RunArgs) {
    if args.no_memory {
        options.optimizer.memory_enabled = false;
    }
    if let Some(b) = args.batch_size {
        options.optimizer.batch_size = b;
    }
    if let Some(m) = args.max_iterations {
        options.optimizer.max_iterations = m;
    }
    if let Some(m) = args.citation_mode {
        options.optimizer.citation_mode = m;
    }
    if let Some(n) = args.train_size {
        options.train_size = Some(n);
    }
    if let Some(s) = args.eval_split {
        options.eval_split = s;
    }
}

fn write_run(out_dir: &Path, output: &RunOutput) -> Result<(PathBuf, Vec<PathBuf>), Failure> {
    let run_path = out_dir.join("runs").join(&output.record.run_id).join("run.json");
    let mut pages = Vec::new();
    for (id, html) in &output.optimized {
        let p = out_dir.join("optimized").join(format!("{id}.html"));
        write(&p, html)?;
        pages.push(p);
    }
    write(&run_path, &output.record.to_json())?;
    Ok((run_path, pages))
}

fn optimize(
    cfg: &AppConfig,
    args: &RunArgs,
    run_id: Option<String>,
    pages: Option<Vec<String>>,
    vanilla: bool,
    json: bool,
) -> Result<(), Failure> {
    let dataset = dataset(cfg)?;
    let mut options = RunOptions {
        optimizer: cfg.optimizer.clone(),
        optimize: !vanilla,
        eval_split: cfg.eval_split,
        train_size: cfg.train_size,
        pages,
    };
    apply_run_args(&mut options, args);
    let llm = cfg.llm()?;
    let embedder = cfg.metrics.embedder();
    let run_id = run_id.unwrap_or_else(default_run_id);
    let (output, error) = match pipeline::run(&dataset, &options, &run_id, &*llm, &*embedder, cfg.threads()) {
        Ok(o) => (o, None),
        Err(f) => {
            let f = *f;
            if error_code(&f.error) == EXIT_USAGE && f.output.record.pages.is_empty() {
                return Err(Failure::usage(f.error.to_string()));
            }
            (f.output, Some(f.error))
        }
    };
    let (run_path, written) = write_run(&cfg.out_dir, &output)?;
    let metrics = output
        .record
        .metrics
        .clone()
        .unwrap_or_else(|| summarize(&output.record));
    if json {
        print_json(&json!({
            "run_id": output.record.run_id,
            "run_record": run_path,
            "optimized": written,
            "metrics": metrics,
            "aborted": output.record.aborted,
        }));
    } else {
        println!(
            "run {}: {} pages, {} evaluated queries",
            output.record.run_id,
            output.record.pages.len(),
            output.record.outcomes.len()
        );
        print!("{}", metric_table(&metrics, METHOD));
        println!("run record: {}", run_path.display());
        println!("optimized pages: {}", written.len());
    }
    match error {
        None => Ok(()),
        Some(e) => Err(Failure {
            code: EXIT_PARTIAL,
            error: anyhow!("run aborted, partial record written to {}: {e}", run_path.display()),
        }),
    }
}

struct Target {
    query: QueryRecord,
    pool: Vec<agentgeo_core::engine::CandidateDoc>,
    html: String,
}

fn target(dataset: &Dataset, query_id: &str, html: Option<&Path>) -> Result<Target, Failure> {
    let query = dataset
        .query(query_id)
        .cloned()
        .ok_or_else(|| Failure::usage(format!("unknown query `{query_id}`")))?;
    let mut pool = pools_from_dataset(dataset, std::slice::from_ref(&query))?
        .remove(&query.id)
        .unwrap_or_default();
    let page = dataset
        .page(&query.page_id)
        .ok_or_else(|| Failure::data(anyhow!("page {} is missing", query.page_id)))?;
    let html = match html {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::usage(format!("cannot read {}: {e}", p.display())))?,
        None => page.raw_html.clone(),
    };
    pool = with_target(&pool, &query.page_id, &html);
    Ok(Target { query, pool, html })
}

fn check(cfg: &AppConfig, llm: &dyn LlmClient, t: &Target) -> Result<CitationOutcome, Failure> {
    Ok(verify_citation(
        &t.query.id,
        &t.query.text,
        &t.query.page_id,
        &t.pool,
        &cfg.optimizer.engine(),
        llm,
    )?)
}

fn simulate(cfg: &AppConfig, query_id: &str, html: Option<&Path>, json: bool) -> Result<(), Failure> {
    let dataset = dataset(cfg)?;
    let t = target(&dataset, query_id, html)?;
    let llm = cfg.llm()?;
    let outcome = check(cfg, &*llm, &t)?;
    if json {
        print_json(&outcome);
        return Ok(());
    }
    let mut out = String::new();
    let _ = writeln!(out, "query {}: {}", t.query.id, t.query.text);
    let _ = writeln!(out, "sources:");
    for (i, id) in outcome.ranked_candidates.iter().enumerate() {
        let mark = if *id == outcome.target_id { " (target)" } else { "" };
        let _ = writeln!(out, "  [{}] {id}{mark}", i + 1);
    }
    let _ = writeln!(out, "answer:\n{}", outcome.answer.full_text.trim_end());
    let _ = writeln!(out, "sentences:");
    for s in &outcome.answer.sentences {
        let cites: Vec<String> = s.citations.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "  {} [{}]", s.text, cites.join(", "));
    }
    let _ = writeln!(
        out,
        "V({}, {}) = {}",
        t.query.id,
        outcome.target_id,
        u8::from(outcome.target_cited)
    );
    print!("{out}");
    Ok(())
}

fn diagnose_query(cfg: &AppConfig, query_id: &str, html: Option<&Path>, json: bool) -> Result<(), Failure> {
    let dataset = dataset(cfg)?;
    let t = target(&dataset, query_id, html)?;
    let llm = cfg.llm()?;
    let outcome = check(cfg, &*llm, &t)?;
    if outcome.target_cited {
        if json {
            print_json(&json!({"query_id": t.query.id, "cited": true}));
        } else {
            println!(
                "{} is already cited for {}; nothing to diagnose",
                t.query.page_id, t.query.id
            );
        }
        return Ok(());
    }
    let competitor = select_competitor(&outcome)?;
    let competitor_html = t
        .pool
        .iter()
        .find(|d| d.id == competitor.id)
        .map(|d| d.html.clone())
        .unwrap_or_default();
    let d = diagnose(&t.query.text, &t.html, &competitor.id, &competitor_html, &*llm)?;
    if json {
        print_json(&d);
    } else {
        println!("root cause: {}", d.root_cause);
        println!("severity: {}", d.severity.as_str());
        println!("competitor: {}", d.competitor_id);
        println!("confidence: {:.2}", d.confidence);
        if !d.explanation.is_empty() {
            println!("explanation: {}", d.explanation);
        }
    }
    Ok(())
}

fn run_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("run.json")
    } else {
        path.to_path_buf()
    }
}

fn load_run(path: &Path) -> Result<(PathBuf, RunRecord), Failure> {
    let file = run_file(path);
    if !file.is_file() {
        return Err(Failure::usage(format!("run record not found: {}", file.display())));
    }
    let text = fs::read_to_string(&file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(Failure::data)?;
    Ok((file, RunRecord::from_json(&text)?))
}

fn evaluate(cfg: &AppConfig, run: &Path, optimized_dir: Option<PathBuf>, json: bool) -> Result<(), Failure> {
    let (file, mut record) = load_run(run)?;
    let dataset = dataset(cfg)?;
    let dir = optimized_dir.unwrap_or_else(|| cfg.out_dir.join("optimized"));
    let texts: Vec<String> = dataset.webpages.iter().map(|p| extract_text(&p.raw_html)).collect();
    let idf = IdfTable::new(texts.iter().map(String::as_str));
    let embedder = cfg.metrics.embedder();
    let mut per_page = BTreeMap::new();
    for page in &mut record.pages {
        let Some(name) = &page.optimized else { continue };
        let original = dataset
            .page(&page.page_id)
            .ok_or_else(|| Failure::data(anyhow!("page {} is not in the dataset", page.page_id)))?;
        let path = dir.join(name);
        let html = fs::read_to_string(&path)
            .with_context(|| format!("missing optimized page {}", path.display()))
            .map_err(Failure::data)?;
        let f = faithfulness(&original.raw_html, &html, &idf, &*embedder)?;
        page.faithfulness = Some(f);
        per_page.insert(page.page_id.clone(), f);
    }
    let metrics = summarize(&record);
    let out = json!({"run_id": record.run_id, "metrics": metrics, "faithfulness": per_page});
    let metrics_path = file.with_file_name("metrics.json");
    write(
        &metrics_path,
        &serde_json::to_string_pretty(&out).expect("metrics serialize"),
    )?;
    if json {
        print_json(&out);
    } else {
        print!("{}", metric_table(&metrics, METHOD));
    }
    Ok(())
}

fn report_run(run: &Path, json: bool) -> Result<(), Failure> {
    let (_, record) = load_run(run)?;
    let tables = report(&record);
    if json {
        print_json(&tables);
    } else {
        print!("{}", tables.render());
    }
    Ok(())
}

fn build_bench(cfg: &AppConfig, output: &Path, pages: Option<Vec<String>>, json: bool) -> Result<(), Failure> {
    let input = dataset(cfg)?;
    let selected: Vec<String> = match pages {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|id| input.page(id).is_none()) {
                return Err(Failure::usage(format!("unknown page `{bad}`")));
            }
            ids
        }
        None => input.webpages.iter().map(|w| w.id.clone()).collect(),
    };
    let llm = cfg.llm()?;
    let pool: Vec<String> = input.webpages.iter().map(|w| w.id.clone()).collect();
    let mut dataset = input.clone();
    let mut summary = Vec::new();
    for id in &selected {
        let page = input.page(id).expect("checked above");
        let set = match assemble_query_set(page, &cfg.querygen, &*llm) {
            Ok(s) => s,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                tracing::warn!(page = %id, "skipping page: {e}");
                summary.push(json!({"page_id": id, "error": e.to_string()}));
                continue;
            }
        };
        if let Some(old) = dataset.queries.remove(id) {
            for q in old {
                dataset.pools.remove(&q.id);
            }
        }
        for q in set.queries() {
            dataset.pools.insert(q.id.clone(), pool.clone());
        }
        let records: Vec<QueryRecord> = set.queries().cloned().collect();
        summary.push(json!({
            "page_id": id,
            "train": set.train.len(),
            "test": set.test.len(),
            "filtered": set.filtered.len(),
            "warnings": set.warnings.len(),
        }));
        dataset.queries.insert(id.clone(), records);
    }
    if dataset.queries.values().all(Vec::is_empty) {
        return Err(Failure::data(anyhow!("no page produced queries")));
    }
    save_dataset(output, &dataset)?;
    if json {
        print_json(&json!({"output": output, "pages": summary}));
    } else {
        for s in &summary {
            match s.get("error") {
                Some(e) => println!(
                    "{}: skipped ({})",
                    s["page_id"].as_str().unwrap_or(""),
                    e.as_str().unwrap_or("")
                ),
                None => println!(
                    "{}: {} train, {} test, {} filtered",
                    s["page_id"].as_str().unwrap_or(""),
                    s["train"],
                    s["test"],
                    s["filtered"]
                ),
            }
        }
        println!("dataset written to {}", output.display());
    }
    Ok(())
}
