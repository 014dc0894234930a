//! Command-line entry points binding the pipeline into a runnable tool.
//!
//! Commands: extract | build | optimize | replay | eval | negctl | report,
//! plus bench to materialize the bundled synthetic benchmark. Exit codes:
//! 0 success, 2 input error, 3 integrity/config error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agent::{config_fingerprint, run_agent, RagTrace};
use crate::benchmark::{self, BenchmarkConfig};
use crate::eval::{
    negative_control, prepare_experiment, render_csv, render_table, run_experiment,
    ExperimentInputs, NegativeControlSummary, QueryRecord, QuerySource,
};
use crate::model::{
    nugget_doc_id, render_indexable, Document, FeedbackEvent, IndexableNugget, Nugget, Variant,
};
use crate::pipeline::{
    filter_actionable, nugget_from_article, optimize_nugget, OptimizeContext,
};
use crate::provider::Provider;
use crate::rng::{mix, ns, SplitMix64};
use crate::storage::{
    check_fingerprint, read_jsonl, write_json_pretty, write_jsonl, OutputLock, RunConfig,
    StorageError,
};
use crate::text::fnv1a64;
use crate::{Index, Search};

#[derive(Debug, Parser)]
#[command(name = "nugget-forge", version, about = "Feedback-driven factual nuggets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter the feedback stream into actionable nuggets.
    Extract {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build indexable candidates for the requested variants (A-D).
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "A,B,C,D")]
        variants: String,
    },
    /// Optimize nuggets with the retrieval stack in the loop (variant E).
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Optimize the nugget extracted from this event only.
        #[arg(long, conflicts_with = "all")]
        event: Option<String>,
        /// Optimize every nugget in the store.
        #[arg(long)]
        all: bool,
    },
    /// Run queries through the agent and dump the traces.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: Option<String>,
        /// File with one query per line.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Track retrieval/citation flags for this nugget id.
        #[arg(long)]
        nugget: Option<String>,
    },
    /// Evaluate construction variants over tagged query sources.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "A,B,C,D,E")]
        variants: String,
        #[arg(long, default_value = "in_sample,historical,synthetic")]
        sources: String,
        /// table | csv | json (report.json is always written)
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Replay unrelated traffic against the inserted nuggets.
    Negctl {
        #[arg(long)]
        config: PathBuf,
        /// Number of queries sampled from the query log.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// File with one query per line (overrides sampling).
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Render a stored report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Materialize the bundled synthetic benchmark into a directory.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Map storage errors onto the documented exit codes.
pub fn exit_code(err: &StorageError) -> i32 {
    match err {
        StorageError::Input(_) => 2,
        StorageError::Integrity(_) => 3,
        StorageError::Io(_) => 2,
    }
}

pub fn run(cli: Cli) -> Result<(), StorageError> {
    match cli.command {
        Command::Extract { config } => cmd_extract(&RunConfig::load(&config)?),
        Command::Build { config, variants } => {
            cmd_build(&RunConfig::load(&config)?, &parse_variants(&variants)?)
        }
        Command::Optimize { config, event, all } => {
            cmd_optimize(&RunConfig::load(&config)?, event.as_deref(), all)
        }
        Command::Replay { config, query, queries, nugget } => cmd_replay(
            &RunConfig::load(&config)?,
            query.as_deref(),
            queries.as_deref(),
            nugget.as_deref(),
        ),
        Command::Eval { config, variants, sources, format } => cmd_eval(
            &RunConfig::load(&config)?,
            &parse_variants(&variants)?,
            &parse_sources(&sources)?,
            &format,
        ),
        Command::Negctl { config, n, queries } => {
            cmd_negctl(&RunConfig::load(&config)?, n, queries.as_deref())
        }
        Command::Report { input, format } => cmd_report(&input, &format),
        Command::Bench { out, seed } => cmd_bench(&out, seed),
    }
}

fn parse_variants(spec: &str) -> Result<Vec<Variant>, StorageError> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let v = Variant::parse(part)
            .ok_or_else(|| StorageError::Input(format!("unknown variant: {part}")))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(StorageError::Input("no variants requested".to_string()));
    }
    Ok(out)
}

fn parse_sources(spec: &str) -> Result<Vec<QuerySource>, StorageError> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let s = match part.trim() {
            "in_sample" => QuerySource::InSample,
            "historical" => QuerySource::Historical,
            "synthetic" => QuerySource::Synthetic,
            other => {
                return Err(StorageError::Input(format!("unknown query source: {other}")))
            }
        };
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(StorageError::Input("no query sources requested".to_string()));
    }
    Ok(out)
}

fn load_corpus_index(config: &RunConfig) -> Result<Index, StorageError> {
    let docs: Vec<Document> = read_jsonl(&config.corpus_file())?;
    let mut idx = Index::new(config.stack.embed_dim);
    idx.upsert_all(docs)
        .map_err(|e| StorageError::Input(format!("corpus: {e}")))?;
    Ok(idx)
}

fn load_query_log(config: &RunConfig) -> Result<Vec<QueryRecord>, StorageError> {
    match &config.query_log_path {
        Some(path) => read_jsonl(path),
        None => Ok(Vec::new()),
    }
}

fn cmd_extract(config: &RunConfig) -> Result<(), StorageError> {
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let events: Vec<FeedbackEvent> = read_jsonl(&config.feedback_path)?;
    let provider = Provider::new(config.provider.clone());

    #[derive(serde::Serialize)]
    struct Skipped {
        event_id: String,
        reason: String,
    }

    let mut nuggets: Vec<Nugget> = Vec::new();
    let mut skipped: Vec<Skipped> = Vec::new();
    for event in &events {
        match filter_actionable(event, &provider) {
            Ok(result) => match result.article.filter(|_| result.kb_candidate) {
                Some(article) => nuggets.push(nugget_from_article(event, &article)),
                None => skipped.push(Skipped {
                    event_id: event.event_id.clone(),
                    reason: result.reason,
                }),
            },
            // never silently dropped: unprocessed events land in the store
            Err(e) => skipped.push(Skipped {
                event_id: event.event_id.clone(),
                reason: format!("unprocessed: {e}"),
            }),
        }
    }
    write_jsonl(&config.output_dir.join("nuggets.jsonl"), &nuggets)?;
    write_jsonl(&config.output_dir.join("skipped.jsonl"), &skipped)?;
    if events.is_empty() {
        println!("actionable rate: n/a (0 events)");
    } else {
        println!(
            "actionable rate: {}/{} ({:.1}%)",
            nuggets.len(),
            events.len(),
            100.0 * nuggets.len() as f64 / events.len() as f64
        );
    }
    Ok(())
}

fn load_nugget_store(config: &RunConfig) -> Result<Vec<(Nugget, FeedbackEvent)>, StorageError> {
    let nuggets: Vec<Nugget> = read_jsonl(&config.output_dir.join("nuggets.jsonl"))?;
    let events: Vec<FeedbackEvent> = read_jsonl(&config.feedback_path)?;
    let by_id: BTreeMap<&str, &FeedbackEvent> =
        events.iter().map(|e| (e.event_id.as_str(), e)).collect();
    nuggets
        .into_iter()
        .map(|n| {
            let ev = by_id.get(n.source_event_id.as_str()).ok_or_else(|| {
                StorageError::Input(format!(
                    "nugget {} references unknown event {}",
                    n.nugget_id, n.source_event_id
                ))
            })?;
            Ok((n, (*ev).clone()))
        })
        .collect()
}

fn cmd_build(config: &RunConfig, variants: &[Variant]) -> Result<(), StorageError> {
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let store = load_nugget_store(config)?;
    let provider = Provider::new(config.provider.clone());
    let seed = config.seeds[0];
    for &variant in variants {
        if variant == Variant::E {
            return Err(StorageError::Input(
                "variant E comes from the optimize command".to_string(),
            ));
        }
        let mut candidates: Vec<IndexableNugget> = Vec::new();
        for (nugget, event) in &store {
            let item_seed = mix(&[
                seed,
                ns::VARIANT_BUILD,
                fnv1a64(nugget.nugget_id.as_bytes()),
                variant as u64,
            ]);
            let candidate = crate::pipeline::build_variant(
                nugget,
                &event.trigger_query,
                variant,
                item_seed,
                &provider,
            )
            .map_err(|e| StorageError::Input(format!("build {}: {e}", nugget.nugget_id)))?;
            candidates.push(candidate);
        }
        let path = config.output_dir.join("candidates").join(format!("{variant}.jsonl"));
        write_jsonl(&path, &candidates)?;
        println!("variant {variant}: {} candidates -> {}", candidates.len(), path.display());
    }
    Ok(())
}

fn cmd_optimize(
    config: &RunConfig,
    event: Option<&str>,
    all: bool,
) -> Result<(), StorageError> {
    if event.is_none() && !all {
        return Err(StorageError::Input("pass --event <id> or --all".to_string()));
    }
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let store = load_nugget_store(config)?;
    let targets: Vec<&(Nugget, FeedbackEvent)> = match event {
        Some(id) => {
            let hit: Vec<_> =
                store.iter().filter(|(_, ev)| ev.event_id == id).collect();
            if hit.is_empty() {
                return Err(StorageError::Input(format!("unknown event_id: {id}")));
            }
            hit
        }
        None => store.iter().collect(),
    };

    let idx = load_corpus_index(config)?;
    let search = Search::new(config.stack.clone());
    let provider = Provider::new(config.provider.clone());
    let optimize_cfg = config.optimize_config();
    let fingerprint = config_fingerprint(&search, &idx, &config.agent, &provider);
    check_fingerprint(&config.output_dir, &fingerprint)?;

    let optimized_path = config.output_dir.join("optimized").join("E.jsonl");
    let mut optimized: BTreeMap<String, IndexableNugget> = if optimized_path.exists() {
        read_jsonl::<IndexableNugget>(&optimized_path)?
            .into_iter()
            .map(|c| (c.nugget.nugget_id.clone(), c))
            .collect()
    } else {
        BTreeMap::new()
    };

    let seed = config.seeds[0];
    let mut histogram = [0u32; 4];
    for (nugget, ev) in targets {
        let item_seed = mix(&[
            seed,
            ns::VARIANT_BUILD,
            fnv1a64(nugget.nugget_id.as_bytes()),
            Variant::E as u64,
        ]);
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &config.agent,
            provider: &provider,
            config: &optimize_cfg,
        };
        let (candidate, log) =
            optimize_nugget(&ctx, nugget, &ev.trigger_query, item_seed, Some(&ev.free_text))
                .map_err(|e| {
                    StorageError::Input(format!("optimize {}: {e}", nugget.nugget_id))
                })?;
        let run_dir = config.output_dir.join("runs").join(&nugget.nugget_id);
        write_json_pretty(&run_dir.join("log.json"), &log)?;
        println!(
            "{}: {} after {} iteration(s), {} anchors",
            nugget.nugget_id,
            if log.converged { "converged" } else { "NOT CONVERGED" },
            log.iterations_used,
            candidate.anchors.len()
        );
        if log.converged {
            histogram[(log.iterations_used.min(3) - 1) as usize] += 1;
        } else {
            histogram[3] += 1;
        }
        optimized.insert(nugget.nugget_id.clone(), candidate);
    }
    println!(
        "iteration histogram: t1={} t2={} t3={} non_converged={}",
        histogram[0], histogram[1], histogram[2], histogram[3]
    );
    let rows: Vec<&IndexableNugget> = optimized.values().collect();
    write_jsonl(&optimized_path, &rows)?;
    Ok(())
}

fn cmd_replay(
    config: &RunConfig,
    query: Option<&str>,
    queries_file: Option<&Path>,
    nugget: Option<&str>,
) -> Result<(), StorageError> {
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let mut queries: Vec<String> = Vec::new();
    if let Some(q) = query {
        queries.push(q.to_string());
    }
    if let Some(path) = queries_file {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| StorageError::Input(format!("cannot read {path:?}: {e}")))?;
        queries.extend(raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    if queries.is_empty() {
        return Err(StorageError::Input("pass --query or --queries".to_string()));
    }

    let mut idx = load_corpus_index(config)?;
    let optimized_path = config.output_dir.join("optimized").join("E.jsonl");
    if optimized_path.exists() {
        let candidates: Vec<IndexableNugget> = read_jsonl(&optimized_path)?;
        for c in &candidates {
            let doc = render_indexable(c)
                .map_err(|e| StorageError::Input(format!("render {}: {e}", c.nugget.nugget_id)))?;
            idx.upsert(doc).map_err(|e| StorageError::Input(e.to_string()))?;
        }
    }
    let search = Search::new(config.stack.clone());
    let provider = Provider::new(config.provider.clone());
    let nugget_doc = nugget.map(nugget_doc_id);

    let traces: Vec<RagTrace> = queries
        .iter()
        .map(|q| {
            run_agent(
                &idx,
                q,
                &search,
                &config.agent,
                &provider,
                mix(&[config.seeds[0], fnv1a64(q.as_bytes())]),
                nugget_doc.as_deref(),
            )
        })
        .collect();
    let path = config.output_dir.join("traces.jsonl");
    write_jsonl(&path, &traces)?;
    for t in &traces {
        println!(
            "{} -> {} gated, retrieved={} cited={}",
            t.input_query,
            t.final_gated.len(),
            t.nugget_retrieved,
            t.nugget_cited
        );
    }
    println!("traces -> {}", path.display());
    Ok(())
}

fn cmd_eval(
    config: &RunConfig,
    variants: &[Variant],
    sources: &[QuerySource],
    format: &str,
) -> Result<(), StorageError> {
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let corpus: Vec<Document> = read_jsonl(&config.corpus_file())?;
    let events: Vec<FeedbackEvent> = read_jsonl(&config.feedback_path)?;
    let query_log = load_query_log(config)?;
    let search = Search::new(config.stack.clone());
    let provider = Provider::new(config.provider.clone());

    let inputs = ExperimentInputs { corpus: &corpus, events: &events, query_log: &query_log };
    let experiment = prepare_experiment(
        &inputs,
        sources,
        config.synthetic_per_event,
        config.seeds[0],
        &search,
        &provider,
    )
    .map_err(|e| StorageError::Input(e.to_string()))?;

    let fingerprint =
        config_fingerprint(&search, &experiment.index, &config.agent, &provider);
    check_fingerprint(&config.output_dir, &fingerprint)?;

    let (report, _slices) = run_experiment(
        &experiment,
        variants,
        &config.seeds,
        &search,
        &config.agent,
        &provider,
        &config.optimize_config(),
    )
    .map_err(|e| match e {
        crate::eval::EvalError::Isolation(msg) => StorageError::Integrity(msg),
        other => StorageError::Input(other.to_string()),
    })?;

    write_json_pretty(&config.output_dir.join("report.json"), &report)?;
    std::fs::write(&config.output_dir.join("report.txt"), render_table(&report))?;
    match format {
        "csv" => {
            let csv = render_csv(&report);
            std::fs::write(config.output_dir.join("report.csv"), &csv)?;
            print!("{csv}");
        }
        "json" => println!(
            "{}",
            serde_json::to_string_pretty(&report)
                .map_err(|e| StorageError::Input(e.to_string()))?
        ),
        _ => print!("{}", render_table(&report)),
    }
    Ok(())
}

fn cmd_negctl(config: &RunConfig, n: usize, queries_file: Option<&Path>) -> Result<(), StorageError> {
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let mut idx = load_corpus_index(config)?;
    let optimized_path = config.output_dir.join("optimized").join("E.jsonl");
    if !optimized_path.exists() {
        return Err(StorageError::Input(
            "no optimized nuggets found; run optimize first".to_string(),
        ));
    }
    let candidates: Vec<IndexableNugget> = read_jsonl(&optimized_path)?;
    for c in &candidates {
        let doc = render_indexable(c)
            .map_err(|e| StorageError::Input(format!("render {}: {e}", c.nugget.nugget_id)))?;
        idx.upsert(doc).map_err(|e| StorageError::Input(e.to_string()))?;
    }

    let queries: Vec<String> = match queries_file {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| StorageError::Input(format!("cannot read {path:?}: {e}")))?;
            raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
        }
        None => {
            let log = load_query_log(config)?;
            if log.is_empty() {
                return Err(StorageError::Input(
                    "negctl needs --queries or a query_log_path".to_string(),
                ));
            }
            let mut rng = SplitMix64::new(config.seeds[0]);
            (0..n).map(|_| rng.pick(&log).query.clone()).collect()
        }
    };

    let search = Search::new(config.stack.clone());
    let provider = Provider::new(config.provider.clone());
    let report =
        negative_control(&idx, &queries, &search, &config.agent, &provider, config.seeds[0]);

    let dir = config.output_dir.join("negctl");
    write_jsonl(&dir.join("flagged.jsonl"), &report.flagged)?;
    write_json_pretty(
        &dir.join("summary.json"),
        &NegativeControlSummary {
            total_queries: report.total_queries,
            retrieved_count: report.retrieved_count,
            cited_count: report.cited_count,
        },
    )?;
    println!(
        "negative control: {}/{} retrieved, {}/{} cited, flagged traces -> {}",
        report.retrieved_count,
        report.total_queries,
        report.cited_count,
        report.total_queries,
        dir.join("flagged.jsonl").display()
    );
    Ok(())
}

fn cmd_report(input: &Path, format: &str) -> Result<(), StorageError> {
    let raw = std::fs::read_to_string(input)
        .map_err(|e| StorageError::Input(format!("cannot read {input:?}: {e}")))?;
    let report: crate::eval::EvalReport = serde_json::from_str(&raw)
        .map_err(|e| StorageError::Input(format!("invalid report: {e}")))?;
    match format {
        "csv" => print!("{}", render_csv(&report)),
        _ => print!("{}", render_table(&report)),
    }
    Ok(())
}

fn cmd_bench(out: &Path, seed: Option<u64>) -> Result<(), StorageError> {
    let mut bench_cfg = BenchmarkConfig::default();
    if let Some(s) = seed {
        bench_cfg.seed = s;
    }
    let bench = benchmark::generate(&bench_cfg);
    std::fs::create_dir_all(out.join("corpus"))?;
    write_jsonl(&out.join("corpus").join("documents.jsonl"), &bench.corpus)?;
    write_jsonl(&out.join("feedback.jsonl"), &bench.events)?;
    write_jsonl(&out.join("query_log.jsonl"), &bench.query_log)?;
    let negative: Vec<QueryRecord> =
        bench.negative_queries.iter().map(|q| QueryRecord { query: q.clone() }).collect();
    write_jsonl(&out.join("negative_queries.jsonl"), &negative)?;
    let disjoint: Vec<QueryRecord> =
        bench.disjoint_queries.iter().map(|q| QueryRecord { query: q.clone() }).collect();
    write_jsonl(&out.join("disjoint_queries.jsonl"), &disjoint)?;

    let config = RunConfig {
        corpus_path: out.join("corpus"),
        feedback_path: out.join("feedback.jsonl"),
        query_log_path: Some(out.join("query_log.jsonl")),
        pass_policy: crate::model::PassPolicy::All,
        probe_paraphrases: 5,
        synthetic_per_event: 5,
        seeds: vec![11, 22, 33],
        output_dir: out.join("out"),
        ..RunConfig::default()
    };
    write_json_pretty(&out.join("config.json"), &config)?;
    println!(
        "benchmark written to {}: {} docs, {} events, {} log queries",
        out.display(),
        bench.corpus.len(),
        bench.events.len(),
        bench.query_log.len()
    );
    Ok(())
}
