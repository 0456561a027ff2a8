//! Command-line front end: reproducible runs that always leave a manifest
//! (resolved config + content hashes of the inputs) and machine-readable
//! results next to their outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::corpus::{
    document_from_json, generate_synthetic_corpus, load_split, read_jsonl, save_split, DatasetSplit,
    SynthConfig, TaskKind,
};
use crate::error::{Error, Result};
use crate::explain::{
    cards_markdown, explain_document, explanation_json, explanation_markdown, project_prototypes,
    HttpSummarizer, Summarizer, DEFAULT_K,
};
use crate::hierarchy::Activation;
use crate::metrics::render_table;
use crate::model::ModelParams;
use crate::training::{
    evaluate_docs, load_checkpoint, prepare_split, save_checkpoint, train, NoopObserver, TrainConfig,
};

#[derive(Parser)]
#[command(name = "protositex", version, about = "Prototype-grounded text classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Segment raw JSONL documents into a train/validation/test dataset.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset split.
    Evaluate(EvaluateArgs),
    /// Explain one document with a trained checkpoint.
    Explain(ExplainArgs),
    /// Ground every prototype in its nearest training sub-sentences.
    Project(ProjectArgs),
    /// Sequential grid sweep over prototype count and attention heads.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing results in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    docs: usize,
    #[arg(long, default_value_t = 8)]
    labels: usize,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    out: OutArgs,
    /// JSONL file of {"id", "text", "labels", optional "subsentence_labels"}.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated label names defining column order.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[arg(long, default_value = "multilabel")]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// TOML file with training settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    vocab_buckets: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    i1: Option<usize>,
    #[arg(long)]
    i2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    head_activation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Dataset directory produced by `synth` or `prepare`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Validate the config and dataset without optimizing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Explain the dataset document with this id...
    #[arg(long)]
    doc_id: Option<String>,
    /// ...or explain free-form text instead.
    #[arg(long)]
    text: Option<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    summarizer_endpoint: Option<String>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    summarizer_endpoint: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Comma-separated prototype counts to try.
    #[arg(long, value_delimiter = ',', default_value = "8,16")]
    q_grid: Vec<usize>,
    /// Comma-separated head counts to try.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    h_grid: Vec<usize>,
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits in clap's model
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Project(args) => cmd_project(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(format!("{:x}", Sha256::digest(&data)))
}

fn hash_inputs(paths: &[&Path]) -> Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    for path in paths {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for entry in entries {
                map.insert(entry.display().to_string(), sha256_file(&entry)?.into());
            }
        } else if path.is_file() {
            map.insert(path.display().to_string(), sha256_file(path)?.into());
        }
    }
    Ok(serde_json::Value::Object(map))
}

/// Create the output directory and guard result files against accidental
/// overwrites: reruns into the same directory require --force.
fn prepare_out(out: &OutArgs, files: &[&str]) -> Result<()> {
    fs::create_dir_all(&out.out).map_err(|e| Error::io(out.out.display().to_string(), e))?;
    if !out.force {
        for file in files {
            let p = out.out.join(file);
            if p.exists() {
                return Err(Error::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_manifest(out: &OutArgs, command: &str, config: serde_json::Value, inputs: &[&Path]) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "inputs": hash_inputs(inputs)?,
    });
    write_json(&out.out.join("manifest.json"), &manifest)
}

fn load_train_config(overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            toml::from_str(&raw).map_err(|e| Error::Deserialization {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    let triple = |v: &Vec<f64>, name: &str| -> Result<[f64; 3]> {
        <[f64; 3]>::try_from(v.clone())
            .map_err(|_| Error::Config(format!("{name} needs exactly three comma-separated values")))
    };
    if let Some(v) = overrides.q { cfg.q = v; }
    if let Some(v) = overrides.heads { cfg.heads = v; }
    if let Some(v) = overrides.d { cfg.d = v; }
    if let Some(v) = overrides.vocab_buckets { cfg.vocab_buckets = v; }
    if let Some(v) = &overrides.alpha { cfg.alpha = triple(v, "--alpha")?; }
    if let Some(v) = &overrides.lambda { cfg.lambda = triple(v, "--lambda")?; }
    if let Some(v) = overrides.i1 { cfg.i1 = v; }
    if let Some(v) = overrides.i2 { cfg.i2 = v; }
    if let Some(v) = overrides.batch_size { cfg.batch_size = v; }
    if let Some(v) = overrides.patience { cfg.patience = v; }
    if let Some(v) = overrides.threshold { cfg.threshold = v; }
    if let Some(v) = &overrides.head_activation {
        cfg.head_activation = match v.as_str() {
            "softmax" => Activation::Softmax,
            "sigmoid" => Activation::Sigmoid,
            other => return Err(Error::Config(format!("unknown activation {other:?}"))),
        };
    }
    if let Some(v) = overrides.epochs { cfg.max_epochs = v; }
    if let Some(v) = overrides.lr {
        cfg.lr_clustering = v;
        cfg.lr_classification = v;
    }
    if let Some(v) = overrides.dropout { cfg.dropout = v; }
    if let Some(v) = overrides.seed { cfg.seed = v; }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    prepare_out(&args.out, &["labels.txt", "meta.json"])?;
    let split = generate_synthetic_corpus(args.seed, args.docs, args.labels, &SynthConfig::default())?;
    save_split(&split, &args.out.out)?;
    write_manifest(
        &args.out,
        "synth",
        serde_json::json!({"seed": args.seed, "docs": args.docs, "labels": args.labels}),
        &[],
    )
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    if args.labels.is_empty() {
        return Err(Error::Config("--labels must name at least one label".into()));
    }
    let task: TaskKind = args.task.parse()?;
    prepare_out(&args.out, &["labels.txt", "meta.json"])?;
    let records = read_jsonl(&args.input)?;
    let mut docs = Vec::with_capacity(records.len());
    for record in &records {
        docs.push(document_from_json(record, &args.labels)?);
    }
    // seeded 70/20/10 split
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    docs.shuffle(&mut rng);
    let n = docs.len();
    let n_test = n / 10;
    let n_val = n / 5;
    let test = docs.split_off(n - n_test);
    let validation = docs.split_off(docs.len() - n_val);
    let split = DatasetSplit { train: docs, validation, test, label_names: args.labels.clone(), task_kind: task };
    split.validate()?;
    save_split(&split, &args.out.out)?;
    write_manifest(
        &args.out,
        "prepare",
        serde_json::json!({"task": args.task, "labels": args.labels, "seed": args.seed}),
        &[&args.input],
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = load_train_config(&args.overrides)?;
    let dataset = load_split(&args.data)?;
    if args.dry_run {
        dataset.validate()?;
        config.model_config(dataset.num_labels(), dataset.task_kind).validate()?;
        println!("dry run ok: {} train / {} validation / {} test documents, steps executed: 0",
            dataset.train.len(), dataset.validation.len(), dataset.test.len());
        return Ok(());
    }
    prepare_out(&args.out, &["checkpoint.json", "results.json"])?;
    write_manifest(&args.out, "train", serde_json::to_value(&config).expect("config"), &[&args.data])?;

    let outcome = train(&dataset, &config, None, &mut NoopObserver)?;
    save_checkpoint(&args.out.out.join("checkpoint.json"), &outcome.checkpoint)?;

    let cfg = &outcome.checkpoint.model;
    let test_report = if dataset.test.is_empty() {
        None
    } else {
        let docs = prepare_split(&dataset.test, cfg, None)?;
        Some(evaluate_docs(&outcome.checkpoint.params, cfg, &docs, &dataset.label_names)?)
    };
    let results = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "steps_clustering": outcome.steps_clustering,
        "steps_classification": outcome.steps_classification,
        "history": outcome.checkpoint.history,
        "inactive_prototypes": outcome.checkpoint.inactive_prototypes,
        "validation": outcome.val_report,
        "test": test_report,
    });
    write_json(&args.out.out.join("results.json"), &results)?;
    if let Some(report) = &test_report {
        print!("{}", render_table(report));
    }
    Ok(())
}

fn select_split<'a>(dataset: &'a DatasetSplit, name: &str) -> Result<&'a [crate::corpus::Document]> {
    match name {
        "train" => Ok(&dataset.train),
        "validation" => Ok(&dataset.validation),
        "test" => Ok(&dataset.test),
        other => Err(Error::Config(format!("unknown split {other:?}; expected train, validation, or test"))),
    }
}

fn check_label_names(checkpoint: &[String], dataset: &[String]) -> Result<()> {
    if checkpoint != dataset {
        return Err(Error::Config(format!(
            "checkpoint labels {checkpoint:?} do not match dataset labels {dataset:?}"
        )));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cp = load_checkpoint(&args.checkpoint)?;
    let dataset = load_split(&args.data)?;
    check_label_names(&cp.label_names, &dataset.label_names)?;
    let docs = select_split(&dataset, &args.split)?;
    if docs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    prepare_out(&args.out, &["results.json"])?;
    write_manifest(
        &args.out,
        "evaluate",
        serde_json::json!({"split": args.split}),
        &[&args.checkpoint, &args.data],
    )?;
    let prepared = prepare_split(docs, &cp.model, None)?;
    let report = evaluate_docs(&cp.params, &cp.model, &prepared, &dataset.label_names)?;
    write_json(&args.out.out.join("results.json"), &serde_json::to_value(&report).expect("report"))?;
    print!("{}", render_table(&report));
    Ok(())
}

fn summarizer_from(endpoint: &Option<String>) -> Summarizer {
    match endpoint {
        Some(url) => match HttpSummarizer::new(url.clone()) {
            Ok(client) => Summarizer::with_client(Box::new(client)),
            Err(e) => {
                log::warn!("summarizer client unavailable ({e}); falling back to offline summaries");
                Summarizer::offline()
            }
        },
        None => Summarizer::offline(),
    }
}

fn build_cards(
    cp: &crate::training::Checkpoint,
    dataset: &DatasetSplit,
    k: usize,
    endpoint: &Option<String>,
) -> Result<Vec<crate::explain::PrototypeCard>> {
    let train_docs = prepare_split(&dataset.train, &cp.model, None)?;
    let mut cards = project_prototypes(&cp.params, &cp.model, &train_docs, k)?;
    let summarizer = summarizer_from(endpoint);
    for card in &mut cards {
        if !card.exemplars.is_empty() {
            card.summary = Some(summarizer.summarize_prototype(card)?);
        }
    }
    Ok(cards)
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let cp = load_checkpoint(&args.checkpoint)?;
    let dataset = load_split(&args.data)?;
    check_label_names(&cp.label_names, &dataset.label_names)?;

    let doc = match (&args.doc_id, &args.text) {
        (Some(id), None) => dataset
            .train
            .iter()
            .chain(&dataset.validation)
            .chain(&dataset.test)
            .find(|d| &d.id == id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no document with id {id:?} in the dataset")))?,
        (None, Some(text)) => {
            let (sentences, subsentences) = crate::corpus::segment_document(text)?;
            crate::corpus::Document {
                id: "adhoc".into(),
                text: text.clone(),
                sentences,
                subsentences,
                doc_labels: vec![0; dataset.num_labels()],
            }
        }
        _ => return Err(Error::Config("pass exactly one of --doc-id or --text".into())),
    };

    prepare_out(&args.out, &["explanation.json", "explanation.md"])?;
    write_manifest(
        &args.out,
        "explain",
        serde_json::json!({"doc_id": args.doc_id, "k": args.k}),
        &[&args.checkpoint, &args.data],
    )?;
    let cards = build_cards(&cp, &dataset, args.k, &args.summarizer_endpoint)?;
    let explanation = explain_document(&doc, &cp.params, &cp.model, &cards, &dataset.label_names, None)?;
    fs::write(args.out.out.join("explanation.json"), explanation_json(&explanation))
        .map_err(|e| Error::io(args.out.out.display().to_string(), e))?;
    let md = explanation_markdown(&explanation);
    fs::write(args.out.out.join("explanation.md"), &md)
        .map_err(|e| Error::io(args.out.out.display().to_string(), e))?;
    print!("{md}");
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<()> {
    let cp = load_checkpoint(&args.checkpoint)?;
    let dataset = load_split(&args.data)?;
    check_label_names(&cp.label_names, &dataset.label_names)?;
    prepare_out(&args.out, &["cards.json", "cards.md"])?;
    write_manifest(
        &args.out,
        "project",
        serde_json::json!({"k": args.k}),
        &[&args.checkpoint, &args.data],
    )?;
    let cards = build_cards(&cp, &dataset, args.k, &args.summarizer_endpoint)?;
    write_json(&args.out.out.join("cards.json"), &serde_json::to_value(&cards).expect("cards"))?;
    fs::write(args.out.out.join("cards.md"), cards_markdown(&cards))
        .map_err(|e| Error::io(args.out.out.display().to_string(), e))?;
    println!("wrote {} prototype cards", cards.len());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_train_config(&args.overrides)?;
    let dataset = load_split(&args.data)?;
    prepare_out(&args.out, &["sweep.json"])?;
    write_manifest(
        &args.out,
        "sweep",
        serde_json::json!({"base": base, "q_grid": args.q_grid, "h_grid": args.h_grid}),
        &[&args.data],
    )?;

    let mut rows = Vec::new();
    for &q in &args.q_grid {
        for &h in &args.h_grid {
            let mut config = base.clone();
            config.q = q;
            config.heads = h;
            config.validate()?;
            let outcome = train(&dataset, &config, None, &mut NoopObserver)?;
            let metric = outcome.checkpoint.history.iter().map(|s| s.val_metric).fold(f64::NEG_INFINITY, f64::max);
            println!("q={q} h={h}: validation metric {metric:.4}");
            rows.push(serde_json::json!({
                "q": q,
                "h": h,
                "best_epoch": outcome.best_epoch,
                "val_metric": metric,
                "inactive_prototypes": outcome.checkpoint.inactive_prototypes.len(),
            }));
        }
    }
    write_json(&args.out.out.join("sweep.json"), &serde_json::json!({"runs": rows}))
}
