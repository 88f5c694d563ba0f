use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qsim::autodiff::Checkpoint;
use qsim::config::ExperimentConfig;
use qsim::corpus::{write_annotation_line, write_annotations, write_corpus, write_embeddings, write_train_pairs};
use qsim::encoders::Encoder;
use qsim::experiment::{method_name, read_corpus, run_all, summarize, Inputs, Manifest, MetricsRow};
use qsim::gates::{decay_profile, heatmap, token_weight_trace, write_trace_csv, Field};
use qsim::lexical::{document, documents, rank_pools, retrieve_top_k, InvertedIndex, Retriever, TfIdfIndex};
use qsim::metrics::{average_precision, significance, Metrics, QueryResult, SignificanceTest};
use qsim::pretrain::{pretrain, PerplexityRecord, Seq2Seq};
use qsim::ranking::rank_evaluation_set;
use qsim::synthetic::{generate, SyntheticConfig};
use qsim::{Error, ErrorKind};

const WORKERS_ENV: &str = "QSIM_WORKERS";

#[derive(Parser)]
#[command(name = "qsim", version, about = "Similar-question retrieval experiments")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a corpus file and report ingestion statistics.
    Preprocess {
        /// Where the cleaned corpus is written.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the encoder as a title decoder and save it.
    Pretrain,
    /// Fine-tune one encoder per configured seed on the ranking objective.
    Train,
    /// Score a checkpoint or lexical baseline on the dev and test sets.
    Evaluate(EvaluateArgs),
    /// Emit candidate lists in annotation format.
    Retrieve(RetrieveArgs),
    /// Dump decay-gate statistics of an RCNN checkpoint.
    AnalyzeGates(GateArgs),
    /// Write a synthetic corpus with planted duplicate clusters.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Greedily decode a title for a question with a pre-trained model.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        question: u64,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Bm25,
    Tfidf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Permutation,
    T,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Second checkpoint to test against, per-query AP paired by query.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "permutation")]
    test: TestKind,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long, value_enum, default_value = "bm25")]
    scorer: Baseline,
    /// File of query ids, one per line; defaults to the dev queries.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Load this BM25 index instead of building one.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Save the built index here.
    #[arg(long)]
    save_index: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
    profile: bool,
    #[arg(long, value_name = "QUESTION_ID")]
    trace: Option<u64>,
    #[arg(long, default_value = "title")]
    field: String,
    /// Print a text heatmap alongside the trace.
    #[arg(long, requires = "trace")]
    heatmap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Numerical) => 3,
        Some(ErrorKind::Data) | None => 2,
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io = c.downcast_ref::<io::Error>().or(match c.downcast_ref::<Error>() {
            Some(Error::Io(e)) => Some(e),
            _ => None,
        });
        io.is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (`| head`) is not a failure
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| Error::Config {
        key: WORKERS_ENV.into(),
        msg: format!("expected a positive integer, got `{v}`"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!(Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{o}`")));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    cfg.check_paths()?;
    cfg.absolutize()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    let cfg = load_config(&cli)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (name, dir) = match &cli.command {
        Command::Preprocess { .. } => ("preprocess", cfg.output_dir.clone()),
        Command::Pretrain => ("pretrain", cfg.output_dir.join("pretrain")),
        Command::Train => ("train", cfg.output_dir.clone()),
        Command::Evaluate(_) => ("evaluate", cfg.output_dir.clone()),
        Command::Retrieve(_) => ("retrieve", cfg.output_dir.clone()),
        Command::AnalyzeGates(_) => ("analyze-gates", cfg.output_dir.clone()),
        Command::Synth { out, .. } => ("synth", out.clone()),
        Command::Decode { .. } => ("decode", cfg.output_dir.clone()),
    };
    match cli.command {
        Command::Preprocess { out } => preprocess(&cfg, &out)?,
        Command::Pretrain => run_pretrain(&cfg, &dir)?,
        Command::Train => run_train(&cfg)?,
        Command::Evaluate(a) => run_evaluate(&cfg, &a)?,
        Command::Retrieve(a) => run_retrieve(&cfg, &a)?,
        Command::AnalyzeGates(a) => run_gates(&cfg, &a)?,
        Command::Synth { out, seed } => run_synth(&out, seed)?,
        Command::Decode {
            checkpoint,
            question,
            max_len,
        } => run_decode(&cfg, &checkpoint, question, max_len)?,
    }
    Manifest::new(name, args, &cfg).write(&dir)?;
    Ok(())
}

fn preprocess(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let corpus = read_corpus(cfg.require("corpus", &cfg.corpus)?)?;
    write_corpus(&corpus, create(out)?)?;
    let stats = corpus.stats();
    println!("questions\t{}", stats.questions);
    println!("avg title length\t{:.2}", stats.avg_title_len);
    println!("avg body length\t{:.2}", stats.avg_body_len);
    fs::create_dir_all(&cfg.output_dir)?;
    serde_json::to_writer_pretty(create(&cfg.output_dir.join("corpus_stats.json"))?, &stats)?;
    Ok(())
}

fn run_pretrain(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let seed = cfg.seeds[0];
    let enc = Encoder::new(cfg.encoder_config(inputs.embeddings.dim()), seed)?;
    let marked = inputs.train.clone().unwrap_or_default();
    let out = pretrain(
        &enc,
        &inputs.corpus,
        &inputs.embeddings,
        &marked,
        &cfg.pretrain_config(seed),
    )?;
    fs::create_dir_all(dir)?;
    out.encoder()?.to_checkpoint(true).save(dir.join("encoder.ckpt"))?;
    out.model.to_checkpoint().save(dir.join("seq2seq.ckpt"))?;
    write_perplexity_csv(&dir.join("perplexity.csv"), &out.history)?;
    println!(
        "vocabulary {}; best epoch {} with heldout perplexity {:.3}",
        out.vocab_size, out.best_epoch, out.history[out.best_epoch].heldout_perplexity
    );
    Ok(())
}

fn write_perplexity_csv(path: &Path, history: &[PerplexityRecord]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,train_loss,heldout_perplexity")?;
    for r in history {
        let loss = r.train_loss.map(|l| format!("{l:e}")).unwrap_or_default();
        writeln!(w, "{},{loss},{:e}", r.epoch, r.heldout_perplexity)?;
    }
    Ok(())
}

fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let runs = run_all(cfg, &inputs)?;
    for r in &runs {
        let dir = cfg.output_dir.join(format!("run_{}", r.seed));
        fs::create_dir_all(&dir)?;
        r.best.to_checkpoint(r.pretrained).save(dir.join("model.ckpt"))?;
        r.report.write_csv(create(&dir.join("history.csv"))?)?;
        r.report.write_jsonl(create(&dir.join("history.jsonl"))?)?;
        if let Some(h) = &r.pretraining {
            write_perplexity_csv(&dir.join("perplexity.csv"), h)?;
        }
    }
    let summary = summarize(&runs)?;
    serde_json::to_writer_pretty(create(&cfg.output_dir.join("summary.json"))?, &summary)?;
    let enc = &runs[0].best;
    let pooling = enc.config().pooling.to_string();
    let mut table = String::new();
    table.push_str("seed\t");
    table.push_str(MetricsRow::HEADER);
    table.push('\n');
    for r in &summary.runs {
        let row = MetricsRow {
            method: method_name(enc, runs[0].pretrained),
            pooling: pooling.clone(),
            dev: Some(r.dev),
            test: r.test,
        };
        table.push_str(&format!("{}\t{}\n", r.seed, row.line()));
    }
    let mean = MetricsRow {
        method: method_name(enc, runs[0].pretrained),
        pooling,
        dev: Some(summary.mean_dev),
        test: summary.mean_test,
    };
    table.push_str(&format!("mean\t{}\n", mean.line()));
    fs::write(cfg.output_dir.join("summary.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn per_query_ap(results: &[QueryResult]) -> Result<Vec<(u64, f64)>> {
    results
        .iter()
        .map(|r| Ok((r.query_id, 100.0 * average_precision(&r.labels)?)))
        .collect()
}

fn run_evaluate(cfg: &ExperimentConfig, a: &EvaluateArgs) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let sets = [("dev", &inputs.dev), ("test", &inputs.test)];
    if sets.iter().all(|(_, s)| s.is_none()) {
        bail!(Error::Config {
            key: "dev".into(),
            msg: "evaluate needs a dev or test set".into()
        });
    }
    let use_body = cfg.margin.use_body;
    let load = |p: &Path| -> Result<(Encoder, bool)> {
        let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
        Ok((Encoder::from_checkpoint(&ck)?, ck.meta("pretrained") == Some("true")))
    };
    let mut results: Vec<(&str, Vec<QueryResult>)> = Vec::new();
    let (method, pooling) = match (a.baseline, &a.checkpoint) {
        (Some(b), _) => {
            for (name, set) in sets {
                if let Some(set) = set {
                    let r = match b {
                        Baseline::Bm25 => rank_pools(
                            &InvertedIndex::build(documents(&inputs.corpus), cfg.bm25)?,
                            &inputs.corpus,
                            set,
                        )?,
                        Baseline::Tfidf => rank_pools(
                            &TfIdfIndex::build(documents(&inputs.corpus), cfg.tfidf())?,
                            &inputs.corpus,
                            set,
                        )?,
                    };
                    results.push((name, r));
                }
            }
            let m = match b {
                Baseline::Bm25 => "BM25",
                Baseline::Tfidf => "TF-IDF",
            };
            (m.to_string(), "-".to_string())
        }
        (None, Some(path)) => {
            let (enc, pretrained) = load(path)?;
            for (name, set) in sets {
                if let Some(set) = set {
                    results.push((
                        name,
                        rank_evaluation_set(&enc, &inputs.corpus, &inputs.embeddings, set, use_body)?,
                    ));
                }
            }
            (method_name(&enc, pretrained), enc.config().pooling.to_string())
        }
        (None, None) => bail!(Error::InvalidArgument("give --checkpoint or --baseline".into())),
    };
    let metric = |name: &str| -> Result<Option<Metrics>> {
        results
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| Metrics::compute(r))
            .transpose()
            .map_err(Into::into)
    };
    let row = MetricsRow {
        method,
        pooling,
        dev: metric("dev")?,
        test: metric("test")?,
    };
    println!("{}", MetricsRow::HEADER);
    println!("{}", row.line());
    fs::create_dir_all(&cfg.output_dir)?;
    serde_json::to_writer_pretty(create(&cfg.output_dir.join("evaluate.json"))?, &row)?;

    if let Some(other) = &a.against {
        let (enc, _) = load(other)?;
        let test = match a.test {
            TestKind::Permutation => SignificanceTest::Permutation,
            TestKind::T => SignificanceTest::PairedT,
        };
        for (name, set) in sets {
            let (Some(set), Some((_, mine))) = (set, results.iter().find(|(n, _)| *n == name)) else {
                continue;
            };
            let theirs = rank_evaluation_set(&enc, &inputs.corpus, &inputs.embeddings, set, use_body)?;
            let p = significance(
                test,
                &per_query_ap(mine)?,
                &per_query_ap(&theirs)?,
                cfg.significance_resamples,
                cfg.seeds[0],
            )?;
            println!("{name} AP difference vs {}: p = {p:.4}", other.display());
        }
    }
    Ok(())
}

/// Candidate ids for a query document, excluding the query itself.
type Ranker<'a> = dyn Fn(&[String], u64) -> qsim::Result<Vec<u64>> + 'a;

fn run_retrieve(cfg: &ExperimentConfig, a: &RetrieveArgs) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let corpus = &inputs.corpus;
    let queries: Vec<u64> = match &a.queries {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Data(format!("bad query id `{s}`"))))
            .collect::<Result<_, _>>()?,
        None => inputs
            .dev
            .as_ref()
            .ok_or_else(|| Error::Config {
                key: "dev".into(),
                msg: "retrieve needs --queries or a dev set".into(),
            })?
            .queries
            .iter()
            .map(|q| q.query_id)
            .collect(),
    };
    let positives = |q: u64| -> BTreeSet<u64> {
        if let Some(eq) = inputs
            .dev
            .iter()
            .chain(&inputs.test)
            .flat_map(|s| &s.queries)
            .find(|e| e.query_id == q)
        {
            return eq.positives.clone();
        }
        inputs
            .train
            .as_ref()
            .and_then(|t| t.known_positives(q).cloned())
            .unwrap_or_default()
    };
    let emit = |r: &Ranker<'_>| -> Result<()> {
        let mut w = output(&a.out)?;
        for &q in &queries {
            let cands = r(&document(corpus.require(q)?), q)?;
            write_annotation_line(&mut w, q, &positives(q), &cands)?;
        }
        w.flush()?;
        Ok(())
    };
    let k = cfg.candidates;
    match a.scorer {
        Baseline::Bm25 => {
            let index = match &a.index {
                Some(p) => InvertedIndex::load(p)?,
                None => InvertedIndex::build(documents(corpus), cfg.bm25)?,
            };
            if let Some(p) = &a.save_index {
                index.save(p)?;
            }
            emit(&|d, q| top_ids(&index, d, q, k))?;
        }
        Baseline::Tfidf => {
            let index = TfIdfIndex::build(documents(corpus), cfg.tfidf())?;
            if let Some(p) = &a.save_index {
                index.save(p)?;
            }
            emit(&|d, q| top_ids(&index, d, q, k))?;
        }
    }
    Ok(())
}

fn top_ids(r: &impl Retriever, doc: &[String], q: u64, k: usize) -> qsim::Result<Vec<u64>> {
    Ok(retrieve_top_k(r, doc, Some(q), k)?.into_iter().map(|x| x.id).collect())
}

fn run_gates(cfg: &ExperimentConfig, a: &GateArgs) -> Result<()> {
    let corpus = read_corpus(cfg.require("corpus", &cfg.corpus)?)?;
    let emb = qsim::experiment::read_embeddings(cfg.require("embeddings", &cfg.embeddings)?)?;
    let enc = Encoder::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let field: Field = a.field.parse()?;
    let mut w = output(&a.out)?;
    if let Some(id) = a.trace {
        let q = corpus.require(id)?;
        let tokens = match field {
            Field::Title => &q.title,
            Field::Body => &q.body,
        };
        let trace = token_weight_trace(&enc, &emb, tokens)?;
        write_trace_csv(&trace, &mut w)?;
        if a.heatmap {
            eprint!("{}", heatmap(&trace));
        }
    } else {
        let questions: Vec<_> = corpus.questions().iter().collect();
        decay_profile(&enc, &emb, &questions, field)?.write_csv(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn run_synth(out: &Path, seed: u64) -> Result<()> {
    let data = generate(&SyntheticConfig {
        seed,
        ..Default::default()
    })?;
    fs::create_dir_all(out)?;
    write_corpus(&data.corpus, create(&out.join("corpus.tsv"))?)?;
    write_embeddings(&data.embeddings, create(&out.join("embeddings.txt"))?)?;
    write_train_pairs(&data.train, create(&out.join("train.tsv"))?)?;
    write_annotations(&data.dev, create(&out.join("dev.tsv"))?)?;
    let mut cfg = ExperimentConfig::default();
    for (k, v) in SYNTH_SETTINGS {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let text: String = SYNTH_SETTINGS.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(out.join("experiment.txt"), text)?;
    println!(
        "{} questions, {} training pairs, {} dev queries written to {}",
        data.corpus.len(),
        data.train.len(),
        data.dev.len(),
        out.display()
    );
    Ok(())
}

/// Settings sized for the synthetic corpus, written beside it.
const SYNTH_SETTINGS: &[(&str, &str)] = &[
    ("corpus", "corpus.tsv"),
    ("embeddings", "embeddings.txt"),
    ("train_pairs", "train.tsv"),
    ("dev", "dev.tsv"),
    ("output_dir", "out"),
    ("hidden_dim", "32"),
    ("batch_size", "10"),
    ("max_epochs", "30"),
    ("pretrain_epochs", "5"),
    ("pretrain_heldout", "5"),
    ("pretrain_batch_size", "10"),
];

fn run_decode(cfg: &ExperimentConfig, checkpoint: &Path, question: u64, max_len: usize) -> Result<()> {
    let corpus = read_corpus(cfg.require("corpus", &cfg.corpus)?)?;
    let emb = qsim::experiment::read_embeddings(cfg.require("embeddings", &cfg.embeddings)?)?;
    let model = Seq2Seq::from_checkpoint(&Checkpoint::load(checkpoint)?, &emb)?;
    let q = corpus.require(question)?;
    let context = if q.body.is_empty() { &q.title } else { &q.body };
    let title = model.decode_greedy(&emb, context, max_len)?;
    if title.is_empty() {
        eprintln!("the decoder ends the title at the first step");
    }
    println!("{}", title.join(" "));
    Ok(())
}
