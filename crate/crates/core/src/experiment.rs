//! Wiring from an [`ExperimentConfig`] to loaded data, training runs and the
//! artifacts they leave behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Checkpoint;
use crate::config::ExperimentConfig;
use crate::corpus::{
    load_embeddings, parse_annotations_with, parse_corpus, parse_train_pairs, Corpus, EmbeddingTable, EvaluationSet,
    TrainPairs,
};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::pretrain::{pretrain, PerplexityRecord};
use crate::ranking::{evaluate, train, RunRow, RunSummary, TrainReport};

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn source(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(open(path)?, &source(path))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings(open(path)?, &source(path))
}

pub fn read_train_pairs(path: &Path) -> Result<TrainPairs> {
    parse_train_pairs(open(path)?, &source(path))
}

pub fn read_annotations(path: &Path, candidates: usize) -> Result<EvaluationSet> {
    parse_annotations_with(open(path)?, &source(path), candidates)
}

/// Everything a config points at, loaded and cross-checked.
pub struct Inputs {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub train: Option<TrainPairs>,
    pub dev: Option<EvaluationSet>,
    pub test: Option<EvaluationSet>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.check_paths()?;
        let corpus = read_corpus(cfg.require("corpus", &cfg.corpus)?)?;
        let embeddings = read_embeddings(cfg.require("embeddings", &cfg.embeddings)?)?;
        let train = cfg.train_pairs.as_deref().map(read_train_pairs).transpose()?;
        let dev = cfg
            .dev
            .as_deref()
            .map(|p| read_annotations(p, cfg.candidates))
            .transpose()?;
        let test = cfg
            .test
            .as_deref()
            .map(|p| read_annotations(p, cfg.candidates))
            .transpose()?;
        let inputs = Inputs {
            corpus,
            embeddings,
            train,
            dev,
            test,
        };
        inputs.check_ids()?;
        Ok(inputs)
    }

    fn check_ids(&self) -> Result<()> {
        let sets = [&self.dev, &self.test];
        for set in sets.into_iter().flatten() {
            if let Some(id) = set.question_ids().into_iter().find(|id| !self.corpus.contains(*id)) {
                return Err(Error::UnknownId(id));
            }
        }
        if let Some(train) = &self.train {
            if let Some((a, b)) = train
                .symmetric()
                .into_iter()
                .find(|(a, b)| !self.corpus.contains(*a) || !self.corpus.contains(*b))
            {
                return Err(Error::UnknownId(if self.corpus.contains(a) { b } else { a }));
            }
        }
        Ok(())
    }

    pub fn require_train(&self) -> Result<&TrainPairs> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::config("train_pairs", "required by this command"))
    }

    pub fn require_dev(&self) -> Result<&EvaluationSet> {
        self.dev
            .as_ref()
            .ok_or_else(|| Error::config("dev", "required by this command"))
    }
}

/// One seed's training run.
pub struct SeedRun {
    pub seed: u64,
    pub pretraining: Option<Vec<PerplexityRecord>>,
    pub report: TrainReport,
    pub best: Encoder,
    pub pretrained: bool,
    pub test: Option<Metrics>,
}

/// The starting encoder for `seed`: a supplied checkpoint, a freshly
/// pre-trained encoder, or random weights.
pub fn initial_encoder(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    seed: u64,
) -> Result<(Encoder, Option<Vec<PerplexityRecord>>, bool)> {
    if let Some(path) = &cfg.init_checkpoint {
        let ck = Checkpoint::load(path)?;
        let pretrained = ck.meta("pretrained") == Some("true");
        let enc = Encoder::from_checkpoint(&ck)?;
        if enc.config().input_dim != inputs.embeddings.dim() {
            return Err(Error::Data(format!(
                "checkpoint expects {}-dimensional inputs, embeddings have {}",
                enc.config().input_dim,
                inputs.embeddings.dim()
            )));
        }
        return Ok((enc, None, pretrained));
    }
    let enc = Encoder::new(cfg.encoder_config(inputs.embeddings.dim()), seed)?;
    if !cfg.pretrain {
        return Ok((enc, None, false));
    }
    let empty = TrainPairs::default();
    let marked = inputs.train.as_ref().unwrap_or(&empty);
    let out = pretrain(
        &enc,
        &inputs.corpus,
        &inputs.embeddings,
        marked,
        &cfg.pretrain_config(seed),
    )?;
    Ok((out.encoder()?, Some(out.history), true))
}

pub fn run_seed(cfg: &ExperimentConfig, inputs: &Inputs, seed: u64) -> Result<SeedRun> {
    let (enc, pretraining, pretrained) = initial_encoder(cfg, inputs, seed)?;
    let out = train(
        &enc,
        &inputs.corpus,
        &inputs.embeddings,
        inputs.require_train()?,
        inputs.require_dev()?,
        &cfg.margin_config(seed),
    )?;
    let test = inputs
        .test
        .as_ref()
        .map(|t| evaluate(&out.best, &inputs.corpus, &inputs.embeddings, t, cfg.margin.use_body))
        .transpose()?;
    Ok(SeedRun {
        seed,
        pretraining,
        report: out.report,
        best: out.best,
        pretrained,
        test,
    })
}

/// Runs every configured seed in parallel; results follow seed order.
pub fn run_all(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, inputs, s)).collect()
}

pub fn summarize(runs: &[SeedRun]) -> Result<RunSummary> {
    RunSummary::new(
        runs.iter()
            .map(|r| RunRow {
                seed: r.seed,
                best_epoch: r.report.best_epoch,
                dev: r.report.best().dev,
                test: r.test,
            })
            .collect(),
    )
}

/// A results-table row: method, pooling, dev and test metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub pooling: String,
    pub dev: Option<Metrics>,
    pub test: Option<Metrics>,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "method\tpooling\tdev MAP\tdev MRR\tdev P@1\tdev P@5\ttest MAP\ttest MRR\ttest P@1\ttest P@5";

    pub fn line(&self) -> String {
        let cells = |m: &Option<Metrics>| m.map(|m| m.cells()).unwrap_or_else(|| ["-"; 4].join("\t"));
        format!(
            "{}\t{}\t{}\t{}",
            self.method,
            self.pooling,
            cells(&self.dev),
            cells(&self.test)
        )
    }
}

/// Method label of an encoder, with a suffix when it was pre-trained.
pub fn method_name(enc: &Encoder, pretrained: bool) -> String {
    let mut name = enc.config().arch.name().to_uppercase();
    if pretrained {
        name.push_str("+pretrain");
    }
    name
}

/// Written next to every command's outputs as `<command>.manifest.json`,
/// with the effective config beside it; enough to rerun the command.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub package: String,
    pub version: String,
    pub workers: usize,
    #[serde(skip)]
    config_text: String,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            args,
            config_hash: cfg.hash(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seeds: cfg.seeds.clone(),
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            workers: rayon::current_num_threads(),
            config_text: cfg.to_text(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{}.manifest.json", self.command)))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        std::fs::write(dir.join(format!("{}.config.txt", self.command)), &self.config_text)?;
        Ok(())
    }
}
