//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; a file only lists what it changes. Relative
//! paths resolve against the directory of the file they come from.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::encoders::{Architecture, EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::lexical::{Bm25Params, TfIdfConfig};
use crate::pretrain::PretrainConfig;
use crate::ranking::{MarginConfig, NegativePool};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub train_pairs: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Encoder checkpoint to fine-tune instead of pre-training.
    pub init_checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,

    pub architecture: Architecture,
    pub pooling: Option<Pooling>,
    pub hidden_dim: Option<usize>,
    pub filter_width: Option<usize>,
    pub scalar_decay: bool,

    pub margin: MarginConfig,
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub pretrain_heldout: usize,
    pub pretrain_batch_size: usize,

    pub seeds: Vec<u64>,
    pub candidates: usize,
    pub bm25: Bm25Params,
    pub tfidf_order: usize,
    pub significance_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PretrainConfig::default();
        ExperimentConfig {
            corpus: None,
            embeddings: None,
            train_pairs: None,
            dev: None,
            test: None,
            init_checkpoint: None,
            output_dir: PathBuf::from("out"),
            architecture: Architecture::Rcnn,
            pooling: None,
            hidden_dim: None,
            filter_width: None,
            scalar_decay: false,
            margin: MarginConfig::default(),
            pretrain: true,
            pretrain_epochs: p.epochs,
            pretrain_heldout: p.heldout,
            pretrain_batch_size: p.batch_size,
            seeds: vec![1],
            candidates: crate::corpus::CANDIDATES_PER_QUERY,
            bm25: Bm25Params::default(),
            tfidf_order: 1,
            significance_resamples: 10_000,
        }
    }
}

pub const KEYS: &[&str] = &[
    "corpus",
    "embeddings",
    "train_pairs",
    "dev",
    "test",
    "init_checkpoint",
    "output_dir",
    "architecture",
    "pooling",
    "hidden_dim",
    "filter_width",
    "scalar_decay",
    "use_body",
    "margin",
    "learning_rate",
    "dropout",
    "batch_size",
    "max_epochs",
    "patience",
    "negatives",
    "negative_pool",
    "pretrain",
    "pretrain_epochs",
    "pretrain_heldout",
    "pretrain_batch_size",
    "seeds",
    "runs",
    "candidates",
    "bm25_k1",
    "bm25_b",
    "tfidf_order",
    "significance_resamples",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected on/off, got `{value}`"))),
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("config", i + 1, format!("expected key = value, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "set more than once"));
            }
            cfg.set_with_base(key, value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    /// Sets one key from its text form; paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_with_base(key, value, Path::new(""))
    }

    fn set_with_base(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || -> Option<PathBuf> { (!value.is_empty()).then(|| base.join(value)) };
        let m = &mut self.margin;
        match key {
            "corpus" => self.corpus = path(),
            "embeddings" => self.embeddings = path(),
            "train_pairs" => self.train_pairs = path(),
            "dev" => self.dev = path(),
            "test" => self.test = path(),
            "init_checkpoint" => self.init_checkpoint = path(),
            "output_dir" => self.output_dir = path().ok_or_else(|| Error::config(key, "must not be empty"))?,
            "architecture" => self.architecture = value.parse()?,
            "pooling" => self.pooling = Some(value.parse()?),
            "hidden_dim" => self.hidden_dim = Some(parse(key, value)?),
            "filter_width" => self.filter_width = Some(parse(key, value)?),
            "scalar_decay" => self.scalar_decay = parse_bool(key, value)?,
            "use_body" => m.use_body = parse_bool(key, value)?,
            "margin" => m.margin = parse(key, value)?,
            "learning_rate" => m.learning_rate = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "batch_size" => m.batch_size = parse(key, value)?,
            "max_epochs" => m.max_epochs = parse(key, value)?,
            "patience" => m.patience = parse(key, value)?,
            "negatives" => m.negatives = parse(key, value)?,
            "negative_pool" => m.negative_pool = value.parse()?,
            "pretrain" => self.pretrain = parse_bool(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_heldout" => self.pretrain_heldout = parse(key, value)?,
            "pretrain_batch_size" => self.pretrain_batch_size = parse(key, value)?,
            "seeds" => {
                self.seeds = value.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
                if self.seeds.is_empty() {
                    return Err(Error::config(key, "needs at least one seed"));
                }
            }
            // shorthand for seeds 1..=n
            "runs" => {
                let n: u64 = parse(key, value)?;
                if n == 0 {
                    return Err(Error::config(key, "must be at least 1"));
                }
                self.seeds = (1..=n).collect();
            }
            "candidates" => self.candidates = parse(key, value)?,
            "bm25_k1" => self.bm25.k1 = parse(key, value)?,
            "bm25_b" => self.bm25.b = parse(key, value)?,
            "tfidf_order" => self.tfidf_order = parse(key, value)?,
            "significance_resamples" => self.significance_resamples = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Range and combination checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.margin.validate()?;
        self.pretrain_config(0).validate()?;
        self.bm25.validate()?;
        self.tfidf().validate()?;
        let mut enc = self.encoder_config(1);
        // the input width is unknown until embeddings load
        enc.input_dim = 1;
        enc.validate()?;
        if self.candidates == 0 {
            return Err(Error::config("candidates", "must be at least 1"));
        }
        if self.pretrain_epochs == 0 && self.pretrain {
            return Err(Error::config(
                "pretrain_epochs",
                "must be at least 1 when pretrain is on",
            ));
        }
        if self.significance_resamples < 1000 {
            return Err(Error::config("significance_resamples", "must be at least 1000"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    /// Fails on the first referenced input path that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("corpus", &self.corpus),
            ("embeddings", &self.embeddings),
            ("train_pairs", &self.train_pairs),
            ("dev", &self.dev),
            ("test", &self.test),
            ("init_checkpoint", &self.init_checkpoint),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::config(key, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Makes every path absolute so a written config can be reused from
    /// any directory.
    pub fn absolutize(&mut self) -> Result<()> {
        for p in [
            &mut self.corpus,
            &mut self.embeddings,
            &mut self.train_pairs,
            &mut self.dev,
            &mut self.test,
            &mut self.init_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            *p = std::path::absolute(&*p)?;
        }
        self.output_dir = std::path::absolute(&self.output_dir)?;
        Ok(())
    }

    /// A required input path, or a config error naming its key.
    pub fn require<'a>(&self, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::config(key, "required by this command"))
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(self.architecture, input_dim).with_scalar_decay(self.scalar_decay);
        if let Some(h) = self.hidden_dim {
            c = c.with_hidden(h);
        }
        if let Some(w) = self.filter_width {
            c = c.with_width(w);
        }
        if let Some(p) = self.pooling {
            c = c.with_pooling(p);
        }
        c
    }

    pub fn margin_config(&self, seed: u64) -> MarginConfig {
        MarginConfig {
            seed,
            ..self.margin.clone()
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            learning_rate: self.margin.learning_rate,
            dropout: self.margin.dropout,
            batch_size: self.pretrain_batch_size,
            epochs: self.pretrain_epochs,
            heldout: self.pretrain_heldout,
            seed,
        }
    }

    pub fn tfidf(&self) -> TfIdfConfig {
        TfIdfConfig {
            order: self.tfidf_order,
            stopwords: Some(crate::lexical::default_stopwords()),
        }
    }

    /// Every key with its effective value, in [`KEYS`] order (without the
    /// `runs` shorthand).
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.margin;
        let enc = self.encoder_config(1);
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("corpus", opt_path(&self.corpus)),
            ("embeddings", opt_path(&self.embeddings)),
            ("train_pairs", opt_path(&self.train_pairs)),
            ("dev", opt_path(&self.dev)),
            ("test", opt_path(&self.test)),
            ("init_checkpoint", opt_path(&self.init_checkpoint)),
            ("output_dir", self.output_dir.display().to_string()),
            ("architecture", self.architecture.to_string()),
            ("pooling", enc.pooling.to_string()),
            ("hidden_dim", enc.hidden_dim.to_string()),
            ("filter_width", enc.filter_width.to_string()),
            ("scalar_decay", on_off(self.scalar_decay)),
            ("use_body", on_off(m.use_body)),
            ("margin", m.margin.to_string()),
            ("learning_rate", m.learning_rate.to_string()),
            ("dropout", m.dropout.to_string()),
            ("batch_size", m.batch_size.to_string()),
            ("max_epochs", m.max_epochs.to_string()),
            ("patience", m.patience.to_string()),
            ("negatives", m.negatives.to_string()),
            (
                "negative_pool",
                match m.negative_pool {
                    NegativePool::Corpus => "corpus",
                    NegativePool::TrainQuestions => "train",
                }
                .to_string(),
            ),
            ("pretrain", on_off(self.pretrain)),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_heldout", self.pretrain_heldout.to_string()),
            ("pretrain_batch_size", self.pretrain_batch_size.to_string()),
            ("seeds", seeds),
            ("candidates", self.candidates.to_string()),
            ("bm25_k1", self.bm25.k1.to_string()),
            ("bm25_b", self.bm25.b.to_string()),
            ("tfidf_order", self.tfidf_order.to_string()),
            ("significance_resamples", self.significance_resamples.to_string()),
        ]
    }

    /// Canonical text form; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_best_setting() {
        let c = ExperimentConfig::default();
        let e = c.encoder_config(200);
        assert_eq!(
            (e.arch, e.pooling, e.hidden_dim, e.filter_width),
            (Architecture::Rcnn, Pooling::Last, 400, 2)
        );
        assert!(c.pretrain && c.margin.use_body);
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let base = Path::new(".");
        let key_of = |text: &str| match ExperimentConfig::parse_str(text, base).and_then(|c| c.validate()) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        };
        assert_eq!(key_of("architecture = transformer"), "architecture");
        assert_eq!(key_of("dropout = 1.5"), "dropout");
        assert_eq!(key_of("hidden_dim = many"), "hidden_dim");
        assert_eq!(key_of("colour = blue"), "colour");
        assert_eq!(key_of("pooling = max"), "pooling");
        assert_eq!(key_of("seeds = 1\nseeds = 2"), "seeds");
        assert_eq!(key_of("tfidf_order = 5"), "tfidf_order");
        assert!(ExperimentConfig::parse_str("architecture = cnn\npooling = max", base)
            .unwrap()
            .validate()
            .is_ok());
    }

    #[test]
    fn text_form_round_trips() {
        let text = "architecture = gru\nhidden_dim = 70\nruns = 5\nuse_body = off\nlearning_rate = 0.0005\ncorpus = data/c.tsv # comment\n";
        let c = ExperimentConfig::parse_str(text, Path::new("")).unwrap();
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(c.corpus.as_deref(), Some(Path::new("data/c.tsv")));
        let back = ExperimentConfig::parse_str(&c.to_text(), Path::new("")).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.hash(), c.hash());
        assert_ne!(ExperimentConfig::default().hash(), c.hash());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let c = ExperimentConfig::parse_str("corpus = c.tsv\noutput_dir = o", Path::new("/data/exp")).unwrap();
        assert_eq!(c.corpus.unwrap(), PathBuf::from("/data/exp/c.tsv"));
        assert_eq!(c.output_dir, PathBuf::from("/data/exp/o"));
    }

    #[test]
    fn missing_path_is_reported() {
        let mut c = ExperimentConfig::default();
        c.set("dev", "/definitely/not/here.tsv").unwrap();
        match c.check_paths() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "dev"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = ExperimentConfig::default();
        for (k, v) in ExperimentConfig::default().entries() {
            if !v.is_empty() {
                c.set(k, &v).unwrap();
            }
        }
        assert!(KEYS
            .iter()
            .all(|k| *k == "runs" || c.entries().iter().any(|(e, _)| e == k)));
    }
}
