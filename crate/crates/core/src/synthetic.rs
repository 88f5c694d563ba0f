//! Small generated corpora with planted duplicate clusters, for smoke
//! tests and end-to-end checks without real data.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{mix_seed, Corpus, EmbeddingTable, EvaluationSet, Question, TrainPairs};
use crate::error::{Error, Result};
use crate::lexical::{build_candidate_pools, documents, Bm25Params, InvertedIndex};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    /// Leading cluster members that form training pairs; the rest are dev
    /// queries.
    pub train_members: usize,
    /// Topic words per cluster.
    pub topic_words: usize,
    /// Shared filler vocabulary.
    pub filler_words: usize,
    pub title_topic: usize,
    pub title_filler: usize,
    pub body_topic: usize,
    pub body_filler: usize,
    pub embedding_dim: usize,
    /// Topic word vectors are a per-cluster centroid plus noise of this
    /// scale; filler vectors are pure noise.
    pub topic_spread: f64,
    /// Embedding-table words that never occur in the corpus.
    pub unused_words: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 5,
            per_cluster: 10,
            train_members: 6,
            topic_words: 3,
            filler_words: 30,
            title_topic: 2,
            title_filler: 6,
            body_topic: 4,
            body_filler: 16,
            embedding_dim: 24,
            topic_spread: 1.0,
            unused_words: 200,
            candidates: 20,
            seed: 7,
        }
    }
}

pub struct SyntheticData {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub train: TrainPairs,
    pub dev: EvaluationSet,
    /// Cluster index of each question id.
    pub cluster_of: Vec<(u64, usize)>,
}

/// Question id of member `m` of cluster `c`. Clusters are interleaved so
/// that the highest ids cover every cluster.
fn question_id(cfg: &SyntheticConfig, c: usize, m: usize) -> u64 {
    (m * cfg.clusters + c) as u64 + 1
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.clusters < 2 || cfg.per_cluster <= cfg.train_members || cfg.train_members < 2 {
        return Err(Error::config(
            "synthetic",
            "need at least two clusters, two training members and one dev member per cluster",
        ));
    }
    if cfg.title_topic == 0 || cfg.embedding_dim == 0 {
        return Err(Error::config(
            "synthetic",
            "titles need topic words and embeddings a dimension",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topic = |c: usize, j: usize| format!("t{c}w{j}");
    let filler = |j: usize| format!("f{j}");

    let draw = |rng: &mut ChaCha8Rng, c: usize, n_topic: usize, n_filler: usize| -> String {
        let mut words: Vec<String> = (0..n_topic)
            .map(|_| topic(c, rng.gen_range(0..cfg.topic_words)))
            .collect();
        words.extend((0..n_filler).map(|_| filler(rng.gen_range(0..cfg.filler_words))));
        words.shuffle(rng);
        words.join(" ")
    };

    let mut questions = Vec::new();
    let mut cluster_of = Vec::new();
    for c in 0..cfg.clusters {
        for m in 0..cfg.per_cluster {
            let id = question_id(cfg, c, m);
            let title = draw(&mut rng, c, cfg.title_topic, cfg.title_filler);
            let body = draw(&mut rng, c, cfg.body_topic, cfg.body_filler);
            questions.push(Question::new(id, &title, &body)?);
            cluster_of.push((id, c));
        }
    }
    cluster_of.sort_unstable();
    let corpus = Corpus::from_questions(questions)?;

    let mut erng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let mut noise = |scale: f64| -> Vec<f64> {
        (0..cfg.embedding_dim)
            .map(|_| scale * erng.gen_range(-1.0..1.0))
            .collect()
    };
    let mut rows = Vec::new();
    for c in 0..cfg.clusters {
        let centroid = noise(1.0);
        for j in 0..cfg.topic_words {
            let v = noise(cfg.topic_spread)
                .iter()
                .zip(&centroid)
                .map(|(a, b)| a + b)
                .collect();
            rows.push((topic(c, j), v));
        }
    }
    for j in 0..cfg.filler_words {
        rows.push((filler(j), noise(1.0)));
    }
    for j in 0..cfg.unused_words {
        rows.push((format!("u{j}"), noise(1.0)));
    }
    let embeddings = EmbeddingTable::from_rows(rows)?;

    let mut pairs = Vec::new();
    for c in 0..cfg.clusters {
        for a in 0..cfg.train_members {
            for b in a + 1..cfg.train_members {
                pairs.push((question_id(cfg, c, a), question_id(cfg, c, b)));
            }
        }
    }
    let train = TrainPairs::from_pairs(pairs);

    let queries: Vec<(u64, BTreeSet<u64>)> = (0..cfg.clusters)
        .flat_map(|c| {
            (cfg.train_members..cfg.per_cluster).map(move |m| {
                let positives = (0..cfg.per_cluster)
                    .filter(|&o| o != m)
                    .map(|o| question_id(cfg, c, o))
                    .collect();
                (question_id(cfg, c, m), positives)
            })
        })
        .collect();
    let index = InvertedIndex::build(documents(&corpus), Bm25Params::default())?;
    let dev = build_candidate_pools(&index, &corpus, &queries, cfg.candidates)?;

    Ok(SyntheticData {
        corpus,
        embeddings,
        train,
        dev,
        cluster_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_of_default_corpus() {
        let data = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(data.corpus.len(), 50);
        assert_eq!(data.train.len(), 75);
        assert_eq!(data.dev.len() + data.dev.excluded, 20);
        assert!(data.dev.queries.iter().all(|q| q.candidates.len() == 20));
        assert!(!data.dev.is_empty());
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.corpus.questions(), b.corpus.questions());
        assert_eq!(a.dev, b.dev);
        let c = generate(&SyntheticConfig {
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.corpus.questions(), c.corpus.questions());
    }

    #[test]
    fn heldout_tail_spans_clusters() {
        let cfg = SyntheticConfig::default();
        let data = generate(&cfg).unwrap();
        let tail = crate::pretrain::heldout_ids(&data.corpus, cfg.clusters);
        let clusters: BTreeSet<usize> = data
            .cluster_of
            .iter()
            .filter(|(id, _)| tail.contains(id))
            .map(|(_, c)| *c)
            .collect();
        assert_eq!(clusters.len(), cfg.clusters);
    }
}
