//! Max-margin ranking: loss, cosine scoring of candidate pools, and the
//! dev-driven training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{AdamState, Gradients, Tape, Tensor, Var};
use crate::corpus::{mix_seed, sample_negatives, Corpus, EmbeddingTable, EvaluationSet, Question, TrainPairs};
use crate::encoders::{cosine, Dropout, Encoder};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, QueryResult};

/// Where negatives are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NegativePool {
    /// Every corpus question.
    Corpus,
    /// Only questions that occur in a training pair.
    TrainQuestions,
}

impl std::str::FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(NegativePool::Corpus),
            "train" => Ok(NegativePool::TrainQuestions),
            other => Err(Error::config(
                "negative_pool",
                format!("expected corpus or train, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Query groups per update.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev MRR improvement before stopping.
    pub patience: usize,
    pub negatives: usize,
    pub negative_pool: NegativePool,
    pub seed: u64,
    pub use_body: bool,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            margin: 0.1,
            learning_rate: 1e-3,
            dropout: 0.1,
            batch_size: 40,
            max_epochs: 50,
            patience: 10,
            negatives: 20,
            negative_pool: NegativePool::Corpus,
            seed: 1,
            use_body: true,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(Error::config("negatives", "must be at least 1"));
        }
        Ok(())
    }
}

/// `max(0, max_neg(s_neg - s_pos + delta))`.
pub fn margin_loss(score_pos: f64, scores_neg: &[f64], delta: f64) -> Result<f64> {
    if scores_neg.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    Ok(scores_neg.iter().map(|n| n - score_pos + delta).fold(0.0, f64::max))
}

/// Tape version of [`margin_loss`]; the zero term stands for p = p+.
pub fn margin_loss_on(tape: &mut Tape, pos: Var, negs: &[Var], delta: f64) -> Result<Var> {
    if negs.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    let zero = tape.constant(Tensor::scalar(0.0))?;
    let delta = tape.constant(Tensor::scalar(delta))?;
    let mut terms = Vec::with_capacity(negs.len() + 1);
    terms.push(zero);
    for &n in negs {
        let gap = tape.sub(n, pos)?;
        terms.push(tape.add(gap, delta)?);
    }
    tape.max_of(&terms)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ranked {
    pub id: u64,
    pub score: f64,
}

/// Sorts candidates by cosine to `query`, descending, ties by id ascending.
pub fn rank_by_cosine(query: &[f64], candidates: &[(u64, &[f64])]) -> Result<Vec<Ranked>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let mut out = candidates
        .iter()
        .map(|(id, v)| {
            Ok(Ranked {
                id: *id,
                score: cosine(query, v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranked(&mut out);
    Ok(out)
}

pub(crate) fn sort_ranked(out: &mut [Ranked]) {
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

/// Encodes the query and each candidate, then ranks by cosine.
pub fn score_candidates(
    encoder: &Encoder,
    emb: &EmbeddingTable,
    query: &Question,
    candidates: &[&Question],
    use_body: bool,
) -> Result<Vec<Ranked>> {
    let qv = encoder.encode(query, emb, use_body)?;
    let cv = candidates
        .par_iter()
        .map(|c| Ok((c.id, encoder.encode(c, emb, use_body)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(u64, &[f64])> = cv.iter().map(|(id, v)| (*id, v.as_slice())).collect();
    rank_by_cosine(&qv, &refs)
}

/// Encodes every question of `ids` once, in parallel.
pub fn encode_all(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    ids: &BTreeSet<u64>,
    use_body: bool,
) -> Result<BTreeMap<u64, Vec<f64>>> {
    let ids: Vec<u64> = ids.iter().copied().collect();
    ids.par_iter()
        .map(|&id| Ok((id, encoder.encode(corpus.require(id)?, emb, use_body)?)))
        .collect()
}

/// Ranks each query's candidate pool and records binary labels.
pub fn rank_evaluation_set(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    set: &EvaluationSet,
    use_body: bool,
) -> Result<Vec<QueryResult>> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let vectors = encode_all(encoder, corpus, emb, &set.question_ids(), use_body)?;
    set.queries
        .iter()
        .map(|q| {
            let cands: Vec<(u64, &[f64])> = q.candidates.iter().map(|c| (*c, vectors[c].as_slice())).collect();
            let ranked = rank_by_cosine(&vectors[&q.query_id], &cands)?;
            Ok(QueryResult {
                query_id: q.query_id,
                labels: ranked.iter().map(|r| q.positives.contains(&r.id)).collect(),
            })
        })
        .collect()
}

pub fn evaluate(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    set: &EvaluationSet,
    use_body: bool,
) -> Result<Metrics> {
    Metrics::compute(&rank_evaluation_set(encoder, corpus, emb, set, use_body)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for the evaluation before any update.
    pub train_loss: Option<f64>,
    pub dev: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// First epoch whose dev metrics satisfy `pred`.
    pub fn first_epoch_where(&self, pred: impl Fn(&Metrics) -> bool) -> Option<usize> {
        self.epochs.iter().find(|r| pred(&r.dev)).map(|r| r.epoch)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,dev_map,dev_mrr,dev_p1,dev_p5")?;
        for r in &self.epochs {
            let loss = r.train_loss.map(|l| format!("{l:e}")).unwrap_or_default();
            let [a, b, c, d] = r.dev.as_array();
            writeln!(w, "{},{loss},{a:e},{b:e},{c:e},{d:e}", r.epoch)?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Weights at the best dev epoch.
    pub best: Encoder,
}

/// One run's row of a multi-run summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: Metrics,
    pub test: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub runs: Vec<RunRow>,
    pub mean_dev: Metrics,
    pub mean_test: Option<Metrics>,
}

impl RunSummary {
    pub fn new(runs: Vec<RunRow>) -> Result<Self> {
        let devs: Vec<Metrics> = runs.iter().map(|r| r.dev).collect();
        let mean_dev = Metrics::mean(&devs).ok_or(Error::Empty("run list"))?;
        let tests: Option<Vec<Metrics>> = runs.iter().map(|r| r.test).collect();
        let mean_test = tests.and_then(|t| Metrics::mean(&t));
        Ok(RunSummary {
            runs,
            mean_dev,
            mean_test,
        })
    }
}

struct Group {
    query: u64,
    positive: u64,
    negatives: Vec<u64>,
}

fn group_gradient(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    cfg: &MarginConfig,
    group: &Group,
    rng_seed: u64,
) -> Result<(f64, Gradients)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut dropout = Dropout {
        rate: cfg.dropout,
        rng: &mut rng,
    };
    let mut tape = Tape::new();
    let p = tape.bind(encoder.params())?;
    let ids = [group.query, group.positive]
        .into_iter()
        .chain(group.negatives.iter().copied());
    let mut vecs = Vec::with_capacity(group.negatives.len() + 2);
    for id in ids {
        let q = corpus.require(id)?;
        vecs.push(encoder.encode_question_on(
            &mut tape,
            &p,
            &emb.embed(&q.title),
            &emb.embed(&q.body),
            cfg.use_body,
            Some(&mut dropout),
        )?);
    }
    let pos = tape.cosine(vecs[0], vecs[1])?;
    let mut negs = Vec::with_capacity(group.negatives.len());
    for &nv in &vecs[2..] {
        negs.push(tape.cosine(vecs[0], nv)?);
    }
    let loss = margin_loss_on(&mut tape, pos, &negs, cfg.margin)?;
    let grads = tape.backward(loss, encoder.params())?;
    Ok((tape.scalar_value(loss), grads))
}

/// Trains a copy of `encoder`, selecting the epoch with the best
/// dev MRR. Epoch 0 is the evaluation before any update.
pub fn train(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    pairs: &TrainPairs,
    dev: &EvaluationSet,
    cfg: &MarginConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no positive training pairs".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut ordered = pairs.symmetric();
    for (q, p) in &ordered {
        corpus.require(*q)?;
        corpus.require(*p)?;
    }
    ordered.sort_unstable();
    let pool: Vec<u64> = match cfg.negative_pool {
        NegativePool::Corpus => corpus.ids(),
        NegativePool::TrainQuestions => ordered
            .iter()
            .map(|p| p.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    let mut model = encoder.clone();
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let first = evaluate(&model, corpus, emb, dev, cfg.use_body)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        dev: first,
    }];
    let mut best_epoch = 0;
    let mut best = model.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut order = ordered.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut total_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let groups = batch
                .iter()
                .map(|&(q, p)| {
                    let negatives = sample_negatives(
                        q,
                        &pool,
                        pairs.known_positives(q),
                        cfg.negatives,
                        mix_seed(mix_seed(cfg.seed, q), p),
                        epoch as u64,
                    )?;
                    Ok(Group {
                        query: q,
                        positive: p,
                        negatives,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_seed = mix_seed(epoch_seed, b as u64);
            let results = groups
                .par_iter()
                .enumerate()
                .map(|(g, group)| group_gradient(&model, corpus, emb, cfg, group, mix_seed(batch_seed, g as u64)))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros_like(model.params());
            for (loss, g) in &results {
                total_loss += loss;
                grads.accumulate(g);
            }
            grads.scale(1.0 / results.len() as f64);
            if !grads.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            adam.step(model.params_mut(), &grads)?;
        }

        let metrics = evaluate(&model, corpus, emb, dev, cfg.use_body)?;
        let train_loss = total_loss / order.len() as f64;
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} dev MAP {:.1} MRR {:.1} P@1 {:.1} P@5 {:.1}",
            metrics.map,
            metrics.mrr,
            metrics.p_at_1,
            metrics.p_at_5
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            dev: metrics,
        });
        if metrics.mrr > epochs[best_epoch].dev.mrr {
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("no dev MRR improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        report: TrainReport {
            seed: cfg.seed,
            epochs,
            best_epoch,
        },
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        assert_eq!(margin_loss(0.9, &[0.5, 0.3], 0.1).unwrap(), 0.0);
        assert!((margin_loss(0.5, &[0.6], 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert!(margin_loss(0.5, &[], 0.1).is_err());
    }

    #[test]
    fn tape_loss_matches_plain_and_finite_differences() {
        let scores = [0.3, 0.45, 0.1, 0.38];
        let f = |x: &[f64]| margin_loss(x[0], &x[1..], 0.1);
        let mut tape = Tape::new();
        let vars: Vec<Var> = scores
            .iter()
            .map(|s| tape.constant(Tensor::scalar(*s)).unwrap())
            .collect();
        let loss = margin_loss_on(&mut tape, vars[0], &vars[1..], 0.1).unwrap();
        assert_eq!(tape.scalar_value(loss), f(&scores).unwrap());
        // subgradient: -1 on the positive, +1 on the arg-max negative
        let analytic = [-1.0, 1.0, 0.0, 0.0];
        let rep = finite_diff_check(f, &scores, &analytic, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn ranking_ties_and_identity() {
        let q = [1.0, 0.0];
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let c = [0.0, 2.0];
        let r = rank_by_cosine(&q, &[(9, &c), (4, &b), (7, &a)]).unwrap();
        assert_eq!(r.iter().map(|x| x.id).collect::<Vec<_>>(), vec![7, 4, 9]);
        assert_eq!(r[0].score, 1.0);
        let one = rank_by_cosine(&q, &[(3, &b)]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(rank_by_cosine(&q, &[]).is_err());
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = MarginConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "dropout"));
        let bad = MarginConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "margin"));
    }

    #[test]
    fn run_summary_means() {
        let m = |x: f64| Metrics {
            map: x,
            mrr: x,
            p_at_1: x,
            p_at_5: x,
        };
        let runs = (1..=5)
            .map(|s| RunRow {
                seed: s,
                best_epoch: 1,
                dev: m(s as f64 * 10.0),
                test: None,
            })
            .collect();
        let s = RunSummary::new(runs).unwrap();
        assert_eq!(s.runs.len(), 5);
        assert_eq!(s.mean_dev.map, 30.0);
        assert!(s.mean_test.is_none());
    }

    proptest! {
        #[test]
        fn zero_iff_margin_satisfied(pos in -1.0f64..1.0, negs in prop::collection::vec(-1.0f64..1.0, 1..25)) {
            let loss = margin_loss(pos, &negs, 0.1).unwrap();
            prop_assert!(loss >= 0.0);
            let satisfied = negs.iter().all(|n| n - pos + 0.1 <= 0.0);
            prop_assert_eq!(loss == 0.0, satisfied);
        }

        #[test]
        fn shift_invariant(pos in -1.0f64..1.0, negs in prop::collection::vec(-1.0f64..1.0, 1..10), c in -5.0f64..5.0) {
            let a = margin_loss(pos, &negs, 0.1).unwrap();
            let shifted: Vec<f64> = negs.iter().map(|n| n + c).collect();
            let b = margin_loss(pos + c, &shifted, 0.1).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ranking_scale_invariant(vs in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 2..8)) {
            let q = &vs[0];
            let cands: Vec<(u64, &[f64])> = vs[1..].iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())).collect();
            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * 3.0).collect()).collect();
            let scands: Vec<(u64, &[f64])> = scaled[1..].iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())).collect();
            let a: Vec<u64> = rank_by_cosine(q, &cands).unwrap().iter().map(|r| r.id).collect();
            let b: Vec<u64> = rank_by_cosine(&scaled[0], &scands).unwrap().iter().map(|r| r.id).collect();
            prop_assert_eq!(a, b);
        }
    }
}
