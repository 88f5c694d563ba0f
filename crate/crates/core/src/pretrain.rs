//! Encoder-decoder pre-training: a conditional language model that
//! regenerates a question title from a context, with the encoder's pooled
//! vector as the only channel between the two halves.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{softmax, AdamState, Checkpoint, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{mix_seed, Corpus, EmbeddingTable, TrainPairs};
use crate::encoders::{Architecture, Cell, CellState, Dropout, Encoder, INIT_RANGE};
use crate::error::{Error, Result};

pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ContextKind {
    SelfTitle,
    OwnBody,
    SimilarTitle,
    SimilarBody,
}

impl ContextKind {
    fn uses_body(self) -> bool {
        matches!(self, ContextKind::OwnBody | ContextKind::SimilarBody)
    }
}

/// Target title of `target`, conditioned on a title or body of `source`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PretrainPair {
    pub target: u64,
    pub source: u64,
    pub kind: ContextKind,
}

impl PretrainPair {
    pub fn context<'c>(&self, corpus: &'c Corpus) -> Result<&'c [String]> {
        let q = corpus.require(self.source)?;
        Ok(if self.kind.uses_body() { &q.body } else { &q.title })
    }
}

/// Per question, the self-title and own-body pairs; per marked pair, in
/// both directions, the similar-title and similar-body pairs. Questions in
/// `exclude` take part in no pair. Returns the pairs and how many were
/// skipped for an empty context.
pub fn build_pretrain_pairs(
    corpus: &Corpus,
    marked: &TrainPairs,
    exclude: &BTreeSet<u64>,
) -> Result<(Vec<PretrainPair>, usize)> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let mut push = |pair: PretrainPair, pairs: &mut Vec<PretrainPair>| -> Result<()> {
        if pair.context(corpus)?.is_empty() {
            skipped += 1;
        } else {
            pairs.push(pair);
        }
        Ok(())
    };
    for q in corpus.questions() {
        if exclude.contains(&q.id) {
            continue;
        }
        for kind in [ContextKind::SelfTitle, ContextKind::OwnBody] {
            push(
                PretrainPair {
                    target: q.id,
                    source: q.id,
                    kind,
                },
                &mut pairs,
            )?;
        }
    }
    for (q, p) in marked.symmetric() {
        if exclude.contains(&q) || exclude.contains(&p) {
            continue;
        }
        corpus.require(q)?;
        for kind in [ContextKind::SimilarTitle, ContextKind::SimilarBody] {
            push(
                PretrainPair {
                    target: q,
                    source: p,
                    kind,
                },
                &mut pairs,
            )?;
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} pre-training pairs with an empty context");
    }
    Ok((pairs, skipped))
}

/// The last `n` questions by id.
pub fn heldout_ids(corpus: &Corpus, n: usize) -> BTreeSet<u64> {
    let mut ids = corpus.ids();
    ids.sort_unstable();
    ids.into_iter().rev().take(n).collect()
}

/// Body-to-title pairs of the heldout questions; title context when the
/// body is empty.
pub fn heldout_pairs(corpus: &Corpus, heldout: &BTreeSet<u64>) -> Result<Vec<PretrainPair>> {
    heldout
        .iter()
        .map(|&id| {
            let q = corpus.require(id)?;
            let kind = if q.body.is_empty() {
                ContextKind::SelfTitle
            } else {
                ContextKind::OwnBody
            };
            Ok(PretrainPair {
                target: id,
                source: id,
                kind,
            })
        })
        .collect()
}

/// Output vocabulary: the embedding words, then end and unknown markers
/// unless the table already has them.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    end: usize,
    unk: usize,
}

impl Vocabulary {
    pub fn from_embeddings(emb: &EmbeddingTable) -> Self {
        let mut words = emb.words().to_vec();
        for special in [END_TOKEN, UNK_TOKEN] {
            if emb.lookup(special).is_none() {
                words.push(special.to_string());
            }
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            end: index[END_TOKEN],
            unk: index[UNK_TOKEN],
            words,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Target ids of a title, end marker included.
    pub fn targets<S: AsRef<str>>(&self, title: &[S]) -> Vec<usize> {
        title.iter().map(|t| self.id(t.as_ref())).chain([self.end]).collect()
    }
}

#[derive(Clone, Debug)]
struct DecoderParams {
    cell: Cell,
    w_init: ParamId,
    b_init: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Visible state and memory of the decoder between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Tensor,
    pub mem: Vec<Tensor>,
}

/// Encoder and decoder sharing one parameter store; the encoder's
/// parameters come first, so the encoder can be exported unchanged.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    encoder: Encoder,
    store: ParamStore,
    encoder_len: usize,
    decoder: DecoderParams,
    vocab: Vocabulary,
    emb_dim: usize,
}

impl Seq2Seq {
    pub fn new(encoder: Encoder, emb: &EmbeddingTable, seed: u64) -> Result<Self> {
        let cfg = *encoder.config();
        if cfg.arch == Architecture::Cnn {
            return Err(Error::InvalidArgument("pre-training needs a recurrent encoder".into()));
        }
        if cfg.input_dim != emb.dim() {
            return Err(Error::Shape {
                op: "seq2seq",
                detail: format!("encoder input {} vs embeddings {}", cfg.input_dim, emb.dim()),
            });
        }
        let vocab = Vocabulary::from_embeddings(emb);
        let mut store = encoder.params().clone();
        let encoder_len = store.len();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed));
        let d = cfg.hidden_dim;
        let cell = Cell::register(
            cfg.arch,
            &mut store,
            "dec",
            emb.dim() + d,
            d,
            cfg.filter_width,
            cfg.scalar_decay,
            &mut rng,
        )?;
        let w_init = store.add("dec.w_init", Tensor::uniform(&[d, d], INIT_RANGE, &mut rng));
        let b_init = store.add("dec.b_init", Tensor::zeros(&[d]));
        let out_w = store.add("dec.out_w", Tensor::uniform(&[vocab.len(), d], INIT_RANGE, &mut rng));
        let out_b = store.add("dec.out_b", Tensor::zeros(&[vocab.len()]));
        Ok(Seq2Seq {
            encoder,
            store,
            encoder_len,
            decoder: DecoderParams {
                cell,
                w_init,
                b_init,
                out_w,
                out_b,
            },
            vocab,
            emb_dim: emb.dim(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Sets the output projection and bias to zero, giving a uniform
    /// next-token distribution.
    pub fn zero_output_layer(&mut self) {
        for id in [self.decoder.out_w, self.decoder.out_b] {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// The encoder with the current pre-trained weights.
    pub fn export_encoder(&self) -> Result<Encoder> {
        let mut params = ParamStore::new();
        for (_, name, t) in self.store.iter().take(self.encoder_len) {
            params.add(name, t.clone());
        }
        Encoder::with_params(*self.encoder.config(), params)
    }

    fn context_on(
        &self,
        tape: &mut Tape,
        p: &[Var],
        context: &[&Tensor],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let xs = context
            .iter()
            .map(|t| tape.constant((*t).clone()))
            .collect::<Result<Vec<_>>>()?;
        self.encoder.encode_sequence(tape, p, &xs, dropout)
    }

    fn initial_on(&self, tape: &mut Tape, p: &[Var], ctx: Var) -> Result<CellState> {
        let a = tape.matvec(p[self.decoder.w_init.0], ctx)?;
        let a = tape.add(a, p[self.decoder.b_init.0])?;
        let h0 = tape.tanh(a)?;
        Ok(self.decoder.cell.initial_state(tape, Some(h0)))
    }

    fn step_on(&self, tape: &mut Tape, p: &[Var], prev: Var, ctx: Var, state: &CellState) -> Result<(CellState, Var)> {
        let input = tape.concat(&[prev, ctx])?;
        let (next, _) = self.decoder.cell.step(tape, p, input, state, None)?;
        let logits = tape.matvec(p[self.decoder.out_w.0], next.h)?;
        let logits = tape.add(logits, p[self.decoder.out_b.0])?;
        Ok((next, logits))
    }

    /// Teacher-forced decoder logits for `title` given `context`, paired
    /// with the target index of each step (end marker last).
    fn teacher_forced_on(
        &self,
        tape: &mut Tape,
        p: &[Var],
        emb: &EmbeddingTable,
        context: &[String],
        title: &[String],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<(Var, usize)>> {
        if title.is_empty() {
            return Err(Error::Empty("target title"));
        }
        let ctx = self.context_on(tape, p, &emb.embed(context), dropout)?;
        let mut state = self.initial_on(tape, p, ctx)?;
        let targets = self.vocab.targets(title);
        let mut prev = tape.constant(emb.zero().clone())?;
        let mut steps = Vec::with_capacity(targets.len());
        for (t, &target) in targets.iter().enumerate() {
            let (next, logits) = self.step_on(tape, p, prev, ctx, &state)?;
            steps.push((logits, target));
            state = next;
            if t < title.len() {
                prev = tape.constant(emb.vector(&title[t]).clone())?;
            }
        }
        Ok(steps)
    }

    /// Teacher-forced loss of `title` given `context`: the sum of per-step
    /// cross-entropies, and the number of predicted tokens.
    pub fn sequence_loss_on(
        &self,
        tape: &mut Tape,
        p: &[Var],
        emb: &EmbeddingTable,
        context: &[String],
        title: &[String],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        let steps = self.teacher_forced_on(tape, p, emb, context, title, dropout)?;
        let losses = steps
            .iter()
            .map(|&(logits, target)| tape.softmax_xent(logits, target))
            .collect::<Result<Vec<_>>>()?;
        Ok((tape.add_n(&losses)?, steps.len()))
    }

    /// Per-token scores of one pair, without gradients.
    pub fn token_scores(&self, emb: &EmbeddingTable, corpus: &Corpus, pair: &PretrainPair) -> Result<Vec<TokenScore>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store)?;
        let title = &corpus.require(pair.target)?.title;
        let steps = self.teacher_forced_on(&mut tape, &p, emb, pair.context(corpus)?, title, None)?;
        Ok(steps
            .iter()
            .map(|&(logits, target)| TokenScore::new(tape.value(logits).data(), target))
            .collect())
    }

    /// Total cross-entropy and token count for one pair, without gradients.
    pub fn pair_loss(&self, emb: &EmbeddingTable, corpus: &Corpus, pair: &PretrainPair) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store)?;
        let title = &corpus.require(pair.target)?.title;
        let (loss, n) = self.sequence_loss_on(&mut tape, &p, emb, pair.context(corpus)?, title, None)?;
        Ok((tape.scalar_value(loss), n))
    }

    /// Decoder state right after reading `context`.
    pub fn start(&self, emb: &EmbeddingTable, context: &[String]) -> Result<(Vec<f64>, DecoderState)> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store)?;
        let ctx = self.context_on(&mut tape, &p, &emb.embed(context), None)?;
        let st = self.initial_on(&mut tape, &p, ctx)?;
        Ok((tape.value(ctx).data().to_vec(), snapshot(&tape, &st)))
    }

    /// One decoding step: the next-token distribution and the new state.
    pub fn decoder_step(
        &self,
        prev: &Tensor,
        state: &DecoderState,
        context: &[f64],
    ) -> Result<(Vec<f64>, DecoderState)> {
        let d = self.decoder.cell.hidden();
        if prev.len() != self.emb_dim || context.len() != d || state.h.len() != d {
            return Err(Error::Shape {
                op: "decoder_step",
                detail: format!(
                    "expected embedding {} and hidden {d}, got {}, {} and {}",
                    self.emb_dim,
                    prev.len(),
                    context.len(),
                    state.h.len()
                ),
            });
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.store)?;
        let prev = tape.constant_ref(prev)?;
        let ctx = tape.constant(Tensor::vector(context.to_vec()))?;
        let cs = CellState {
            h: tape.constant(state.h.clone())?,
            mem: state
                .mem
                .iter()
                .map(|m| tape.constant(m.clone()))
                .collect::<Result<_>>()?,
        };
        if cs.mem.len() != self.decoder.cell.initial_state(&mut Tape::new(), None).mem.len() {
            return Err(Error::Shape {
                op: "decoder_step",
                detail: "state memory does not match the cell".into(),
            });
        }
        let (next, logits) = self.step_on(&mut tape, &p, prev, ctx, &cs)?;
        Ok((softmax(tape.value(logits).data()), snapshot(&tape, &next)))
    }

    /// Greedy title generation from a context, for inspection only.
    pub fn decode_greedy(&self, emb: &EmbeddingTable, context: &[String], max_len: usize) -> Result<Vec<String>> {
        let (ctx, mut state) = self.start(emb, context)?;
        let mut prev = emb.zero().clone();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (dist, next) = self.decoder_step(&prev, &state, &ctx)?;
            let best = dist
                .iter()
                .enumerate()
                .fold(0, |b, (i, p)| if *p > dist[b] { i } else { b });
            if best == self.vocab.end() {
                break;
            }
            let word = self.vocab.word(best).to_string();
            prev = emb.vector(&word).clone();
            out.push(word);
            state = next;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.encoder.to_checkpoint(false);
        ck.params = self.store.clone();
        ck.with_meta("kind", "seq2seq")
            .with_meta("encoder_params", self.encoder_len)
            .with_meta("vocab_size", self.vocab.len())
    }

    pub fn from_checkpoint(ck: &Checkpoint, emb: &EmbeddingTable) -> Result<Self> {
        if ck.meta("kind") != Some("seq2seq") {
            return Err(Error::Data("checkpoint does not hold an encoder-decoder".into()));
        }
        let n: usize = ck
            .meta("encoder_params")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data("checkpoint is missing `encoder_params`".into()))?;
        let mut enc_store = ParamStore::new();
        for (_, name, t) in ck.params.iter().take(n) {
            enc_store.add(name, t.clone());
        }
        let mut enc_ck = Checkpoint::new(enc_store);
        for k in [
            "arch",
            "input_dim",
            "hidden_dim",
            "filter_width",
            "scalar_decay",
            "pooling",
        ] {
            enc_ck = enc_ck.with_meta(k, ck.meta(k).unwrap_or_default());
        }
        let encoder = Encoder::from_checkpoint(&enc_ck.with_meta("kind", "encoder"))?;
        let mut model = Seq2Seq::new(encoder, emb, 0)?;
        if !model.store.same_layout(&ck.params) {
            return Err(Error::Data("decoder parameters do not match the vocabulary".into()));
        }
        model.store = ck.params.clone();
        Ok(model)
    }
}

fn snapshot(tape: &Tape, st: &CellState) -> DecoderState {
    DecoderState {
        h: tape.value(st.h).clone(),
        mem: st.mem.iter().map(|m| tape.value(*m).clone()).collect(),
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.comp
    }
}

/// Cross-entropy of one predicted token and its inverse probability,
/// both read off the logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenScore {
    pub xent: f64,
    pub inverse_prob: f64,
}

impl TokenScore {
    pub fn new(logits: &[f64], target: usize) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
        let d = logits[target] - m;
        TokenScore {
            xent: s.ln() - d,
            inverse_prob: s / d.exp(),
        }
    }
}

/// `exp(total cross-entropy / total target tokens)`, end marker included.
pub fn perplexity(model: &Seq2Seq, emb: &EmbeddingTable, corpus: &Corpus, pairs: &[PretrainPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("heldout pairs"));
    }
    let scores = pairs
        .par_iter()
        .map(|pair| model.token_scores(emb, corpus, pair))
        .collect::<Result<Vec<_>>>()?;
    Ok(perplexity_of(scores.iter().flatten()))
}

/// Geometric mean of inverse probabilities. The first token's inverse
/// probability is taken directly and the rest enter as log-ratios against
/// it, so a constant distribution comes back without an exp/ln round trip.
pub fn perplexity_of<'a>(scores: impl IntoIterator<Item = &'a TokenScore>) -> f64 {
    let mut it = scores.into_iter();
    let Some(first) = it.next() else { return f64::NAN };
    let mut total = KahanSum::default();
    let mut count = 1usize;
    for s in it {
        total.add(s.xent - first.xent);
        count += 1;
    }
    let offset = (total.total() / count as f64).exp();
    if first.inverse_prob.is_finite() {
        first.inverse_prob * offset
    } else {
        (first.xent + total.total() / count as f64).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Questions held out for perplexity, taken from the end of the id range.
    pub heldout: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-3,
            dropout: 0.1,
            batch_size: 40,
            epochs: 10,
            heldout: 2000,
            seed: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.heldout == 0 {
            return Err(Error::config("pretrain_heldout", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerplexityRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub heldout_perplexity: f64,
}

pub struct PretrainOutcome {
    pub history: Vec<PerplexityRecord>,
    /// Epoch with the lowest heldout perplexity.
    pub best_epoch: usize,
    /// Encoder-decoder at the best epoch.
    pub model: Seq2Seq,
    pub vocab_size: usize,
}

impl PretrainOutcome {
    pub fn encoder(&self) -> Result<Encoder> {
        self.model.export_encoder()
    }
}

/// Builds pairs from `corpus` and `marked` with the heldout questions
/// removed, then trains.
pub fn pretrain(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    marked: &TrainPairs,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if cfg.heldout >= corpus.len() {
        return Err(Error::config("pretrain_heldout", "must leave training questions"));
    }
    let held = heldout_ids(corpus, cfg.heldout);
    let (train_pairs, _) = build_pretrain_pairs(corpus, marked, &held)?;
    let heldout = heldout_pairs(corpus, &held)?;
    pretrain_on(encoder, corpus, emb, &train_pairs, &heldout, cfg)
}

/// Trains on explicit pair lists; no question may appear in both.
pub fn pretrain_on(
    encoder: &Encoder,
    corpus: &Corpus,
    emb: &EmbeddingTable,
    train_pairs: &[PretrainPair],
    heldout: &[PretrainPair],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Empty("pre-training pairs"));
    }
    let held: BTreeSet<u64> = heldout.iter().flat_map(|p| [p.target, p.source]).collect();
    if let Some(p) = train_pairs
        .iter()
        .find(|p| held.contains(&p.target) || held.contains(&p.source))
    {
        return Err(Error::Data(format!(
            "heldout overlaps training: pair ({}, {}) uses a heldout question",
            p.target, p.source
        )));
    }
    let mut model = Seq2Seq::new(encoder.clone(), emb, cfg.seed)?;
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut history = vec![PerplexityRecord {
        epoch: 0,
        train_loss: None,
        heldout_perplexity: perplexity(&model, emb, corpus, heldout)?,
    }];
    let mut best_epoch = 0;
    let mut best = model.clone();

    for epoch in 1..=cfg.epochs {
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut order = train_pairs.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut total = KahanSum::default();
        let mut tokens = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = mix_seed(epoch_seed, b as u64);
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, pair)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(batch_seed, i as u64));
                    let mut dropout = Dropout {
                        rate: cfg.dropout,
                        rng: &mut rng,
                    };
                    let mut tape = Tape::new();
                    let p = tape.bind(model.params())?;
                    let title = &corpus.require(pair.target)?.title;
                    let (loss, n) =
                        model.sequence_loss_on(&mut tape, &p, emb, pair.context(corpus)?, title, Some(&mut dropout))?;
                    // per-token mean, so long titles do not dominate a batch
                    let mean = tape.scale(loss, 1.0 / n as f64)?;
                    let grads = tape.backward(mean, model.params())?;
                    Ok((tape.scalar_value(loss), n, grads))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros_like(model.params());
            for (loss, n, g) in &results {
                total.add(*loss);
                tokens += n;
                grads.accumulate(g);
            }
            grads.scale(1.0 / results.len() as f64);
            if !grads.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            adam.step(model.params_mut(), &grads)?;
        }
        let ppl = perplexity(&model, emb, corpus, heldout)?;
        let train_loss = total.total() / tokens as f64;
        log::info!("pretrain epoch {epoch}: loss {train_loss:.4} heldout perplexity {ppl:.2}");
        history.push(PerplexityRecord {
            epoch,
            train_loss: Some(train_loss),
            heldout_perplexity: ppl,
        });
        if ppl < history[best_epoch].heldout_perplexity {
            best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok(PretrainOutcome {
        history,
        best_epoch,
        vocab_size: best.vocab.len(),
        model: best,
    })
}
