//! Sequence encoders (RCNN, LSTM, GRU, CNN) and pooling into question vectors.

mod cells;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::corpus::{EmbeddingTable, Question};
use crate::error::{Error, Result};

pub use cells::{Cell, CellState, CnnLayer, GruCell, LstmCell, RcnnCell, INIT_RANGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Rcnn,
    Lstm,
    Gru,
    Cnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Rcnn,
        Architecture::Lstm,
        Architecture::Gru,
        Architecture::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Rcnn => "rcnn",
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
            Architecture::Cnn => "cnn",
        }
    }

    /// Hidden size and filter width giving each model roughly 400K parameters
    /// at 200-dimensional inputs.
    pub fn default_dims(self) -> (usize, usize) {
        match self {
            Architecture::Rcnn => (400, 2),
            Architecture::Lstm => (240, 1),
            Architecture::Gru => (280, 1),
            Architecture::Cnn => (667, 3),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::config(
                "architecture",
                format!("unknown architecture `{s}` (rcnn, lstm, gru, cnn)"),
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// L2-normalize every state, then average.
    Mean,
    Last,
    /// Componentwise maximum; CNN only.
    Max,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Last => "last",
            Pooling::Max => "max",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "last" => Ok(Pooling::Last),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::config(
                "pooling",
                format!("unknown pooling `{s}` (mean, last, max)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub arch: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Filter width n for RCNN and CNN; ignored otherwise.
    pub filter_width: usize,
    /// RCNN only: one decay scalar per position instead of a vector.
    pub scalar_decay: bool,
    pub pooling: Pooling,
}

impl EncoderConfig {
    pub fn new(arch: Architecture, input_dim: usize) -> Self {
        let (hidden_dim, filter_width) = arch.default_dims();
        EncoderConfig {
            arch,
            input_dim,
            hidden_dim,
            filter_width,
            scalar_decay: false,
            pooling: if arch == Architecture::Cnn {
                Pooling::Max
            } else {
                Pooling::Last
            },
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_dim = hidden;
        self
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.filter_width = width;
        self
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_scalar_decay(mut self, scalar: bool) -> Self {
        self.scalar_decay = scalar;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be positive"));
        }
        if matches!(self.arch, Architecture::Rcnn | Architecture::Cnn) && self.filter_width == 0 {
            return Err(Error::config("filter_width", "must be at least 1"));
        }
        if self.pooling == Pooling::Max && self.arch != Architecture::Cnn {
            return Err(Error::config("pooling", "max pooling is only available for cnn"));
        }
        if self.scalar_decay && self.arch != Architecture::Rcnn {
            return Err(Error::config("scalar_decay", "only applies to rcnn"));
        }
        Ok(())
    }
}

/// Per-position gate complements 1 - lambda_t.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTrace {
    pub complements: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Forces lambda_t to this constant (RCNN only).
    pub gate_override: Option<f64>,
    pub capture_gates: bool,
}

pub struct RunOutput {
    pub states: Vec<Var>,
    /// lambda_t per position, when captured.
    pub gates: Vec<Var>,
}

/// Inverted dropout: kept units are scaled by 1/(1-p) during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        tape.mask(x, mask)
    }
}

#[derive(Clone, Debug)]
enum Body {
    Recurrent(Cell),
    Conv(CnnLayer),
}

/// An encoder's configuration and trainable weights.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamStore,
    body: Body,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let prefix = config.arch.name();
        let body = match config.arch {
            Architecture::Cnn => Body::Conv(CnnLayer::register(
                &mut params,
                prefix,
                config.input_dim,
                config.hidden_dim,
                config.filter_width,
                &mut rng,
            )),
            arch => Body::Recurrent(Cell::register(
                arch,
                &mut params,
                prefix,
                config.input_dim,
                config.hidden_dim,
                config.filter_width,
                config.scalar_decay,
                &mut rng,
            )?),
        };
        Ok(Encoder { config, params, body })
    }

    /// Wraps existing weights; they must match the layout `config` implies.
    pub fn with_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        let mut enc = Encoder::new(config, 0)?;
        if !enc.params.same_layout(&params) {
            return Err(Error::Data(format!(
                "parameters do not match a {} encoder with hidden {} / input {}",
                enc.config.arch, enc.config.hidden_dim, enc.config.input_dim
            )));
        }
        enc.params = params;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn cell(&self) -> Option<&Cell> {
        match &self.body {
            Body::Recurrent(c) => Some(c),
            Body::Conv(_) => None,
        }
    }

    /// Runs the encoder over `xs` and returns one state per token.
    pub fn run(&self, tape: &mut Tape, p: &[Var], xs: &[Var], opts: RunOptions) -> Result<RunOutput> {
        if xs.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        match &self.body {
            Body::Conv(cnn) => Ok(RunOutput {
                states: cnn.forward(tape, p, xs)?,
                gates: Vec::new(),
            }),
            Body::Recurrent(cell) => {
                if opts.gate_override.is_some() && !matches!(cell, Cell::Rcnn(_)) {
                    return Err(Error::InvalidArgument("gate override needs an rcnn encoder".into()));
                }
                let mut state = cell.initial_state(tape, None);
                let mut states = Vec::with_capacity(xs.len());
                let mut gates = Vec::new();
                for &x in xs {
                    let (next, lam) = cell.step(tape, p, x, &state, opts.gate_override)?;
                    if opts.capture_gates {
                        gates.extend(lam);
                    }
                    states.push(next.h);
                    state = next;
                }
                Ok(RunOutput { states, gates })
            }
        }
    }

    /// Encodes one token sequence into a single vector.
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        p: &[Var],
        xs: &[Var],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let xs = match dropout.as_deref_mut() {
            Some(d) => xs.iter().map(|&x| d.apply(tape, x)).collect::<Result<Vec<_>>>()?,
            None => xs.to_vec(),
        };
        let out = self.run(tape, p, &xs, RunOptions::default())?;
        let pooled = pool(tape, &out.states, self.config.pooling)?;
        match dropout {
            Some(d) => d.apply(tape, pooled),
            None => Ok(pooled),
        }
    }

    /// Title encoding, averaged with the body encoding when `use_body` is set
    /// and the body is non-empty.
    pub fn encode_question_on<'a>(
        &self,
        tape: &mut Tape<'a>,
        p: &[Var],
        title: &[&'a Tensor],
        body: &[&'a Tensor],
        use_body: bool,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        if title.is_empty() {
            return Err(Error::Empty("question title"));
        }
        let tx = title.iter().map(|t| tape.constant_ref(t)).collect::<Result<Vec<_>>>()?;
        let tv = self.encode_sequence(tape, p, &tx, dropout.as_deref_mut())?;
        if !use_body || body.is_empty() {
            return Ok(tv);
        }
        let bx = body.iter().map(|t| tape.constant_ref(t)).collect::<Result<Vec<_>>>()?;
        let bv = self.encode_sequence(tape, p, &bx, dropout)?;
        tape.mean(&[tv, bv])
    }

    /// Inference-mode question vector.
    pub fn encode(&self, question: &Question, emb: &EmbeddingTable, use_body: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params)?;
        let v = self.encode_question_on(
            &mut tape,
            &p,
            &emb.embed(&question.title),
            &emb.embed(&question.body),
            use_body,
            None,
        )?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Inference-mode states for raw input vectors, plus the gate trace when
    /// requested.
    pub fn states(&self, xs: &[&Tensor], opts: RunOptions) -> Result<(Vec<Vec<f64>>, Option<GateTrace>)> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params)?;
        let xv = xs.iter().map(|t| tape.constant_ref(t)).collect::<Result<Vec<_>>>()?;
        let out = self.run(&mut tape, &p, &xv, opts)?;
        let states = out.states.iter().map(|v| tape.value(*v).data().to_vec()).collect();
        let trace = opts.capture_gates.then(|| GateTrace {
            complements: out
                .gates
                .iter()
                .map(|g| tape.value(*g).data().iter().map(|l| 1.0 - l).collect())
                .collect(),
        });
        Ok((states, trace))
    }

    pub fn to_checkpoint(&self, pretrained: bool) -> Checkpoint {
        let c = &self.config;
        Checkpoint::new(self.params.clone())
            .with_meta("kind", "encoder")
            .with_meta("arch", c.arch)
            .with_meta("input_dim", c.input_dim)
            .with_meta("hidden_dim", c.hidden_dim)
            .with_meta("filter_width", c.filter_width)
            .with_meta("scalar_decay", c.scalar_decay)
            .with_meta("pooling", c.pooling)
            .with_meta("pretrained", pretrained)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("checkpoint field `{k}` is not a number")))
        };
        if get("kind")? != "encoder" {
            return Err(Error::Data("checkpoint does not hold an encoder".into()));
        }
        let config = EncoderConfig {
            arch: get("arch")?.parse()?,
            input_dim: num("input_dim")?,
            hidden_dim: num("hidden_dim")?,
            filter_width: num("filter_width")?,
            scalar_decay: get("scalar_decay")? == "true",
            pooling: get("pooling")?.parse()?,
        };
        Encoder::with_params(config, ck.params.clone())
    }
}

/// Collapses a state sequence into one vector.
///
/// Under mean pooling, zero-norm states are skipped; if every state has zero
/// norm the result is an error.
pub fn pool(tape: &mut Tape, states: &[Var], pooling: Pooling) -> Result<Var> {
    let last = *states.last().ok_or(Error::Empty("state sequence"))?;
    match pooling {
        Pooling::Last => Ok(last),
        Pooling::Max => tape.elem_max(states),
        Pooling::Mean => {
            let mut normed = Vec::with_capacity(states.len());
            for &s in states {
                if tape.value(s).norm() == 0.0 {
                    log::debug!("skipping zero-norm state in mean pooling");
                    continue;
                }
                normed.push(tape.l2_normalize(s)?);
            }
            if normed.is_empty() {
                return Err(Error::ZeroVector("mean pooling"));
            }
            tape.mean(&normed)
        }
    }
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine",
            detail: format!("{} vs {}", u.len(), v.len()),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector("cosine"));
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests;
