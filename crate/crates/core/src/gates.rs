//! Inspection of the RCNN decay gates: how much of each input the adaptive
//! weights 1 - lambda_t let through, per position and per token.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{EmbeddingTable, Question};
use crate::encoders::{Architecture, Encoder, RunOptions};
use crate::error::{Error, Result};

/// Which part of a question the gates are read over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Field {
    Title,
    Body,
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "title" => Ok(Field::Title),
            "body" => Ok(Field::Body),
            other => Err(Error::config("field", format!("expected title or body, got `{other}`"))),
        }
    }
}

impl Field {
    fn tokens(self, q: &Question) -> &[String] {
        match self {
            Field::Title => &q.title,
            Field::Body => &q.body,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    /// 1-based token position.
    pub position: usize,
    pub max: f64,
    pub mean: f64,
    /// Questions long enough to reach this position.
    pub count: usize,
}

/// Max and mean of the gate complement vector at each position, averaged
/// over the questions that reach it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayProfile {
    pub rows: Vec<ProfileRow>,
}

impl DecayProfile {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "position,max,mean,count")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.position, r.max, r.mean, r.count)?;
        }
        Ok(())
    }
}

fn require_rcnn(encoder: &Encoder) -> Result<()> {
    if encoder.config().arch != Architecture::Rcnn {
        return Err(Error::InvalidArgument(format!(
            "gate analysis needs an rcnn checkpoint, got {}",
            encoder.config().arch
        )));
    }
    Ok(())
}

/// Per-position complements 1 - lambda_t for one token sequence.
pub fn gate_complements<S: AsRef<str>>(encoder: &Encoder, emb: &EmbeddingTable, tokens: &[S]) -> Result<Vec<Vec<f64>>> {
    require_rcnn(encoder)?;
    let opts = RunOptions {
        capture_gates: true,
        ..Default::default()
    };
    let (_, trace) = encoder.states(&emb.embed(tokens), opts)?;
    Ok(trace.map(|t| t.complements).unwrap_or_default())
}

/// Aggregates gate statistics over `questions`, up to the longest one.
/// Questions whose chosen field is empty are skipped.
pub fn decay_profile(
    encoder: &Encoder,
    emb: &EmbeddingTable,
    questions: &[&Question],
    field: Field,
) -> Result<DecayProfile> {
    require_rcnn(encoder)?;
    let per_question: Vec<Vec<(f64, f64)>> = questions
        .par_iter()
        .filter(|q| !field.tokens(q).is_empty())
        .map(|q| {
            let comps = gate_complements(encoder, emb, field.tokens(q))?;
            Ok(comps
                .iter()
                .map(|v| {
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (max, v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    if per_question.is_empty() {
        return Err(Error::Empty("question set"));
    }
    let longest = per_question.iter().map(Vec::len).max().unwrap_or(0);
    let rows = (0..longest)
        .map(|t| {
            let at: Vec<(f64, f64)> = per_question.iter().filter_map(|q| q.get(t).copied()).collect();
            let n = at.len() as f64;
            ProfileRow {
                position: t + 1,
                max: at.iter().map(|x| x.0).sum::<f64>() / n,
                mean: at.iter().map(|x| x.1).sum::<f64>() / n,
                count: at.len(),
            }
        })
        .collect();
    Ok(DecayProfile { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

/// The scalar weight 1 - lambda_t given to each token by a scalar-decay
/// model.
pub fn token_weight_trace<S: AsRef<str>>(
    encoder: &Encoder,
    emb: &EmbeddingTable,
    tokens: &[S],
) -> Result<Vec<TokenWeight>> {
    require_rcnn(encoder)?;
    if !encoder.config().scalar_decay {
        return Err(Error::InvalidArgument(
            "token traces need a checkpoint trained with scalar decay".into(),
        ));
    }
    let comps = gate_complements(encoder, emb, tokens)?;
    Ok(tokens
        .iter()
        .zip(comps)
        .map(|(t, c)| TokenWeight {
            token: t.as_ref().to_string(),
            weight: c[0],
        })
        .collect())
}

pub fn write_trace_csv(trace: &[TokenWeight], mut w: impl Write) -> Result<()> {
    writeln!(w, "token,weight")?;
    for t in trace {
        // tokens are whitespace-free but may hold commas or quotes
        if t.token.contains([',', '"']) {
            writeln!(w, "\"{}\",{}", t.token.replace('"', "\"\""), t.weight)?;
        } else {
            writeln!(w, "{},{}", t.token, t.weight)?;
        }
    }
    Ok(())
}

const SHADES: [char; 5] = [' ', '░', '▒', '▓', '█'];

/// One line per token: a shade block scaled by weight, the weight, the token.
pub fn heatmap(trace: &[TokenWeight]) -> String {
    let mut out = String::new();
    for t in trace {
        let level = ((t.weight * SHADES.len() as f64) as usize).min(SHADES.len() - 1);
        let bar: String = std::iter::repeat_n(SHADES[level], 8).collect();
        let _ = writeln!(out, "{bar} {:.3} {}", t.weight, t.token);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;

    fn setup(scalar: bool) -> (Encoder, EmbeddingTable, Vec<Question>) {
        let rows = (0..6)
            .map(|i| {
                (
                    format!("w{i}"),
                    (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect(),
                )
            })
            .collect();
        let emb = EmbeddingTable::from_rows(rows).unwrap();
        let cfg = EncoderConfig::new(Architecture::Rcnn, 4)
            .with_hidden(5)
            .with_scalar_decay(scalar);
        let enc = Encoder::new(cfg, 3).unwrap();
        let qs = vec![
            Question::new(1, "w0 w1 w2", "w3").unwrap(),
            Question::new(2, "w4 w5 w0 w1 w2", "").unwrap(),
        ];
        (enc, emb, qs)
    }

    #[test]
    fn profile_covers_longest_question() {
        let (enc, emb, qs) = setup(false);
        let refs: Vec<&Question> = qs.iter().collect();
        let p = decay_profile(&enc, &emb, &refs, Field::Title).unwrap();
        assert_eq!(p.rows.len(), 5);
        assert_eq!(p.rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![2, 2, 2, 1, 1]);
        for r in &p.rows {
            assert!(0.0 < r.mean && r.mean <= r.max && r.max < 1.0);
        }
        let single = decay_profile(&enc, &emb, &refs[..1], Field::Title).unwrap();
        assert_eq!(single.rows.len(), 3);
        // the body of question 2 is empty and skipped
        let body = decay_profile(&enc, &emb, &refs, Field::Body).unwrap();
        assert_eq!(body.rows.len(), 1);
        assert_eq!(body.rows[0].count, 1);
        assert_eq!(decay_profile(&enc, &emb, &refs, Field::Title).unwrap(), p);
    }

    #[test]
    fn zero_weights_give_half() {
        let (mut enc, emb, qs) = setup(true);
        for t in enc.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let refs: Vec<&Question> = qs.iter().collect();
        let p = decay_profile(&enc, &emb, &refs, Field::Title).unwrap();
        assert!(p.rows.iter().all(|r| r.max == 0.5 && r.mean == 0.5));
        let trace = token_weight_trace(&enc, &emb, &qs[1].title).unwrap();
        assert_eq!(trace.len(), 5);
        assert!(trace.iter().all(|t| t.weight == 0.5));
    }

    #[test]
    fn trace_needs_scalar_decay() {
        let (enc, emb, qs) = setup(false);
        assert!(token_weight_trace(&enc, &emb, &qs[0].title).is_err());
        let (enc, emb, qs) = setup(true);
        let trace = token_weight_trace(&enc, &emb, &qs[0].title).unwrap();
        assert_eq!(trace.len(), qs[0].title.len());
        assert!(trace.iter().all(|t| t.weight > 0.0 && t.weight < 1.0));
        assert_eq!(heatmap(&trace).lines().count(), 3);
    }

    #[test]
    fn non_rcnn_rejected() {
        let (_, emb, qs) = setup(false);
        let lstm = Encoder::new(EncoderConfig::new(Architecture::Lstm, 4).with_hidden(5), 1).unwrap();
        assert!(decay_profile(&lstm, &emb, &[&qs[0]], Field::Title).is_err());
    }

    #[test]
    fn csv_shapes() {
        let mut buf = Vec::new();
        write_trace_csv(
            &[TokenWeight {
                token: "a,b".into(),
                weight: 0.25,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "token,weight\n\"a,b\",0.25\n");
    }
}
