use std::collections::HashMap;
use std::io::BufRead;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How tokens missing from the vocabulary are embedded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OovPolicy {
    Zero,
}

/// Frozen word vectors loaded from word2vec text format.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Tensor>,
    zero: Tensor,
    dim: usize,
    oov: OovPolicy,
}

impl EmbeddingTable {
    pub fn from_rows(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, v)| v.len())
            .ok_or(Error::Empty("embedding table"))?;
        let mut table = EmbeddingTable {
            words: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
            rows: Vec::with_capacity(entries.len()),
            zero: Tensor::zeros(&[dim]),
            dim,
            oov: OovPolicy::Zero,
        };
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Data(format!(
                    "vector for `{word}` has {} dims, expected {dim}",
                    v.len()
                )));
            }
            table.insert(word, v);
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, v: Vec<f64>) {
        if self.index.contains_key(&word) {
            log::warn!("duplicate embedding for `{word}`; keeping the first");
            return;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.rows.push(Tensor::vector(v));
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, index: usize) -> &Tensor {
        &self.rows[index]
    }

    /// Vector for `token`, falling back to the OOV policy.
    pub fn vector(&self, token: &str) -> &Tensor {
        match self.lookup(token) {
            Some(i) => &self.rows[i],
            None => match self.oov {
                OovPolicy::Zero => &self.zero,
            },
        }
    }

    pub fn zero(&self) -> &Tensor {
        &self.zero
    }

    pub fn embed<'a, S: AsRef<str>>(&'a self, tokens: &[S]) -> Vec<&'a Tensor> {
        tokens.iter().map(|t| self.vector(t.as_ref())).collect()
    }
}

/// Reads `token v1 ... vd` lines. A leading `count dim` header line, as
/// written by word2vec, is accepted and checked.
pub fn load_embeddings(reader: impl BufRead, source: &str) -> Result<EmbeddingTable> {
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut header: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 {
            if let (Ok(n), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                header = Some((n, d));
                dim = Some(d);
                continue;
            }
        }
        let values = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source, i + 1, format!("non-numeric value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(source, i + 1, "token without a vector"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    source,
                    i + 1,
                    format!("dimension mismatch: {} values, expected {d}", values.len()),
                ))
            }
            _ => {}
        }
        entries.push((fields[0].to_string(), values));
    }
    if let Some((n, _)) = header {
        if n != entries.len() {
            log::warn!("{source}: header announces {n} vectors, read {}", entries.len());
        }
    }
    EmbeddingTable::from_rows(entries)
}

/// Writes the table in word2vec text format with a header line. Values use
/// shortest round-trip formatting, so reloading is exact.
pub fn write_embeddings(table: &EmbeddingTable, mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "{} {}", table.len(), table.dim())?;
    for (word, row) in table.words.iter().zip(&table.rows) {
        write!(w, "{word}")?;
        for v in row.data() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {

    #[test]
    fn written_table_reloads_exactly() {
        let t = EmbeddingTable::from_rows(vec![
            ("a".into(), vec![0.1, -2.5e-7]),
            ("b".into(), vec![1.0 / 3.0, 4.0]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_embeddings(&t, &mut buf).unwrap();
        let back = load_embeddings(buf.as_slice(), "t").unwrap();
        assert_eq!(back.words(), t.words());
        assert_eq!(back.vector("b").data(), t.vector("b").data());
    }
    use super::*;

    fn line(tok: &str, dim: usize, v: f64) -> String {
        let vals: Vec<String> = (0..dim).map(|k| format!("{}", v + k as f64 * 0.001)).collect();
        format!("{tok} {}\n", vals.join(" "))
    }

    #[test]
    fn three_vectors() {
        let text = [line("a", 200, 0.1), line("b", 200, 0.2), line("c", 200, 0.3)].concat();
        let t = load_embeddings(text.as_bytes(), "t").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 200);
        assert_eq!(t.vector("b").data()[0], 0.2);
    }

    #[test]
    fn oov_is_zero() {
        let t = load_embeddings(line("a", 200, 0.1).as_bytes(), "t").unwrap();
        let v = t.vector("nope");
        assert_eq!(v.len(), 200);
        assert!(v.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn mixed_dims_rejected() {
        let text = [line("a", 200, 0.1), line("b", 199, 0.2)].concat();
        assert!(matches!(
            load_embeddings(text.as_bytes(), "t"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn non_numeric_rejected() {
        assert!(load_embeddings("a 0.1 zz\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn header_line_accepted() {
        let text = format!("2 3\n{}{}", line("a", 3, 0.0), line("b", 3, 1.0));
        let t = load_embeddings(text.as_bytes(), "t").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        let bad = format!("2 3\n{}", line("a", 4, 0.0));
        assert!(load_embeddings(bad.as_bytes(), "t").is_err());
    }
}
