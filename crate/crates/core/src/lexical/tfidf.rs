use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Retriever;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfConfig {
    /// Longest n-gram used as a term.
    pub order: usize,
    /// Tokens dropped before n-grams are formed, when set.
    pub stopwords: Option<BTreeSet<String>>,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        TfIdfConfig {
            order: 1,
            stopwords: None,
        }
    }
}

impl TfIdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.order) {
            return Err(Error::config("tfidf_order", "must be 1, 2 or 3"));
        }
        Ok(())
    }

    /// All n-grams up to `order`, space-joined, after stopword removal.
    pub fn terms<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let kept: Vec<&str> = tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| self.stopwords.as_ref().is_none_or(|s| !s.contains(*t)))
            .collect();
        let mut out = Vec::new();
        for n in 1..=self.order {
            out.extend(kept.windows(n).map(|w| w.join(" ")));
        }
        out
    }
}

/// Sparse term weights, ordered by term.
pub type SparseVector = BTreeMap<String, f64>;

pub fn sparse_norm(v: &SparseVector) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// Document frequencies and precomputed document vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfIndex {
    config: TfIdfConfig,
    df: BTreeMap<String, usize>,
    doc_ids: Vec<u64>,
    docs: Vec<SparseVector>,
    norms: Vec<f64>,
    /// term -> (document position, weight)
    postings: BTreeMap<String, Vec<(usize, f64)>>,
    #[serde(skip)]
    positions: HashMap<u64, usize>,
}

impl TfIdfIndex {
    pub fn build<I, S>(docs: I, config: TfIdfConfig) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Vec<S>)>,
        S: AsRef<str>,
    {
        config.validate()?;
        let mut sorted: Vec<(u64, Vec<String>)> =
            docs.into_iter().map(|(id, toks)| (id, config.terms(&toks))).collect();
        sorted.sort_by_key(|d| d.0);
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateId(w[0].0));
            }
        }
        for (_, terms) in &sorted {
            let uniq: BTreeSet<&String> = terms.iter().collect();
            for t in uniq {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let mut index = TfIdfIndex {
            config,
            df,
            doc_ids: sorted.iter().map(|d| d.0).collect(),
            docs: Vec::new(),
            norms: Vec::new(),
            postings: BTreeMap::new(),
            positions: HashMap::new(),
        };
        index.docs = sorted.iter().map(|(_, terms)| index.weigh(terms)).collect();
        index.norms = index.docs.iter().map(sparse_norm).collect();
        for (i, v) in index.docs.iter().enumerate() {
            for (t, w) in v {
                index.postings.entry(t.clone()).or_default().push((i, *w));
            }
        }
        index.reindex();
        Ok(index)
    }

    fn reindex(&mut self) {
        self.positions = self.doc_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    }

    pub fn config(&self) -> &TfIdfConfig {
        &self.config
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    fn weigh(&self, terms: &[String]) -> SparseVector {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_default() += 1;
        }
        let n = self.num_docs() as f64;
        tf.into_iter()
            .filter_map(|(t, c)| {
                let df = self.doc_freq(t);
                if df == 0 {
                    return None;
                }
                let w = (1.0 + (c as f64).ln()) * (n / df as f64).ln();
                (w != 0.0).then(|| (t.to_string(), w))
            })
            .collect()
    }

    /// Weighted vector of raw tokens under this index's statistics.
    pub fn tfidf_vector<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        self.weigh(&self.config.terms(tokens))
    }

    pub fn doc_vector(&self, id: u64) -> Option<&SparseVector> {
        self.positions.get(&id).map(|&i| &self.docs[i])
    }

    fn cos(dot: f64, a: f64, b: f64) -> f64 {
        if a == 0.0 || b == 0.0 {
            0.0
        } else {
            dot / (a * b)
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut index: TfIdfIndex = serde_json::from_reader(f)?;
        index.config.validate()?;
        index.reindex();
        Ok(index)
    }
}

impl Retriever for TfIdfIndex {
    fn doc_ids(&self) -> &[u64] {
        &self.doc_ids
    }

    fn score_all(&self, query: &[String]) -> Vec<f64> {
        let q = self.tfidf_vector(query);
        let qn = sparse_norm(&q);
        let mut dots = vec![0.0; self.doc_ids.len()];
        for (t, wq) in &q {
            if let Some(post) = self.postings.get(t) {
                for &(i, wd) in post {
                    dots[i] += wq * wd;
                }
            }
        }
        dots.iter()
            .zip(&self.norms)
            .map(|(d, n)| Self::cos(*d, qn, *n))
            .collect()
    }

    fn score_one(&self, query: &[String], doc: u64) -> Result<f64> {
        let i = *self.positions.get(&doc).ok_or(Error::UnknownId(doc))?;
        let q = self.tfidf_vector(query);
        let d = &self.docs[i];
        let dot: f64 = q.iter().map(|(t, w)| w * d.get(t).copied().unwrap_or(0.0)).sum();
        Ok(Self::cos(dot, sparse_norm(&q), self.norms[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn two_document_weights_by_hand() {
        let idx = TfIdfIndex::build(
            vec![(1, toks("apple apple pie")), (2, toks("apple tart"))],
            TfIdfConfig::default(),
        )
        .unwrap();
        let v1 = idx.doc_vector(1).unwrap();
        // apple occurs in both documents: idf ln(2/2) = 0
        assert!(!v1.contains_key("apple"));
        let pie = (1.0 + 1f64.ln()) * (2f64 / 1.0).ln();
        assert_eq!(v1["pie"], pie);
        let v = idx.tfidf_vector(&toks("pie pie missing"));
        assert_eq!(v["pie"], (1.0 + 2f64.ln()) * 2f64.ln());
        assert!(!v.contains_key("missing"));
    }

    #[test]
    fn ngrams_and_stopwords() {
        let cfg = TfIdfConfig {
            order: 2,
            stopwords: Some(["the".to_string()].into_iter().collect()),
        };
        assert_eq!(
            cfg.terms(&toks("the red the fox")),
            toks("red fox")
                .into_iter()
                .chain(["red fox".to_string()])
                .collect::<Vec<_>>()
        );
        assert!(TfIdfConfig {
            order: 4,
            stopwords: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn self_cosine_is_one() {
        let idx = TfIdfIndex::build(
            vec![(1, toks("a b c b")), (2, toks("c d")), (3, toks("e f a"))],
            TfIdfConfig {
                order: 3,
                stopwords: None,
            },
        )
        .unwrap();
        let s = idx.score_one(&toks("a b c b"), 1).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
