use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{distinct, Retriever};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::config("bm25_k1", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::config("bm25_b", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Term postings over a document collection. Postings are sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u64, u32)>>,
    doc_ids: Vec<u64>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    params: Bm25Params,
    #[serde(skip)]
    positions: HashMap<u64, usize>,
}

impl InvertedIndex {
    /// Builds an index over `(id, tokens)` documents.
    pub fn build<I, S>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Vec<S>)>,
        S: AsRef<str>,
    {
        params.validate()?;
        let mut sorted: Vec<(u64, Vec<S>)> = docs.into_iter().collect();
        sorted.sort_by_key(|d| d.0);
        let mut postings: BTreeMap<String, Vec<(u64, u32)>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(sorted.len());
        let mut doc_lens = Vec::with_capacity(sorted.len());
        for (id, tokens) in &sorted {
            if doc_ids.last() == Some(id) {
                return Err(Error::DuplicateId(*id));
            }
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t.as_ref()).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term.to_string()).or_default().push((*id, n));
            }
            doc_ids.push(*id);
            doc_lens.push(tokens.len());
        }
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64
        };
        let mut index = InvertedIndex {
            postings,
            doc_ids,
            doc_lens,
            avg_len,
            params,
            positions: HashMap::new(),
        };
        index.reindex();
        Ok(index)
    }

    fn reindex(&mut self) {
        self.positions = self.doc_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn set_params(&mut self, params: Bm25Params) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, id: u64) -> Option<usize> {
        self.positions.get(&id).map(|&i| self.doc_lens[i])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, id: u64) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&id, |e| e.0).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_len > 0.0 {
            len as f64 / self.avg_len
        } else {
            0.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// BM25 of one document, summed over distinct query terms.
    pub fn bm25_score<S: AsRef<str>>(&self, query: &[S], doc: u64) -> Result<f64> {
        let pos = *self.positions.get(&doc).ok_or(Error::UnknownId(doc))?;
        let len = self.doc_lens[pos];
        let mut score = 0.0;
        for term in distinct(query) {
            let tf = self.term_freq(term, doc);
            if tf > 0 {
                score += self.term_score(self.idf(term), tf, len);
            }
        }
        Ok(score)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut index: InvertedIndex = serde_json::from_reader(f)?;
        index.params.validate()?;
        if index.doc_lens.len() != index.doc_ids.len() {
            return Err(Error::Data("index document tables disagree".into()));
        }
        index.reindex();
        Ok(index)
    }
}

impl Retriever for InvertedIndex {
    fn doc_ids(&self) -> &[u64] {
        &self.doc_ids
    }

    fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_ids.len()];
        for term in distinct(query) {
            let Some(post) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(id, tf) in post {
                let i = self.positions[&id];
                scores[i] += self.term_score(idf, tf, self.doc_lens[i]);
            }
        }
        scores
    }

    fn score_one(&self, query: &[String], doc: u64) -> Result<f64> {
        self.bm25_score(query, doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<(u64, Vec<String>)> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u64 + 1, t.split_whitespace().map(String::from).collect()))
            .collect()
    }

    #[test]
    fn single_document_idf() {
        let idx = InvertedIndex::build(docs(&["cat"]), Bm25Params::default()).unwrap();
        let s = idx.bm25_score(&["cat"], 1).unwrap();
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((s - 0.28768).abs() < 1e-5);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let idx = InvertedIndex::build(docs(&["a b", "c d"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.bm25_score(&["z"], 1).unwrap(), 0.0);
        assert!(matches!(idx.bm25_score(&["a"], 9), Err(Error::UnknownId(9))));
    }

    #[test]
    fn k1_zero_gives_idf_sum() {
        let p = Bm25Params { k1: 0.0, b: 0.75 };
        let idx = InvertedIndex::build(docs(&["a a b c", "b d", "e"]), p).unwrap();
        let s = idx.bm25_score(&["a", "b"], 1).unwrap();
        let n = 3.0f64;
        let idf = |df: f64| (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        assert!((s - (idf(1.0) + idf(2.0))).abs() < 1e-14);
    }

    #[test]
    fn monotone_in_tf_and_df() {
        let idx = InvertedIndex::build(docs(&["x y y y", "x y", "z w"]), Bm25Params::default()).unwrap();
        // equal lengths isolate tf
        let idx2 = InvertedIndex::build(docs(&["q q r", "q r r", "s t u"]), Bm25Params::default()).unwrap();
        assert!(idx2.bm25_score(&["q"], 1).unwrap() > idx2.bm25_score(&["q"], 2).unwrap());
        assert!(idx.idf("x") < idx.idf("z"));
    }

    #[test]
    fn persisted_index_round_trips() {
        let idx = InvertedIndex::build(docs(&["a b c", "b c d", "d e"]), Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let back = InvertedIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let q: Vec<String> = vec!["b".into(), "d".into()];
        assert_eq!(back.score_all(&q), idx.score_all(&q));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = vec![(1u64, vec!["a"]), (1, vec!["b"])];
        assert!(InvertedIndex::build(d, Bm25Params::default()).is_err());
    }
}
