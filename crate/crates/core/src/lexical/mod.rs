//! BM25 and TF-IDF retrieval, used for candidate generation and as
//! baseline rankers.

mod bm25;
mod tfidf;

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;

pub use bm25::{Bm25Params, InvertedIndex};
pub use tfidf::{sparse_norm, SparseVector, TfIdfConfig, TfIdfIndex};

use crate::corpus::{Corpus, EvalQuery, EvaluationSet, Question};
use crate::error::{Error, Result};
use crate::metrics::QueryResult;
use crate::ranking::{sort_ranked, Ranked};

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// The English stopword list shipped with the crate.
pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// One word per line; blank lines and `#` comments are skipped.
pub fn load_stopwords(reader: impl BufRead) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() && !w.starts_with('#') {
            out.insert(w.to_lowercase());
        }
    }
    Ok(out)
}

pub(crate) fn distinct<S: AsRef<str>>(terms: &[S]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    terms.iter().map(AsRef::as_ref).filter(move |t| seen.insert(*t))
}

/// A scorer over an indexed document collection.
pub trait Retriever {
    /// Indexed ids, ascending.
    fn doc_ids(&self) -> &[u64];
    /// Scores for every document, aligned with [`Retriever::doc_ids`].
    fn score_all(&self, query: &[String]) -> Vec<f64>;
    /// Direct score of a single document.
    fn score_one(&self, query: &[String], doc: u64) -> Result<f64>;
}

/// Title followed by body, the document text both scorers index.
pub fn document(q: &Question) -> Vec<String> {
    q.all_tokens().map(String::from).collect()
}

pub fn documents(corpus: &Corpus) -> impl Iterator<Item = (u64, Vec<String>)> + '_ {
    corpus.questions().iter().map(|q| (q.id, document(q)))
}

/// The `k` best documents for `query`, excluding `exclude`; score
/// descending with ties broken by ascending id.
pub fn retrieve_top_k(r: &impl Retriever, query: &[String], exclude: Option<u64>, k: usize) -> Result<Vec<Ranked>> {
    if r.doc_ids().is_empty() {
        return Err(Error::Empty("index"));
    }
    let mut all: Vec<Ranked> = r
        .doc_ids()
        .iter()
        .zip(r.score_all(query))
        .filter(|(id, _)| Some(**id) != exclude)
        .map(|(id, score)| Ranked { id: *id, score })
        .collect();
    sort_ranked(&mut all);
    all.truncate(k);
    Ok(all)
}

/// Builds candidate pools by retrieving the top `k` questions for each
/// query. Queries whose pool holds no positive are excluded and counted.
pub fn build_candidate_pools(
    r: &impl Retriever,
    corpus: &Corpus,
    queries: &[(u64, BTreeSet<u64>)],
    k: usize,
) -> Result<EvaluationSet> {
    let mut set = EvaluationSet::default();
    for (qid, positives) in queries {
        let q = corpus.require(*qid)?;
        let ranked = retrieve_top_k(r, &document(q), Some(*qid), k)?;
        let eq = EvalQuery::new(*qid, positives.clone(), ranked.iter().map(|x| x.id).collect());
        if eq.num_relevant() == 0 {
            set.excluded += 1;
        } else {
            set.queries.push(eq);
        }
    }
    Ok(set)
}

/// Reranks each annotated candidate pool with a lexical scorer.
pub fn rank_pools(r: &impl Retriever, corpus: &Corpus, set: &EvaluationSet) -> Result<Vec<QueryResult>> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    set.queries
        .iter()
        .map(|eq| {
            let query = document(corpus.require(eq.query_id)?);
            let mut ranked = eq
                .candidates
                .iter()
                .map(|&c| {
                    Ok(Ranked {
                        id: c,
                        score: r.score_one(&query, c)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sort_ranked(&mut ranked);
            Ok(QueryResult {
                query_id: eq.query_id,
                labels: ranked.iter().map(|x| eq.positives.contains(&x.id)).collect(),
            })
        })
        .collect()
}
