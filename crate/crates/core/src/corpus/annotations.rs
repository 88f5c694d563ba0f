use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Number of retrieved candidates per evaluation query.
pub const CANDIDATES_PER_QUERY: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalQuery {
    pub query_id: u64,
    /// Every id listed as similar, including ones not among the candidates.
    pub positives: BTreeSet<u64>,
    pub candidates: Vec<u64>,
    pub labels: Vec<bool>,
}

impl EvalQuery {
    pub fn new(query_id: u64, positives: BTreeSet<u64>, candidates: Vec<u64>) -> Self {
        let labels = candidates.iter().map(|c| positives.contains(c)).collect();
        EvalQuery {
            query_id,
            positives,
            candidates,
            labels,
        }
    }

    pub fn num_relevant(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

/// Annotated candidate pools. Queries without a relevant candidate are
/// dropped at parse time and only counted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvaluationSet {
    pub queries: Vec<EvalQuery>,
    pub excluded: usize,
}

impl EvaluationSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Mean number of relevant candidates per retained query.
    pub fn avg_positives(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        self.queries.iter().map(EvalQuery::num_relevant).sum::<usize>() as f64 / self.queries.len() as f64
    }

    pub fn question_ids(&self) -> BTreeSet<u64> {
        self.queries
            .iter()
            .flat_map(|q| std::iter::once(q.query_id).chain(q.candidates.iter().copied()))
            .collect()
    }
}

fn parse_ids(field: &str, source: &str, line: usize) -> Result<Vec<u64>> {
    field
        .split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(source, line, format!("bad id `{s}`")))
        })
        .collect()
}

/// Parses `query_id<TAB>positive ids<TAB>candidate ids` with comma-separated
/// id lists and exactly [`CANDIDATES_PER_QUERY`] candidates.
pub fn parse_annotations(reader: impl BufRead, source: &str) -> Result<EvaluationSet> {
    parse_annotations_with(reader, source, CANDIDATES_PER_QUERY)
}

pub fn parse_annotations_with(reader: impl BufRead, source: &str, candidates: usize) -> Result<EvaluationSet> {
    let mut set = EvaluationSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                source,
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let qid: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad query id `{}`", fields[0])))?;
        let positives: BTreeSet<u64> = parse_ids(fields[1], source, i + 1)?.into_iter().collect();
        let cands = parse_ids(fields[2], source, i + 1)?;
        if cands.len() != candidates {
            return Err(Error::parse(
                source,
                i + 1,
                format!("query {qid} has {} candidates, expected {candidates}", cands.len()),
            ));
        }
        let q = EvalQuery::new(qid, positives, cands);
        for p in &q.positives {
            if !q.candidates.contains(p) {
                log::info!(
                    "{source}:{}: positive {p} of query {qid} is not among its candidates",
                    i + 1
                );
            }
        }
        if q.num_relevant() == 0 {
            set.excluded += 1;
        } else {
            set.queries.push(q);
        }
    }
    if set.excluded > 0 {
        log::info!(
            "{source}: {} queries without relevant candidates excluded",
            set.excluded
        );
    }
    Ok(set)
}

pub fn write_annotation_line(
    mut w: impl Write,
    query_id: u64,
    positives: &BTreeSet<u64>,
    candidates: &[u64],
) -> Result<()> {
    let join = |ids: &mut dyn Iterator<Item = u64>| ids.map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    writeln!(
        w,
        "{query_id}\t{}\t{}",
        join(&mut positives.iter().copied()),
        join(&mut candidates.iter().copied())
    )?;
    Ok(())
}

pub fn write_annotations(set: &EvaluationSet, mut w: impl Write) -> Result<()> {
    for q in &set.queries {
        write_annotation_line(&mut w, q.query_id, &q.positives, &q.candidates)?;
    }
    Ok(())
}

/// User-marked similar pairs used for training.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainPairs {
    pub pairs: Vec<(u64, u64)>,
    /// Known positives per query in both directions, used to keep them out
    /// of negative samples.
    pub positives: BTreeMap<u64, BTreeSet<u64>>,
}

impl TrainPairs {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut out = TrainPairs::default();
        for (q, p) in pairs {
            if q == p {
                log::warn!("ignoring self-pair ({q}, {p})");
                continue;
            }
            let fresh = out.positives.entry(q).or_default().insert(p);
            out.positives.entry(p).or_default().insert(q);
            if fresh {
                out.pairs.push((q, p));
            }
        }
        out
    }

    pub fn known_positives(&self, query: u64) -> Option<&BTreeSet<u64>> {
        self.positives.get(&query)
    }

    /// Pairs closed under symmetry, each unordered pair listed in both directions.
    pub fn symmetric(&self) -> Vec<(u64, u64)> {
        let set: BTreeSet<(u64, u64)> = self.pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        set.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Parses `query_id<TAB>similar ids[<TAB>...]`; ids are comma- or
/// space-separated and trailing columns are ignored.
pub fn parse_train_pairs(reader: impl BufRead, source: &str) -> Result<TrainPairs> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::parse(source, i + 1, "expected query id and similar ids"));
        }
        let qid: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad query id `{}`", fields[0])))?;
        for p in parse_ids(fields[1], source, i + 1)? {
            pairs.push((qid, p));
        }
    }
    Ok(TrainPairs::from_pairs(pairs))
}

pub fn write_train_pairs(pairs: &TrainPairs, mut w: impl Write) -> Result<()> {
    let mut grouped: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for &(q, p) in &pairs.pairs {
        grouped.entry(q).or_default().push(p);
    }
    for (q, ps) in &grouped {
        let ids: Vec<String> = ps.iter().map(u64::to_string).collect();
        writeln!(w, "{q}\t{}", ids.join(","))?;
    }
    Ok(())
}
