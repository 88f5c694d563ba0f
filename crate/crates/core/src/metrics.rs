//! Ranking metrics over candidate pools and paired significance tests.
//!
//! Per-query functions return fractions in [0, 1]; aggregates are reported
//! as percentages.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Binary relevance labels of one query's candidates in ranked order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub query_id: u64,
    pub labels: Vec<bool>,
}

fn require_positive(labels: &[bool]) -> Result<()> {
    if labels.iter().any(|l| *l) {
        Ok(())
    } else {
        Err(Error::Data("ranking has no relevant candidate".into()))
    }
}

/// Mean of precision@k over the relevant positions k. The denominator is
/// the number of relevant candidates in the pool.
pub fn average_precision(labels: &[bool]) -> Result<f64> {
    require_positive(labels)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in labels.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

pub fn reciprocal_rank(labels: &[bool]) -> Result<f64> {
    require_positive(labels)?;
    let first = labels.iter().position(|l| *l).expect("checked above");
    Ok(1.0 / (first + 1) as f64)
}

/// Fraction of relevant items among the top `n` (always divided by `n`).
pub fn precision_at(labels: &[bool], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    labels.iter().take(n).filter(|l| **l).count() as f64 / n as f64
}

fn mean_of(results: &[QueryResult], f: impl Fn(&QueryResult) -> Result<f64>) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("result set"));
    }
    let mut total = 0.0;
    for r in results {
        total += f(r)?;
    }
    Ok(100.0 * total / results.len() as f64)
}

pub fn map(results: &[QueryResult]) -> Result<f64> {
    mean_of(results, |r| average_precision(&r.labels))
}

pub fn mrr(results: &[QueryResult]) -> Result<f64> {
    mean_of(results, |r| reciprocal_rank(&r.labels))
}

pub fn p_at_n(results: &[QueryResult], n: usize) -> Result<f64> {
    mean_of(results, |r| Ok(precision_at(&r.labels, n)))
}

/// MAP, MRR, P@1 and P@5 in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
}

impl Metrics {
    pub fn compute(results: &[QueryResult]) -> Result<Self> {
        Ok(Metrics {
            map: map(results)?,
            mrr: mrr(results)?,
            p_at_1: p_at_n(results, 1)?,
            p_at_5: p_at_n(results, 5)?,
        })
    }

    pub fn mean(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        Some(Metrics {
            map: all.iter().map(|m| m.map).sum::<f64>() / n,
            mrr: all.iter().map(|m| m.mrr).sum::<f64>() / n,
            p_at_1: all.iter().map(|m| m.p_at_1).sum::<f64>() / n,
            p_at_5: all.iter().map(|m| m.p_at_5).sum::<f64>() / n,
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.map, self.mrr, self.p_at_1, self.p_at_5]
    }

    /// One-decimal cells in MAP, MRR, P@1, P@5 order.
    pub fn cells(&self) -> String {
        self.as_array()
            .iter()
            .map(|v| format!("{v:.1}"))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignificanceTest {
    Permutation,
    PairedT,
}

/// Aligns two per-query score lists by query id.
fn paired_differences(a: &[(u64, f64)], b: &[(u64, f64)]) -> Result<Vec<f64>> {
    let bm: BTreeMap<u64, f64> = b.iter().copied().collect();
    let am: BTreeMap<u64, f64> = a.iter().copied().collect();
    if am.len() != a.len() || bm.len() != b.len() || am.len() != bm.len() || am.keys().ne(bm.keys()) {
        return Err(Error::InvalidArgument(
            "significance test needs scores for the same queries".into(),
        ));
    }
    if am.is_empty() {
        return Err(Error::Empty("paired scores"));
    }
    Ok(am.iter().map(|(q, x)| x - bm[q]).collect())
}

/// Two-sided paired permutation (sign-flip) test on the mean difference.
///
/// All 2^n sign assignments are enumerated when that is no more than
/// `resamples`; otherwise `resamples` random assignments are drawn and the
/// p-value is (hits + 1) / (resamples + 1).
pub fn permutation_test(a: &[(u64, f64)], b: &[(u64, f64)], resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 resamples, got {resamples}"
        )));
    }
    let diffs = paired_differences(a, b)?;
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>().abs();
    // slack for summation-order rounding
    let threshold = observed - 1e-12 * (1.0 + diffs.iter().map(|d| d.abs()).sum::<f64>());
    let flipped_sum = |signs: &dyn Fn(usize) -> bool| -> f64 {
        diffs
            .iter()
            .enumerate()
            .map(|(i, d)| if signs(i) { -d } else { *d })
            .sum::<f64>()
            .abs()
    };

    if n < 63 && (1u64 << n) <= resamples as u64 {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| flipped_sum(&|i| mask >> i & 1 == 1) >= threshold)
            .count();
        return Ok(hits as f64 / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let signs: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        if flipped_sum(&|i| signs[i]) >= threshold {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (resamples + 1) as f64)
}

/// Two-sided paired t-test.
pub fn paired_t_test(a: &[(u64, f64)], b: &[(u64, f64)]) -> Result<f64> {
    let diffs = paired_differences(a, b)?;
    let n = diffs.len() as f64;
    if diffs.len() < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least two queries".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

pub fn significance(
    test: SignificanceTest,
    a: &[(u64, f64)],
    b: &[(u64, f64)],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    match test {
        SignificanceTest::Permutation => permutation_test(a, b, resamples, seed),
        SignificanceTest::PairedT => paired_t_test(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|b| *b == 1).collect()
    }

    #[test]
    fn ap_examples() {
        let mut top = l(&[1, 1]);
        top.extend(std::iter::repeat_n(false, 18));
        assert_eq!(average_precision(&top).unwrap(), 1.0);
        assert!((average_precision(&l(&[1, 0, 1])).unwrap() - 0.833_333_333_333_333_4).abs() < 1e-15);
        assert!(average_precision(&l(&[0, 0])).is_err());
    }

    #[test]
    fn mrr_and_precision_examples() {
        let res: Vec<QueryResult> = (0..4)
            .map(|q| QueryResult {
                query_id: q,
                labels: l(&[0, 1, 0, 1]),
            })
            .collect();
        assert_eq!(mrr(&res).unwrap(), 50.0);
        let one = [QueryResult {
            query_id: 0,
            labels: l(&[1, 0, 1, 0, 0, 0, 0, 1]),
        }];
        assert_eq!(p_at_n(&one, 5).unwrap(), 40.0);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn single_query_map_is_ap() {
        let labels = l(&[0, 1, 1, 0, 1]);
        let res = [QueryResult {
            query_id: 3,
            labels: labels.clone(),
        }];
        assert_eq!(map(&res).unwrap(), 100.0 * average_precision(&labels).unwrap());
        assert_eq!(mrr(&res).unwrap(), 50.0);
    }

    #[test]
    fn identical_systems_have_p_one() {
        let a: Vec<(u64, f64)> = (0..30).map(|i| (i, (i as f64 * 0.37).sin())).collect();
        assert_eq!(permutation_test(&a, &a, 1000, 1).unwrap(), 1.0);
        assert_eq!(paired_t_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn large_shift_is_significant() {
        let b: Vec<(u64, f64)> = (0..40).map(|i| (i, (i as f64 * 0.37).sin() * 0.1)).collect();
        let a: Vec<(u64, f64)> = b.iter().map(|(q, s)| (*q, s + 5.0)).collect();
        let p = permutation_test(&a, &b, 2000, 3).unwrap();
        assert!(p <= 2.0 / 2000.0, "{p}");
        assert!(paired_t_test(&a, &b).unwrap() < 1e-10);
    }

    #[test]
    fn three_queries_match_exhaustive_enumeration() {
        let a = [(1, 0.9), (2, 0.4), (3, 0.7)];
        let b = [(1, 0.5), (2, 0.6), (3, 0.1)];
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.1 - y.1).collect();
        let obs = d.iter().sum::<f64>().abs();
        let mut hits = 0;
        for s0 in [-1.0, 1.0] {
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    let v: f64 = s0 * d[0] + s1 * d[1] + s2 * d[2];
                    if v.abs() >= obs - 1e-12 {
                        hits += 1;
                    }
                }
            }
        }
        let p = permutation_test(&a, &b, 1000, 0).unwrap();
        assert_eq!(p, hits as f64 / 8.0);
    }

    #[test]
    fn unpaired_inputs_rejected() {
        let a = [(1, 0.9), (2, 0.4)];
        let b = [(1, 0.5), (3, 0.6)];
        assert!(permutation_test(&a, &b, 1000, 0).is_err());
        assert!(permutation_test(&a, &a[..1], 1000, 0).is_err());
        assert!(permutation_test(&a, &a, 10, 0).is_err());
    }
}
