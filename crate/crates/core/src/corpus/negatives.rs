use std::collections::{BTreeSet, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws `k` distinct ids uniformly without replacement from `pool`,
/// excluding `query` and its known positives.
///
/// The epoch is folded into the seed, so every epoch sees a fresh sample
/// while a fixed (seed, epoch) pair always reproduces the same one.
pub fn sample_negatives(
    query: u64,
    pool: &[u64],
    known_positives: Option<&BTreeSet<u64>>,
    k: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<u64>> {
    let excluded = |id: u64| id == query || known_positives.is_some_and(|p| p.contains(&id));
    let blocked = pool.iter().filter(|&&id| excluded(id)).count();
    let usable = pool.len() - blocked;
    if usable < k {
        return Err(Error::Data(format!(
            "corpus too small: {usable} usable negatives for query {query}, need {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));

    // Rejection sampling keeps this O(k) on large corpora.
    if usable >= 4 * k && usable * 2 >= pool.len() {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let id = pool[rng.gen_range(0..pool.len())];
            if !excluded(id) && seen.insert(id) {
                out.push(id);
            }
        }
        return Ok(out);
    }
    let candidates: Vec<u64> = pool.iter().copied().filter(|&id| !excluded(id)).collect();
    Ok(index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_seed_is_reproducible() {
        let pool: Vec<u64> = (0..500).collect();
        let a = sample_negatives(3, &pool, None, 20, 7, 0).unwrap();
        let b = sample_negatives(3, &pool, None, 20, 7, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn exactly_k_usable_returns_all() {
        let pool: Vec<u64> = (0..21).collect();
        let mut got = sample_negatives(0, &pool, None, 20, 1, 0).unwrap();
        got.sort();
        assert_eq!(got, (1..21).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_is_an_error() {
        let pool: Vec<u64> = (0..20).collect();
        assert!(sample_negatives(0, &pool, None, 20, 1, 0).is_err());
    }

    #[test]
    fn epochs_draw_different_samples() {
        // enumerate the seed stream over a few epochs: all samples differ
        let pool: Vec<u64> = (0..1000).collect();
        let samples: Vec<Vec<u64>> = (0..5)
            .map(|e| sample_negatives(1, &pool, None, 20, 42, e).unwrap())
            .collect();
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                assert_ne!(samples[i], samples[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn never_returns_query_or_positives(
            n in 25usize..400,
            query in 0u64..25,
            positives in prop::collection::btree_set(0u64..400, 0..5),
            seed in any::<u64>(),
            epoch in 0u64..10,
        ) {
            let pool: Vec<u64> = (0..n as u64).collect();
            let k = 20;
            match sample_negatives(query, &pool, Some(&positives), k, seed, epoch) {
                Ok(neg) => {
                    prop_assert_eq!(neg.len(), k);
                    let uniq: BTreeSet<u64> = neg.iter().copied().collect();
                    prop_assert_eq!(uniq.len(), k);
                    for id in neg {
                        prop_assert!(id != query && !positives.contains(&id));
                        prop_assert!((id as usize) < n);
                    }
                }
                Err(_) => {
                    let usable = pool.iter().filter(|&&i| i != query && !positives.contains(&i)).count();
                    prop_assert!(usable < k);
                }
            }
        }
    }
}
