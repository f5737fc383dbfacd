use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::MortonKey;
use crate::error::{Error, Result};

/// Leaf assignment to ranks: rank `r` owns the sorted leaves
/// `leaf_keys[rank_ranges[r]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub leaf_keys: Vec<MortonKey>,
    pub weights: Vec<u64>,
    /// First leaf key of ranks `1..N_p`.
    pub splitters: Vec<MortonKey>,
    pub rank_ranges: Vec<Range<usize>>,
}

impl Partition {
    pub fn num_ranks(&self) -> usize {
        self.rank_ranges.len()
    }

    pub fn rank_weight(&self, rank: usize) -> u64 {
        self.weights[self.rank_ranges[rank].clone()].iter().sum()
    }

    /// Rank owning the leaf at sorted position `leaf_index`.
    pub fn owner_of_index(&self, leaf_index: usize) -> usize {
        self.rank_ranges
            .partition_point(|r| r.end <= leaf_index)
    }

    pub fn owner_of(&self, key: &MortonKey) -> Option<usize> {
        self.leaf_keys
            .binary_search(key)
            .ok()
            .map(|i| self.owner_of_index(i))
    }

    pub fn owned_leaves(&self, rank: usize) -> &[MortonKey] {
        &self.leaf_keys[self.rank_ranges[rank].clone()]
    }
}

/// Splits weighted leaves into `n_ranks` Morton-contiguous segments by a
/// greedy prefix-weight scan; each splitter sits at the leaf boundary whose
/// prefix weight is nearest the ideal `r·W/N_p` (lower boundary on ties).
pub fn partition_leaves(leaves: &[(MortonKey, u64)], n_ranks: usize) -> Result<Partition> {
    if n_ranks == 0 {
        return Err(Error::InvalidInput("need at least one rank".into()));
    }
    let mut sorted: Vec<(MortonKey, u64)> = leaves.iter().copied().filter(|(_, w)| *w > 0).collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidInput("duplicate leaf key".into()));
    }
    if let Some((first, _)) = sorted.first() {
        if sorted.iter().any(|(k, _)| k.level != first.level) {
            return Err(Error::InvalidInput("leaf keys on different levels".into()));
        }
    }
    let n = sorted.len();
    if n == 0 {
        return Err(Error::InvalidInput("no nonempty leaves".into()));
    }
    if n_ranks > n {
        return Err(Error::TooManyRanks {
            leaves: n,
            ranks: n_ranks,
        });
    }

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for (_, w) in &sorted {
        prefix.push(prefix.last().unwrap() + w);
    }
    let total = prefix[n] as u128;

    let mut bounds = Vec::with_capacity(n_ranks + 1);
    bounds.push(0usize);
    for r in 1..n_ranks {
        let prev = *bounds.last().unwrap();
        // leave at least one leaf for this and every later rank
        let lo = prev + 1;
        let hi = n - (n_ranks - r);
        // target·N_p = r·W, compared exactly in integers
        let target = r as u128 * total;
        let scaled = |i: usize| prefix[i] as u128 * n_ranks as u128;
        let first_ge = lo + prefix[lo..=hi].partition_point(|&p| (p as u128 * n_ranks as u128) < target);
        let mut best = first_ge.min(hi);
        if best > lo {
            let below = best - 1;
            let d_below = target - scaled(below).min(target);
            let d_best = scaled(best).abs_diff(target);
            if d_below <= d_best {
                best = below;
            }
        }
        bounds.push(best);
    }
    bounds.push(n);

    let rank_ranges: Vec<Range<usize>> = bounds.windows(2).map(|w| w[0]..w[1]).collect();
    let splitters = bounds[1..n_ranks].iter().map(|&b| sorted[b].0).collect();
    let (leaf_keys, weights) = sorted.into_iter().unzip();
    Ok(Partition {
        leaf_keys,
        weights,
        splitters,
        rank_ranges,
    })
}
