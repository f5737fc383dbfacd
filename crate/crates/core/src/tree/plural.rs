use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{MortonKey, Partition};
use crate::error::{Error, Result};

/// A node whose leaf descendants span more than one rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluralNode {
    pub key: MortonKey,
    /// Ascending; contiguous because rank ranges are Morton-contiguous.
    pub users: Vec<usize>,
    /// Right-most sharing rank.
    pub resident: usize,
}

/// A plural node together with the way its samples are sliced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluralInfo {
    pub key: MortonKey,
    pub resident: usize,
    pub users: Vec<usize>,
    pub slice_map: SliceMap,
}

/// Ranks sharing each node, as `(first, last)` rank, for every ancestor level
/// of the partitioned leaves. Index `[level - 1]` holds that level's runs in
/// Morton order.
pub fn node_rank_spans(partition: &Partition) -> Vec<Vec<(MortonKey, usize, usize)>> {
    let Some(first) = partition.leaf_keys.first() else {
        return Vec::new();
    };
    let depth = first.level;
    let owners: Vec<usize> = (0..partition.leaf_keys.len())
        .map(|i| partition.owner_of_index(i))
        .collect();
    (1..=depth)
        .map(|level| {
            let mut runs: Vec<(MortonKey, usize, usize)> = Vec::new();
            for (leaf, &owner) in partition.leaf_keys.iter().zip(&owners) {
                let key = leaf.ancestor(level);
                match runs.last_mut() {
                    Some(run) if run.0 == key => run.2 = owner,
                    _ => runs.push((key, owner, owner)),
                }
            }
            runs
        })
        .collect()
}

/// Plural nodes visible to each rank.
pub fn identify_plural_nodes(partition: &Partition) -> Vec<Vec<PluralNode>> {
    let mut per_rank = vec![Vec::new(); partition.num_ranks()];
    for level in node_rank_spans(partition) {
        for (key, lo, hi) in level {
            if lo == hi {
                continue;
            }
            let node = PluralNode {
                key,
                users: (lo..=hi).collect(),
                resident: hi,
            };
            for r in lo..=hi {
                per_rank[r].push(node.clone());
            }
        }
    }
    per_rank
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentPolicy {
    RankOrdered,
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub rank: usize,
    pub begin: usize,
    pub end: usize,
}

/// Ownership of a node's flattened samples. Samples are stored θ-row major
/// (`index = t·n_phi + p`); slices always consist of whole θ-rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMap {
    pub n_theta: usize,
    pub n_phi: usize,
    pub entries: Vec<SliceEntry>,
}

impl SliceMap {
    pub fn single(rank: usize, n_theta: usize, n_phi: usize) -> Self {
        Self::from_rows(n_theta, n_phi, &[(rank, n_theta)])
    }

    /// Consecutive row blocks `(rank, rows)` in sample order.
    pub fn from_rows(n_theta: usize, n_phi: usize, blocks: &[(usize, usize)]) -> Self {
        let mut row = 0;
        let entries = blocks
            .iter()
            .map(|&(rank, rows)| {
                let e = SliceEntry {
                    rank,
                    begin: row * n_phi,
                    end: (row + rows) * n_phi,
                };
                row += rows;
                e
            })
            .collect();
        Self {
            n_theta,
            n_phi,
            entries,
        }
    }

    pub fn total(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn ranks(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.rank)
    }

    pub fn samples_of(&self, rank: usize) -> Option<Range<usize>> {
        self.entries
            .iter()
            .find(|e| e.rank == rank)
            .map(|e| e.begin..e.end)
    }

    pub fn rows_of(&self, rank: usize) -> Option<Range<usize>> {
        self.samples_of(rank)
            .map(|r| r.start / self.n_phi..r.end / self.n_phi)
    }

    pub fn row_bounds(&self) -> Vec<(usize, Range<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.rank, e.begin / self.n_phi..e.end / self.n_phi))
            .collect()
    }

    /// True when the ranges tile `[0, total)` with no gap or overlap and every
    /// boundary falls on a row.
    pub fn is_exact_cover(&self) -> bool {
        let mut at = 0;
        for e in &self.entries {
            if e.begin != at || e.end < e.begin || e.begin % self.n_phi != 0 || e.end % self.n_phi != 0 {
                return false;
            }
            at = e.end;
        }
        at == self.total()
            && {
                let mut ranks: Vec<usize> = self.ranks().collect();
                ranks.sort_unstable();
                ranks.windows(2).all(|w| w[0] != w[1])
            }
    }

    /// The same ownership mapped onto a grid of `n_theta × n_phi` by scaling
    /// every row boundary proportionally.
    pub fn image(&self, n_theta: usize, n_phi: usize) -> SliceMap {
        let scale = |row: usize| (2 * row * n_theta + self.n_theta) / (2 * self.n_theta);
        let mut blocks = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let lo = scale(e.begin / self.n_phi);
            let hi = scale(e.end / self.n_phi);
            blocks.push((e.rank, hi - lo));
        }
        SliceMap::from_rows(n_theta, n_phi, &blocks)
    }
}

/// Slices a plural node of `n_theta × n_phi` samples among `users`.
///
/// `RankOrdered` hands out equal row blocks by ascending rank (remainder to
/// the lowest ranks). `Aligned` orders ranks by the lowest child sample they
/// own, then by fewer owned child samples, then by rank, and sizes each block
/// proportionally to the child samples the rank owns.
pub fn assign_sample_slices(
    n_theta: usize,
    n_phi: usize,
    users: &[usize],
    child_slices: &[SliceMap],
    policy: AlignmentPolicy,
) -> Result<SliceMap> {
    if users.is_empty() {
        return Err(Error::InvalidInput("plural node without users".into()));
    }
    let mut order: Vec<usize> = users.to_vec();
    order.sort_unstable();
    order.dedup();

    let blocks: Vec<(usize, usize)> = match policy {
        AlignmentPolicy::RankOrdered => equal_blocks(&order, n_theta),
        AlignmentPolicy::Aligned => {
            // (rank, lowest owned position as row/rows, owned samples)
            let stats: Vec<(usize, Option<(usize, usize)>, usize)> = order
                .iter()
                .map(|&rank| {
                    let mut lowest: Option<(usize, usize)> = None;
                    let mut owned = 0usize;
                    for child in child_slices {
                        if let Some(rows) = child.rows_of(rank) {
                            if rows.is_empty() {
                                continue;
                            }
                            owned += rows.len() * child.n_phi;
                            let pos = (rows.start, child.n_theta);
                            lowest = Some(match lowest {
                                Some(cur) if frac_cmp(cur, pos) != Ordering::Greater => cur,
                                _ => pos,
                            });
                        }
                    }
                    (rank, lowest, owned)
                })
                .collect();
            let mut sorted = stats.clone();
            sorted.sort_by(|a, b| {
                let low = match (a.1, b.1) {
                    (Some(x), Some(y)) => frac_cmp(x, y),
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => Ordering::Equal,
                };
                low.then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0))
            });
            let total: usize = sorted.iter().map(|s| s.2).sum();
            let ranks: Vec<usize> = sorted.iter().map(|s| s.0).collect();
            if total == 0 {
                equal_blocks(&ranks, n_theta)
            } else {
                let mut sizes: Vec<usize> = sorted
                    .iter()
                    .map(|s| (s.2 as u128 * n_theta as u128 / total as u128) as usize)
                    .collect();
                let mut left = n_theta - sizes.iter().sum::<usize>();
                for s in sizes.iter_mut() {
                    if left == 0 {
                        break;
                    }
                    *s += 1;
                    left -= 1;
                }
                ranks.into_iter().zip(sizes).collect()
            }
        }
    };
    Ok(SliceMap::from_rows(n_theta, n_phi, &blocks))
}

fn equal_blocks(order: &[usize], rows: usize) -> Vec<(usize, usize)> {
    let n = order.len();
    order
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, rows / n + usize::from(i < rows % n)))
        .collect()
}

fn frac_cmp(a: (usize, usize), b: (usize, usize)) -> Ordering {
    (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128))
}

/// Samples of the child layouts (already imaged to the parent grid) that land
/// on the same rank in the parent layout.
pub fn local_overlap(parent: &SliceMap, imaged_children: &[SliceMap]) -> usize {
    let mut total = 0;
    for child in imaged_children {
        for e in &child.entries {
            if let Some(p) = parent.samples_of(e.rank) {
                total += p.end.min(e.end).saturating_sub(p.start.max(e.begin));
            }
        }
    }
    total
}
