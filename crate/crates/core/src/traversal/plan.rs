use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::lists::InteractionLists;
use super::setup::{LevelData, FIRST_EXPANSION_LEVEL};
use crate::spmd::BYTES_PER_SAMPLE;

/// Rows `rows` of source node `source` (index into its level's node list).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub level: u32,
    pub source: usize,
    pub rows: Range<usize>,
    pub n_phi: usize,
}

impl PlanEntry {
    pub fn samples(&self) -> usize {
        self.rows.len() * self.n_phi
    }
}

/// Precomputed M2L traffic: for each `(sender, receiver)`, the ordered
/// multipole pieces the receiver's observers need from the sender. All
/// levels travel in one stream per pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommPlan {
    pub streams: BTreeMap<(usize, usize), Vec<PlanEntry>>,
}

impl CommPlan {
    pub fn samples(&self, from: usize, to: usize) -> usize {
        self.streams
            .get(&(from, to))
            .map(|s| s.iter().map(|e| e.samples()).sum())
            .unwrap_or(0)
    }

    pub fn bytes(&self, from: usize, to: usize) -> u64 {
        self.samples(from, to) as u64 * BYTES_PER_SAMPLE
    }

    pub fn total_bytes(&self) -> u64 {
        self.streams.keys().map(|&(a, q)| self.bytes(a, q)).sum()
    }

    /// Bytes each destination receives in total.
    pub fn bytes_by_destination(&self) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for &(a, q) in self.streams.keys() {
            *out.entry(q).or_insert(0) += self.bytes(a, q);
        }
        out
    }

    pub fn outgoing(&self, rank: usize) -> impl Iterator<Item = (usize, &Vec<PlanEntry>)> {
        self.streams
            .iter()
            .filter(move |((a, _), _)| *a == rank)
            .map(|((_, q), s)| (*q, s))
    }

    pub fn incoming(&self, rank: usize) -> impl Iterator<Item = (usize, &Vec<PlanEntry>)> {
        self.streams
            .iter()
            .filter(move |((_, q), _)| *q == rank)
            .map(|((a, _), s)| (*a, s))
    }

    /// Messages a stream of `samples` splits into under a buffer cap.
    pub fn message_count(samples: usize, buffer_bytes: u64) -> usize {
        samples.div_ceil(chunk_samples(buffer_bytes))
    }
}

/// Samples per message under a buffer of `buffer_bytes` (at least one).
pub fn chunk_samples(buffer_bytes: u64) -> usize {
    (buffer_bytes / BYTES_PER_SAMPLE).clamp(1, usize::MAX as u64) as usize
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    a.start.max(b.start)..a.end.min(b.end).max(a.start.max(b.start))
}

fn merge(mut ranges: Vec<Range<usize>>) -> Vec<Range<usize>> {
    ranges.sort_by_key(|r| r.start);
    let mut out: Vec<Range<usize>> = Vec::new();
    for r in ranges {
        match out.last_mut() {
            Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
            _ => out.push(r),
        }
    }
    out
}

/// For every far pair, the rows both the source-slice owner and a different
/// observer-slice owner hold; each (source, rows) piece appears once per
/// destination however many of its observers use it.
pub fn build_m2l_comm_plan(levels: &[LevelData], lists: &InteractionLists) -> CommPlan {
    let mut need: BTreeMap<(usize, usize), BTreeMap<(u32, usize), Vec<Range<usize>>>> = BTreeMap::new();
    for data in levels.iter().filter(|l| l.level >= FIRST_EXPANSION_LEVEL) {
        for (oi, obs) in data.nodes.iter().enumerate() {
            let far = lists.far_of(data.level, oi);
            if far.is_empty() {
                continue;
            }
            for (q, q_rows) in obs.map().row_bounds() {
                if q_rows.is_empty() {
                    continue;
                }
                for &si in far {
                    let src = &data.nodes[si as usize];
                    for (a, a_rows) in src.map().row_bounds() {
                        if a == q {
                            continue;
                        }
                        let both = intersect(&a_rows, &q_rows);
                        if !both.is_empty() {
                            need.entry((a, q))
                                .or_default()
                                .entry((data.level, si as usize))
                                .or_default()
                                .push(both);
                        }
                    }
                }
            }
        }
    }
    let streams = need
        .into_iter()
        .map(|(pair, pieces)| {
            let entries = pieces
                .into_iter()
                .flat_map(|((level, source), ranges)| {
                    let n_phi = levels[level as usize - 1].dims().1;
                    merge(ranges).into_iter().map(move |rows| PlanEntry {
                        level,
                        source,
                        rows,
                        n_phi,
                    })
                })
                .collect();
            (pair, entries)
        })
        .collect();
    CommPlan { streams }
}
