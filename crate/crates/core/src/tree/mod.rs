//! Octree metadata: Morton keys, leaf partitioning across ranks, post-order
//! local subtrees and plural-node sample ownership.

mod morton;
mod partition;
mod plural;
mod subtree;

pub use morton::{compute_num_levels, morton_key, MortonKey, TreeConfig, MAX_LEVEL};
pub use partition::{partition_leaves, Partition};
pub use plural::{
    assign_sample_slices, identify_plural_nodes, local_overlap, node_rank_spans, AlignmentPolicy,
    PluralInfo, PluralNode, SliceEntry, SliceMap,
};
pub use subtree::{build_local_subtree, IndexEntry, LocalSubtree, NodeRecord};

use serde::{Deserialize, Serialize};

/// Per-rank leaf range in a tree dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLeafRange {
    pub rank: usize,
    pub first: MortonKey,
    pub last: MortonKey,
    pub leaves: usize,
    pub weight: u64,
}

/// JSON tree dump used for fixtures and debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub config: TreeConfig,
    pub ranks: Vec<RankLeafRange>,
    pub plural: Vec<PluralInfo>,
}

impl TreeDump {
    pub fn rank_ranges(partition: &Partition) -> Vec<RankLeafRange> {
        partition
            .rank_ranges
            .iter()
            .enumerate()
            .map(|(rank, r)| RankLeafRange {
                rank,
                first: partition.leaf_keys[r.start],
                last: partition.leaf_keys[r.end - 1],
                leaves: r.len(),
                weight: partition.rank_weight(rank),
            })
            .collect()
    }
}
