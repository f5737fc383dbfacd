use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use super::{MortonKey, TreeConfig};
use crate::error::{Error, Result};
use crate::kernel::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub key: MortonKey,
    pub center: Vec3,
    /// Positions of locally stored children in the post-order array.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub position: usize,
    /// Flattened sample range this rank stores for the node, once assigned.
    pub slice: Option<Range<usize>>,
}

/// A rank's leaves plus all their ancestors, stored in post-order.
#[derive(Debug, Clone)]
pub struct LocalSubtree {
    pub nodes: Vec<NodeRecord>,
    pub indexer: HashMap<MortonKey, IndexEntry>,
}

impl LocalSubtree {
    pub fn get(&self, key: &MortonKey) -> Option<&NodeRecord> {
        self.indexer.get(key).map(|e| &self.nodes[e.position])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_slice(&mut self, key: &MortonKey, slice: Range<usize>) -> bool {
        match self.indexer.get_mut(key) {
            Some(entry) => {
                entry.slice = Some(slice);
                true
            }
            None => false,
        }
    }
}

/// Builds the post-order local subtree over `owned_leaves`, which must be
/// same-level keys in strictly increasing Morton order.
pub fn build_local_subtree(owned_leaves: &[MortonKey], config: &TreeConfig) -> Result<LocalSubtree> {
    let Some(first) = owned_leaves.first() else {
        return Err(Error::InvalidInput("empty leaf set".into()));
    };
    for w in owned_leaves.windows(2) {
        if w[1].level != first.level || w[1].code <= w[0].code {
            return Err(Error::NonContiguous(format!(
                "{:?} does not follow {:?}",
                w[1], w[0]
            )));
        }
    }
    let mut keys = BTreeSet::new();
    for leaf in owned_leaves {
        let mut k = *leaf;
        loop {
            if !keys.insert(k) {
                break;
            }
            match k.parent() {
                Some(p) => k = p,
                None => break,
            }
        }
    }
    let mut ordered: Vec<MortonKey> = keys.into_iter().collect();
    ordered.sort_by(|a, b| a.postorder_cmp(b));

    let indexer: HashMap<MortonKey, IndexEntry> = ordered
        .iter()
        .enumerate()
        .map(|(position, k)| {
            (
                *k,
                IndexEntry {
                    position,
                    slice: None,
                },
            )
        })
        .collect();
    let nodes = ordered
        .iter()
        .map(|k| NodeRecord {
            key: *k,
            center: config.center(k),
            children: k
                .children()
                .iter()
                .filter_map(|c| indexer.get(c).map(|e| e.position))
                .collect(),
        })
        .collect();
    Ok(LocalSubtree { nodes, indexer })
}
