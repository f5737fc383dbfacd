use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tree::MortonKey;

/// Near and far lists of every node, by index into each level's sorted key
/// list. `near[l-1][i]` includes the node itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLists {
    pub near: Vec<Vec<Vec<u32>>>,
    pub far: Vec<Vec<Vec<u32>>>,
}

impl InteractionLists {
    pub fn near_of(&self, level: u32, node: usize) -> &[u32] {
        &self.near[level as usize - 1][node]
    }

    pub fn far_of(&self, level: u32, node: usize) -> &[u32] {
        &self.far[level as usize - 1][node]
    }

    /// Largest far-list length at `level`.
    pub fn max_far(&self, level: u32) -> usize {
        self.far[level as usize - 1].iter().map(|f| f.len()).max().unwrap_or(0)
    }
}

fn neighbours(key: &MortonKey, index: &HashMap<u64, usize>) -> Vec<u32> {
    let idx = key.indices();
    let cells = 1i64 << (key.level - 1);
    let mut out = Vec::with_capacity(27);
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let c = [idx[0] as i64 + dx, idx[1] as i64 + dy, idx[2] as i64 + dz];
                if c.iter().any(|&v| v < 0 || v >= cells) {
                    continue;
                }
                let k = MortonKey::from_indices(key.level, [c[0] as u64, c[1] as u64, c[2] as u64]);
                if let Some(&i) = index.get(&k.code) {
                    out.push(i as u32);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Lists over the nonempty nodes `levels[l-1]` (each sorted in Morton order).
/// Two same-level boxes are near when they share a face, edge or vertex; a
/// box is in another's far list when it is not near it but their parents
/// are near.
pub fn build_interaction_lists(levels: &[Vec<MortonKey>]) -> InteractionLists {
    let indexes: Vec<HashMap<u64, usize>> = levels
        .iter()
        .map(|keys| keys.iter().enumerate().map(|(i, k)| (k.code, i)).collect())
        .collect();
    let near: Vec<Vec<Vec<u32>>> = levels
        .iter()
        .zip(&indexes)
        .map(|(keys, index)| keys.iter().map(|k| neighbours(k, index)).collect())
        .collect();
    let mut far = Vec::with_capacity(levels.len());
    for (li, keys) in levels.iter().enumerate() {
        if li < 2 {
            far.push(vec![Vec::new(); keys.len()]);
            continue;
        }
        let parent_index = &indexes[li - 1];
        let parent_keys = &levels[li - 1];
        let lists = keys
            .iter()
            .map(|k| {
                let p = parent_index[&k.parent().unwrap().code];
                let mut out = Vec::new();
                for &pn in &near[li - 1][p] {
                    for c in parent_keys[pn as usize].children() {
                        if let Some(&ci) = indexes[li].get(&c.code) {
                            if !c.is_adjacent(k) {
                                out.push(ci as u32);
                            }
                        }
                    }
                }
                out.sort_unstable();
                out
            })
            .collect();
        far.push(lists);
    }
    InteractionLists { near, far }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_levels(depth: u32, planar: bool) -> Vec<Vec<MortonKey>> {
        (1..=depth)
            .map(|l| {
                let n = 1u64 << (l - 1);
                let mut keys = Vec::new();
                for z in 0..if planar { 1 } else { n } {
                    for y in 0..n {
                        for x in 0..n {
                            keys.push(MortonKey::from_indices(l, [x, y, z]));
                        }
                    }
                }
                keys.sort();
                keys
            })
            .collect()
    }

    fn interior(level: u32, planar: bool) -> MortonKey {
        let mid = (1u64 << (level - 1)) / 2;
        MortonKey::from_indices(level, [mid, mid, if planar { 0 } else { mid }])
    }

    #[test]
    fn interior_far_list_sizes() {
        for (planar, expect) in [(true, 27), (false, 189)] {
            let levels = full_levels(5, planar);
            let lists = build_interaction_lists(&levels);
            let key = interior(5, planar);
            let i = levels[4].binary_search(&key).unwrap();
            assert_eq!(lists.far_of(5, i).len(), expect);
            assert_eq!(lists.max_far(5), expect);
        }
    }

    #[test]
    fn level_two_has_no_far_field() {
        let levels = full_levels(4, false);
        let lists = build_interaction_lists(&levels);
        assert!(lists.far[1].iter().all(|f| f.is_empty()));
        assert!(lists.near[1].iter().all(|n| n.len() == 8));
    }

    #[test]
    fn far_definition_holds() {
        let levels = full_levels(4, false);
        let lists = build_interaction_lists(&levels);
        for (i, k) in levels[3].iter().enumerate() {
            for (j, s) in levels[3].iter().enumerate() {
                let expect = !k.is_adjacent(s) && k.parent().unwrap().is_adjacent(&s.parent().unwrap());
                assert_eq!(lists.far_of(4, i).contains(&(j as u32)), expect);
            }
        }
    }
}
