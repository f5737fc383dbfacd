use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use super::lists::{build_interaction_lists, InteractionLists};
use super::plan::{build_m2l_comm_plan, CommPlan};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::kernel::{Particle, Vec3, Wavenumber};
use crate::operators::QuadratureRule;
use crate::sphere::{truncation_order, LevelSampling};
use crate::tree::{
    assign_sample_slices, morton_key, node_rank_spans, partition_leaves, MortonKey, Partition, PluralInfo, SliceMap, TreeConfig, TreeDump,
};

/// First level carrying expansions; levels 1 and 2 have empty far lists.
pub const FIRST_EXPANSION_LEVEL: u32 = 3;

#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub key: MortonKey,
    pub center: Vec3,
    /// Positions of the node's leaves in the partition's sorted leaf list.
    pub leaves: Range<usize>,
    pub first_rank: usize,
    pub last_rank: usize,
    /// Sample ownership; present on expansion levels only.
    pub map: Option<SliceMap>,
    /// Indices into the next level's node list, Morton order.
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

impl NodeInfo {
    pub fn is_plural(&self) -> bool {
        self.first_rank != self.last_rank
    }

    pub fn has_user(&self, rank: usize) -> bool {
        (self.first_rank..=self.last_rank).contains(&rank)
    }

    pub fn users(&self) -> Range<usize> {
        self.first_rank..self.last_rank + 1
    }

    pub fn map(&self) -> &SliceMap {
        self.map.as_ref().expect("node below the first expansion level has no slice map")
    }

    /// Rows of this node's samples held by `rank`.
    pub fn rows_of(&self, rank: usize) -> Range<usize> {
        self.map().rows_of(rank).unwrap_or(0..0)
    }
}

#[derive(Debug, Clone)]
pub struct LevelData {
    pub level: u32,
    pub side: f64,
    pub sampling: Option<LevelSampling>,
    pub quadrature: Option<QuadratureRule>,
    pub nodes: Vec<NodeInfo>,
    pub index: HashMap<u64, usize>,
}

impl LevelData {
    pub fn dims(&self) -> (usize, usize) {
        self.sampling.expect("level without expansions").dims()
    }

    pub fn find(&self, key: &MortonKey) -> Option<usize> {
        self.index.get(&key.code).copied()
    }
}

/// Global, immutable run description shared by every rank.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub k: Wavenumber,
    pub tree: TreeConfig,
    pub partition: Partition,
    pub particles: Vec<Particle>,
    /// Particle indices grouped by leaf (leaf order), ascending within a leaf.
    pub order: Vec<usize>,
    /// `order` range of each leaf.
    pub leaf_particles: Vec<Range<usize>>,
    pub levels: Vec<LevelData>,
    pub lists: InteractionLists,
    pub plan: CommPlan,
    /// Leaves each rank must ship to each other rank for the near field.
    pub ghosts: BTreeMap<(usize, usize), Vec<usize>>,
}

impl Setup {
    pub fn num_levels(&self) -> u32 {
        self.tree.levels
    }

    pub fn level(&self, level: u32) -> &LevelData {
        &self.levels[level as usize - 1]
    }

    pub fn leaf_level(&self) -> &LevelData {
        self.level(self.tree.levels)
    }

    pub fn has_far_field(&self) -> bool {
        self.tree.levels >= FIRST_EXPANSION_LEVEL
    }

    pub fn expansion_levels(&self) -> std::ops::RangeInclusive<u32> {
        FIRST_EXPANSION_LEVEL..=self.tree.levels
    }

    pub fn owned_leaves(&self, rank: usize) -> Range<usize> {
        self.partition.rank_ranges[rank].clone()
    }

    pub fn leaf_owner(&self, leaf: usize) -> usize {
        self.partition.owner_of_index(leaf)
    }

    pub fn particles_of_leaf(&self, leaf: usize) -> impl Iterator<Item = usize> + '_ {
        self.order[self.leaf_particles[leaf].clone()].iter().copied()
    }

    pub fn n_ranks(&self) -> usize {
        self.partition.num_ranks()
    }

    /// Partition and plural-node slicing in dump form.
    pub fn tree_dump(&self) -> TreeDump {
        TreeDump {
            config: self.tree,
            ranks: TreeDump::rank_ranges(&self.partition),
            plural: self
                .plural_nodes()
                .filter(|n| n.map.is_some())
                .map(|n| PluralInfo {
                    key: n.key,
                    resident: n.last_rank,
                    users: n.users().collect(),
                    slice_map: n.map().clone(),
                })
                .collect(),
        }
    }

    /// All plural nodes with their slice maps, coarsest level first.
    pub fn plural_nodes(&self) -> impl Iterator<Item = &NodeInfo> {
        self.levels.iter().flat_map(|l| l.nodes.iter().filter(|n| n.is_plural()))
    }
}

/// Builds the tree, partition, sampling, slice maps, lists and plans.
pub fn build_setup(particles: &[Particle], config: &RunConfig) -> Result<Setup> {
    config.validate()?;
    let k = Wavenumber::from_wavelength(config.wavelength)?;
    let leaf = config.leaf_diameter * config.wavelength;
    let tree = TreeConfig::for_particles(particles, leaf, config.dim_class)?;
    let depth = tree.levels;

    let mut keyed: Vec<(MortonKey, usize)> = particles
        .iter()
        .enumerate()
        .map(|(i, p)| morton_key(p.position, &tree, depth).map(|k| (k, i)))
        .collect::<Result<_>>()?;
    keyed.sort();
    let mut leaf_keys: Vec<(MortonKey, u64)> = Vec::new();
    let mut leaf_particles: Vec<Range<usize>> = Vec::new();
    for (i, (key, _)) in keyed.iter().enumerate() {
        match leaf_keys.last_mut() {
            Some(last) if last.0 == *key => {
                last.1 += 1;
                leaf_particles.last_mut().unwrap().end = i + 1;
            }
            _ => {
                leaf_keys.push((*key, 1));
                leaf_particles.push(i..i + 1);
            }
        }
    }
    if config.one_particle_per_leaf {
        if let Some((key, w)) = leaf_keys.iter().find(|(_, w)| *w > 1) {
            return Err(Error::InvalidInput(format!(
                "leaf {key:?} holds {w} particles but one particle per leaf was requested"
            )));
        }
    }
    let order: Vec<usize> = keyed.iter().map(|(_, i)| *i).collect();
    let partition = partition_leaves(&leaf_keys, config.n_ranks)?;

    let spans = node_rank_spans(&partition);
    let mut levels: Vec<LevelData> = Vec::with_capacity(depth as usize);
    let mut leaf_cursor = vec![0usize; depth as usize];
    for (li, runs) in spans.iter().enumerate() {
        let level = li as u32 + 1;
        let side = tree.box_side(level);
        let sampling = if level >= FIRST_EXPANSION_LEVEL {
            Some(LevelSampling::new(level, truncation_order(3f64.sqrt() * side, k, config.digits)?))
        } else {
            None
        };
        let quadrature = sampling.map(|s| QuadratureRule::fejer(s.n_theta, s.n_phi));
        let shift = 3 * (depth - level);
        let mut nodes = Vec::with_capacity(runs.len());
        for (key, lo, hi) in runs {
            // leaves under `key` form a contiguous run of the sorted leaf list
            let start = leaf_cursor[li];
            let mut end = start;
            while end < partition.leaf_keys.len() && partition.leaf_keys[end].code >> shift == key.code {
                end += 1;
            }
            leaf_cursor[li] = end;
            nodes.push(NodeInfo {
                key: *key,
                center: tree.center(key),
                leaves: start..end,
                first_rank: *lo,
                last_rank: *hi,
                map: None,
                children: Vec::new(),
                parent: None,
            });
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.key.code, i)).collect();
        levels.push(LevelData {
            level,
            side,
            sampling,
            quadrature,
            nodes,
            index,
        });
    }
    for li in 1..levels.len() {
        let (upper, lower) = levels.split_at_mut(li);
        let parents = &mut upper[li - 1];
        for (ci, child) in lower[0].nodes.iter_mut().enumerate() {
            let p = parents.index[&child.key.parent().unwrap().code];
            child.parent = Some(p);
            parents.nodes[p].children.push(ci);
        }
    }

    // slice maps bottom-up: the aligned policy looks at the children's maps
    for li in (0..levels.len()).rev() {
        let Some(sampling) = levels[li].sampling else {
            continue;
        };
        let (nt, np) = sampling.dims();
        let maps: Vec<SliceMap> = levels[li]
            .nodes
            .iter()
            .map(|node| {
                if !node.is_plural() {
                    return Ok(SliceMap::single(node.first_rank, nt, np));
                }
                let users: Vec<usize> = node.users().collect();
                let child_maps: Vec<SliceMap> = match levels.get(li + 1) {
                    Some(lower) if lower.sampling.is_some() => node
                        .children
                        .iter()
                        .map(|&c| lower.nodes[c].map().clone())
                        .collect(),
                    _ => Vec::new(),
                };
                assign_sample_slices(nt, np, &users, &child_maps, config.alignment)
            })
            .collect::<Result<_>>()?;
        for (node, map) in levels[li].nodes.iter_mut().zip(maps) {
            node.map = Some(map);
        }
    }

    let keys: Vec<Vec<MortonKey>> = levels.iter().map(|l| l.nodes.iter().map(|n| n.key).collect()).collect();
    let lists = build_interaction_lists(&keys);
    let plan = build_m2l_comm_plan(&levels, &lists);

    let leaf_level = levels.last().unwrap();
    let mut ghosts: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, node) in leaf_level.nodes.iter().enumerate() {
        let owner = node.first_rank;
        let mut targets: Vec<usize> = lists.near[depth as usize - 1][i]
            .iter()
            .map(|&j| leaf_level.nodes[j as usize].first_rank)
            .filter(|&r| r != owner)
            .collect();
        targets.sort_unstable();
        targets.dedup();
        for q in targets {
            ghosts.entry((owner, q)).or_default().push(i);
        }
    }

    Ok(Setup {
        config: config.clone(),
        k,
        tree,
        partition,
        particles: particles.to_vec(),
        order,
        leaf_particles,
        levels,
        lists,
        plan,
        ghosts,
    })
}
