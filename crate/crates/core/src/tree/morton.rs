use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Particle, Vec3};

/// Deepest level a 64-bit code can hold with 3 bits per level.
pub const MAX_LEVEL: u32 = 21;

/// Box identity: level (root = 1) and interleaved code with 3 bits per level
/// below the root, x in the lowest bit of each triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MortonKey {
    pub level: u32,
    pub code: u64,
}

impl MortonKey {
    pub const ROOT: MortonKey = MortonKey { level: 1, code: 0 };

    pub fn new(level: u32, code: u64) -> Result<Self> {
        if level == 0 || level > MAX_LEVEL {
            return Err(Error::InvalidInput(format!("level {level} out of range")));
        }
        let bits = 3 * (level - 1);
        if bits < 64 && code >> bits != 0 {
            return Err(Error::InvalidInput(format!(
                "code {code:#x} has more than {bits} bits for level {level}"
            )));
        }
        Ok(Self { level, code })
    }

    pub fn from_indices(level: u32, idx: [u64; 3]) -> Self {
        let mut code = 0u64;
        for b in 0..(level - 1) {
            for (axis, &i) in idx.iter().enumerate() {
                code |= ((i >> b) & 1) << (3 * b + axis as u32);
            }
        }
        Self { level, code }
    }

    pub fn indices(&self) -> [u64; 3] {
        let mut idx = [0u64; 3];
        for b in 0..(self.level - 1) {
            for (axis, i) in idx.iter_mut().enumerate() {
                *i |= ((self.code >> (3 * b + axis as u32)) & 1) << b;
            }
        }
        idx
    }

    pub fn parent(&self) -> Option<MortonKey> {
        (self.level > 1).then(|| MortonKey {
            level: self.level - 1,
            code: self.code >> 3,
        })
    }

    pub fn ancestor(&self, level: u32) -> MortonKey {
        assert!(level >= 1 && level <= self.level);
        MortonKey {
            level,
            code: self.code >> (3 * (self.level - level)),
        }
    }

    pub fn children(&self) -> [MortonKey; 8] {
        std::array::from_fn(|i| MortonKey {
            level: self.level + 1,
            code: (self.code << 3) | i as u64,
        })
    }

    pub fn is_ancestor_of(&self, other: &MortonKey) -> bool {
        self.level < other.level && other.ancestor(self.level) == *self
    }

    /// Boxes at the same level that share a face, edge or vertex (or are equal).
    pub fn is_adjacent(&self, other: &MortonKey) -> bool {
        debug_assert_eq!(self.level, other.level);
        let a = self.indices();
        let b = other.indices();
        a.iter().zip(&b).all(|(x, y)| x.abs_diff(*y) <= 1)
    }

    /// Ordering in which every node follows all of its descendants and
    /// unrelated subtrees appear in Morton order.
    pub fn postorder_cmp(&self, other: &MortonKey) -> Ordering {
        let depth = self.level.max(other.level);
        let last = |k: &MortonKey| {
            let shift = 3 * (depth - k.level);
            ((k.code + 1) << shift).wrapping_sub(1)
        };
        last(self)
            .cmp(&last(other))
            .then_with(|| other.level.cmp(&self.level))
    }
}

impl PartialOrd for MortonKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Same-level keys compare by code; mixed levels compare by level first.
impl Ord for MortonKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .cmp(&other.level)
            .then_with(|| self.code.cmp(&other.code))
    }
}

/// Smallest `L` with `L >= log2(d0 / leaf_diameter) + 1`.
pub fn compute_num_levels(d0: f64, leaf_diameter: f64) -> Result<u32> {
    if !(leaf_diameter > 0.0 && d0 >= leaf_diameter && d0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need d0 >= leaf_diameter > 0, got d0={d0}, leaf={leaf_diameter}"
        )));
    }
    let bound = (d0 / leaf_diameter).log2() + 1.0;
    // exact powers of two land on integers; absorb rounding noise
    let levels = (bound - 1e-9).ceil().max(1.0) as u32;
    if levels > MAX_LEVEL {
        return Err(Error::InvalidInput(format!("{levels} levels exceed {MAX_LEVEL}")));
    }
    Ok(levels)
}

/// Tree geometry. The root box is a cube of side `leaf_diameter·2^(L-1)`
/// with its minimum corner at `root_corner`. `dim_class` only feeds the
/// complexity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub d0: f64,
    pub leaf_diameter: f64,
    pub levels: u32,
    pub dim_class: u32,
    pub root_corner: Vec3,
}

impl TreeConfig {
    pub fn new(d0: f64, leaf_diameter: f64, dim_class: u32, root_corner: Vec3) -> Result<Self> {
        if dim_class != 2 && dim_class != 3 {
            return Err(Error::InvalidInput(format!("dimension class {dim_class} not in {{2,3}}")));
        }
        let levels = compute_num_levels(d0, leaf_diameter)?;
        Ok(Self {
            d0,
            leaf_diameter,
            levels,
            dim_class,
            root_corner,
        })
    }

    /// Root box around `particles` such that the lowest particle on every
    /// axis sits at a leaf-box center.
    pub fn for_particles(particles: &[Particle], leaf_diameter: f64, dim_class: Option<u32>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidInput("no particles".into()));
        }
        if !(leaf_diameter.is_finite() && leaf_diameter > 0.0) {
            return Err(Error::InvalidInput(format!("leaf diameter {leaf_diameter} must be > 0")));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in particles {
            for a in 0..3 {
                lo[a] = lo[a].min(p.position[a]);
                hi[a] = hi[a].max(p.position[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let flat = (0..3).any(|a| hi[a] - lo[a] <= 1e-12 * extent.max(leaf_diameter));
        let d = dim_class.unwrap_or(if flat { 2 } else { 3 });
        let corner = [
            lo[0] - 0.5 * leaf_diameter,
            lo[1] - 0.5 * leaf_diameter,
            lo[2] - 0.5 * leaf_diameter,
        ];
        Self::new(extent + leaf_diameter, leaf_diameter, d, corner)
    }

    pub fn root_side(&self) -> f64 {
        self.leaf_diameter * (1u64 << (self.levels - 1)) as f64
    }

    pub fn box_side(&self, level: u32) -> f64 {
        self.root_side() / (1u64 << (level - 1)) as f64
    }

    pub fn center(&self, key: &MortonKey) -> Vec3 {
        let side = self.box_side(key.level);
        let idx = key.indices();
        std::array::from_fn(|a| self.root_corner[a] + (idx[a] as f64 + 0.5) * side)
    }
}

/// Key of the level-`level` box containing `position`.
pub fn morton_key(position: Vec3, config: &TreeConfig, level: u32) -> Result<MortonKey> {
    if level == 0 || level > config.levels {
        return Err(Error::InvalidInput(format!(
            "level {level} outside 1..={}",
            config.levels
        )));
    }
    let root = config.root_side();
    let cells = 1u64 << (level - 1);
    let mut idx = [0u64; 3];
    for a in 0..3 {
        let rel = (position[a] - config.root_corner[a]) / root;
        if !(0.0..1.0).contains(&rel) {
            return Err(Error::OutsideRoot { position });
        }
        idx[a] = ((rel * cells as f64).floor() as u64).min(cells - 1);
    }
    Ok(MortonKey::from_indices(level, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_config(levels_ratio: f64) -> TreeConfig {
        TreeConfig::new(levels_ratio, 1.0, 3, [0.0; 3]).unwrap()
    }

    #[test]
    fn level_formula() {
        assert_eq!(compute_num_levels(512.0, 0.25).unwrap(), 12);
        assert_eq!(compute_num_levels(0.25, 0.25).unwrap(), 1);
        assert_eq!(compute_num_levels(32.0, 1.0).unwrap(), 6);
        assert_eq!(compute_num_levels(33.0, 1.0).unwrap(), 7);
        assert_eq!(compute_num_levels(384.0, 0.25).unwrap(), 12);
        assert!(compute_num_levels(0.1, 0.25).is_err());
    }

    #[test]
    fn corner_is_zero_code() {
        let cfg = unit_config(16.0);
        for level in 1..=cfg.levels {
            assert_eq!(morton_key([0.0; 3], &cfg, level).unwrap().code, 0);
        }
    }

    #[test]
    fn octant_centers() {
        let cfg = unit_config(2.0);
        let mut codes: Vec<u64> = (0..8)
            .map(|i| {
                let p = [
                    0.5 + (i & 1) as f64,
                    0.5 + ((i >> 1) & 1) as f64,
                    0.5 + ((i >> 2) & 1) as f64,
                ];
                let key = morton_key(p, &cfg, 2).unwrap();
                assert_eq!(key.code, i);
                key.code
            })
            .collect();
        codes.sort();
        assert_eq!(codes, (0..8).collect::<Vec<_>>());
    }

    /// Descends from the root comparing against box midpoints.
    fn recursive_key(p: Vec3, cfg: &TreeConfig, level: u32) -> u64 {
        let mut lo = cfg.root_corner;
        let mut side = cfg.root_side();
        let mut code = 0u64;
        for _ in 1..level {
            side *= 0.5;
            let mut octant = 0u64;
            for a in 0..3 {
                if p[a] >= lo[a] + side {
                    octant |= 1 << a;
                    lo[a] += side;
                }
            }
            code = (code << 3) | octant;
        }
        code
    }

    #[test]
    fn interleave_matches_recursive_descent() {
        let cfg = TreeConfig::new(100.0, 0.7, 3, [-3.0, 1.0, 2.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = std::array::from_fn(|a| cfg.root_corner[a] + rng.gen_range(0.0..cfg.root_side()));
            for level in [1, 3, cfg.levels] {
                let key = morton_key(p, &cfg, level).unwrap();
                assert_eq!(key.code, recursive_key(p, &cfg, level));
            }
        }
    }

    #[test]
    fn outside_root_is_error() {
        let cfg = unit_config(4.0);
        assert!(matches!(
            morton_key([-0.1, 0.0, 0.0], &cfg, 2),
            Err(Error::OutsideRoot { .. })
        ));
        assert!(morton_key([4.0, 0.0, 0.0], &cfg, 2).is_err());
    }

    #[test]
    fn parent_child_roundtrip() {
        let key = MortonKey::from_indices(5, [3, 9, 14]);
        assert_eq!(key.indices(), [3, 9, 14]);
        for child in key.children() {
            assert_eq!(child.parent(), Some(key));
            assert!(key.is_ancestor_of(&child));
        }
        assert_eq!(MortonKey::ROOT.parent(), None);
        assert!(MortonKey::new(2, 8).is_err());
    }

    #[test]
    fn postorder_ordering() {
        let parent = MortonKey::from_indices(2, [0, 0, 0]);
        let c0 = parent.children()[0];
        let c7 = parent.children()[7];
        let other = MortonKey::from_indices(2, [1, 0, 0]);
        assert_eq!(c0.postorder_cmp(&c7), Ordering::Less);
        assert_eq!(c7.postorder_cmp(&parent), Ordering::Less);
        assert_eq!(parent.postorder_cmp(&other.children()[0]), Ordering::Less);
        assert_eq!(parent.postorder_cmp(&MortonKey::ROOT), Ordering::Less);
    }

    #[test]
    fn particles_on_leaf_centers() {
        let ps: Vec<Particle> = (0..4)
            .map(|i| Particle::new([i as f64 * 0.25, 0.0, 0.0], 1.0.into()).unwrap())
            .collect();
        let cfg = TreeConfig::for_particles(&ps, 0.25, None).unwrap();
        assert_eq!(cfg.dim_class, 2);
        assert_eq!(cfg.levels, 3);
        for p in &ps {
            let key = morton_key(p.position, &cfg, cfg.levels).unwrap();
            let c = cfg.center(&key);
            assert!((c[0] - p.position[0]).abs() < 1e-12);
            assert!((c[2] - p.position[2]).abs() < 1e-12);
        }
    }
}
