//! Sparse voxel storage: only occupied cells exist, looked up through an
//! open-addressing table keyed by the packed `(u, v, w)` index.

use super::normalize::NormalizedCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const AXIS_BITS: u32 = 21;
pub const MAX_RESOLUTION: usize = 1 << AXIS_BITS;
const AXIS_MASK: u64 = (1 << AXIS_BITS) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey(pub [u32; 3]);

impl VoxelKey {
    pub fn pack(self) -> u64 {
        let [u, v, w] = self.0;
        ((u as u64) << (2 * AXIS_BITS)) | ((v as u64) << AXIS_BITS) | w as u64
    }

    pub fn unpack(packed: u64) -> Self {
        VoxelKey([
            ((packed >> (2 * AXIS_BITS)) & AXIS_MASK) as u32,
            ((packed >> AXIS_BITS) & AXIS_MASK) as u32,
            (packed & AXIS_MASK) as u32,
        ])
    }
}

/// `floor(coord · r)` per axis, clamped to `[0, r − 1]`.
pub fn voxel_key(coord: [f64; 3], r: usize) -> VoxelKey {
    let top = (r - 1) as f64;
    VoxelKey(coord.map(|c| (c * r as f64).floor().clamp(0.0, top) as u32))
}

const EMPTY: u64 = u64::MAX;

/// Linear-probing map from packed key to a dense slot index.
#[derive(Clone, Debug)]
pub struct VoxelHashTable {
    keys: Vec<u64>,
    slots: Vec<u32>,
    mask: usize,
    len: usize,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl VoxelHashTable {
    pub fn with_capacity(n: usize) -> Self {
        let cap = (n.max(4) * 2).next_power_of_two();
        Self {
            keys: vec![EMPTY; cap],
            slots: vec![0; cap],
            mask: cap - 1,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn grow(&mut self) {
        let old_keys = std::mem::take(&mut self.keys);
        let old_slots = std::mem::take(&mut self.slots);
        let cap = old_keys.len() * 2;
        self.keys = vec![EMPTY; cap];
        self.slots = vec![0; cap];
        self.mask = cap - 1;
        self.len = 0;
        for (k, s) in old_keys.into_iter().zip(old_slots) {
            if k != EMPTY {
                self.insert(k, s);
            }
        }
    }

    /// Inserts if absent; returns the slot stored for `key`.
    pub fn insert(&mut self, key: u64, slot: u32) -> u32 {
        if (self.len + 1) * 2 > self.keys.len() {
            self.grow();
        }
        let mut i = mix(key) as usize & self.mask;
        loop {
            if self.keys[i] == EMPTY {
                self.keys[i] = key;
                self.slots[i] = slot;
                self.len += 1;
                return slot;
            }
            if self.keys[i] == key {
                return self.slots[i];
            }
            i = (i + 1) & self.mask;
        }
    }

    pub fn get(&self, key: u64) -> Option<u32> {
        let mut i = mix(key) as usize & self.mask;
        loop {
            let k = self.keys[i];
            if k == EMPTY {
                return None;
            }
            if k == key {
                return Some(self.slots[i]);
            }
            i = (i + 1) & self.mask;
        }
    }
}

/// Point-to-voxel assignment of a normalized cloud, independent of features.
/// Occupied voxels are stored in ascending key order.
#[derive(Clone, Debug)]
pub struct VoxelLayout {
    pub resolution: usize,
    pub keys: Vec<VoxelKey>,
    pub members: Vec<Vec<usize>>,
    /// Voxel slot of each point.
    pub point_voxel: Vec<usize>,
    table: VoxelHashTable,
}

impl VoxelLayout {
    pub fn build(nc: &NormalizedCloud, r: usize) -> Result<Self> {
        if r == 0 || r > MAX_RESOLUTION {
            return Err(Error::Config(format!(
                "voxel resolution {r} outside 1..={MAX_RESOLUTION}"
            )));
        }
        let point_keys: Vec<VoxelKey> = nc.coords.iter().map(|&c| voxel_key(c, r)).collect();
        let mut keys = point_keys.clone();
        keys.sort_unstable();
        keys.dedup();
        let mut table = VoxelHashTable::with_capacity(keys.len());
        for (slot, k) in keys.iter().enumerate() {
            table.insert(k.pack(), slot as u32);
        }
        let mut members = vec![Vec::new(); keys.len()];
        let mut point_voxel = Vec::with_capacity(point_keys.len());
        for (i, k) in point_keys.iter().enumerate() {
            let slot = table.get(k.pack()).expect("key inserted above") as usize;
            members[slot].push(i);
            point_voxel.push(slot);
        }
        Ok(Self {
            resolution: r,
            keys,
            members,
            point_voxel,
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn slot(&self, key: VoxelKey) -> Option<usize> {
        let r = self.resolution as u32;
        if key.0.iter().any(|&c| c >= r) {
            return None;
        }
        self.table.get(key.pack()).map(|s| s as usize)
    }

    pub fn count(&self, slot: usize) -> usize {
        self.members[slot].len()
    }

    /// M×N map averaging member rows into their voxel.
    pub fn mean_map(&self) -> crate::autodiff::SparseRows {
        let n = self.point_voxel.len();
        let rows = self
            .members
            .iter()
            .map(|m| {
                let w = 1.0 / m.len() as f64;
                m.iter().map(|&i| (i, w)).collect()
            })
            .collect();
        crate::autodiff::SparseRows::new(n, rows)
    }
}

/// Occupied voxels with mean-pooled features.
#[derive(Clone, Debug)]
pub struct SparseVoxelGrid {
    pub layout: VoxelLayout,
    /// M×D, row `s` belongs to `layout.keys[s]`.
    pub features: Tensor2,
}

impl SparseVoxelGrid {
    pub fn resolution(&self) -> usize {
        self.layout.resolution
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn feature(&self, key: VoxelKey) -> Option<&[f64]> {
        self.layout.slot(key).map(|s| self.features.row(s))
    }

    pub fn count(&self, key: VoxelKey) -> Option<usize> {
        self.layout.slot(key).map(|s| self.layout.count(s))
    }
}

/// Voxelizes `features` (N×D) at resolution `r`, averaging per voxel.
pub fn voxelize(nc: &NormalizedCloud, features: &Tensor2, r: usize) -> Result<SparseVoxelGrid> {
    if features.rows() != nc.len() {
        return Err(Error::shape(format!(
            "voxelize: {} feature rows for {} points",
            features.rows(),
            nc.len()
        )));
    }
    let layout = VoxelLayout::build(nc, r)?;
    let features = layout.mean_map().apply(features)?;
    Ok(SparseVoxelGrid { layout, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nc(coords: Vec<[f64; 3]>) -> NormalizedCloud {
        NormalizedCloud {
            coords,
            scale: 1.0,
            centroid: [0.0; 3],
        }
    }

    #[test]
    fn key_examples() {
        assert_eq!(voxel_key([0.5, 0.25, 0.75], 4), VoxelKey([2, 1, 3]));
        assert_eq!(voxel_key([1.0, 1.0, 1.0], 4), VoxelKey([3, 3, 3]));
        assert_eq!(voxel_key([0.0, 0.0, 0.0], 4), VoxelKey([0, 0, 0]));
    }

    #[test]
    fn pack_round_trip_at_extremes() {
        let k = VoxelKey([(MAX_RESOLUTION - 1) as u32, 0, 12345]);
        assert_eq!(VoxelKey::unpack(k.pack()), k);
    }

    #[test]
    fn two_points_one_voxel_mean() {
        let c = nc(vec![[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.9, 0.9, 0.9]]);
        let f = Tensor2::from_rows(&[[1.0, 3.0], [3.0, 5.0], [7.0, 7.0]]).unwrap();
        let g = voxelize(&c, &f, 4).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.feature(VoxelKey([0, 0, 0])).unwrap(), &[2.0, 4.0]);
        assert_eq!(g.count(VoxelKey([0, 0, 0])), Some(2));
        assert_eq!(g.count(VoxelKey([1, 1, 1])), None);
        assert_eq!(g.count(VoxelKey([9, 0, 0])), None);
    }

    #[test]
    fn hash_table_grows_and_finds_everything() {
        let mut t = VoxelHashTable::with_capacity(1);
        for i in 0..1000u64 {
            t.insert(i * 7919, i as u32);
        }
        assert_eq!(t.len(), 1000);
        for i in 0..1000u64 {
            assert_eq!(t.get(i * 7919), Some(i as u32));
        }
        assert_eq!(t.get(3), None);
        // re-inserting keeps the first slot
        assert_eq!(t.insert(7919, 99), 1);
    }

    #[test]
    fn rejects_bad_resolution() {
        let c = nc(vec![[0.5; 3]]);
        assert!(VoxelLayout::build(&c, 0).is_err());
        assert!(voxelize(&c, &Tensor2::zeros(2, 1), 4).is_err());
    }
}
