//! Prior-derived regions of interest: tight boxes around each tumor instance,
//! expanded outward by random per-face margins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::grid::{Geometry, LabelMask3};
use crate::{GTVN, GTVP};

/// Closed voxel interval `[lo, hi]` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox3 {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub source_label: u8,
}

impl BoundingBox3 {
    pub fn new(lo: [usize; 3], hi: [usize; 3], source_label: u8) -> Self {
        debug_assert!((0..3).all(|a| lo[a] <= hi[a]), "lo {lo:?} > hi {hi:?}");
        Self {
            lo,
            hi,
            source_label,
        }
    }

    /// Grow to include voxel `v`.
    pub fn include(&mut self, v: [usize; 3]) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(v[a]);
            self.hi[a] = self.hi[a].max(v[a]);
        }
    }

    pub fn contains(&self, v: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= v[a] && v[a] <= self.hi[a])
    }

    pub fn contains_box(&self, other: &BoundingBox3) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    pub fn extent(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn voxel_count(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn fits(&self, shape: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= self.hi[a] && self.hi[a] < shape[a])
    }

    /// Move each face outward by `offsets[axis] = [low face, high face]`,
    /// clamped to the grid.
    pub fn expand(&self, offsets: [[usize; 2]; 3], shape: [usize; 3]) -> BoundingBox3 {
        let lo = std::array::from_fn(|a| self.lo[a].saturating_sub(offsets[a][0]));
        let hi = std::array::from_fn(|a| (self.hi[a] + offsets[a][1]).min(shape[a] - 1));
        BoundingBox3::new(lo, hi, self.source_label)
    }
}

/// Inclusive range of outward face offsets, in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Margins {
    pub lo: usize,
    pub hi: usize,
}

impl Default for Margins {
    fn default() -> Self {
        Self { lo: 2, hi: 6 }
    }
}

impl Margins {
    pub fn new(lo: usize, hi: usize) -> Result<Self, String> {
        if lo > hi {
            return Err(format!("margin lower bound {lo} exceeds upper bound {hi}"));
        }
        Ok(Self { lo, hi })
    }
}

/// Draw the six face offsets, ordered (x low, x high, y low, y high, z low,
/// z high), each uniform on `[margins.lo, margins.hi]`.
pub fn draw_face_offsets<R: Rng + ?Sized>(rng: &mut R, margins: Margins) -> [[usize; 2]; 3] {
    let mut out = [[0usize; 2]; 3];
    for axis in out.iter_mut() {
        for face in axis.iter_mut() {
            *face = rng.random_range(margins.lo..=margins.hi);
        }
    }
    out
}

/// Expand every face of `b` outward by an independent uniform offset.
pub fn perturb_box<R: Rng + ?Sized>(
    b: &BoundingBox3,
    shape: [usize; 3],
    rng: &mut R,
    margins: Margins,
) -> BoundingBox3 {
    let offsets = draw_face_offsets(rng, margins);
    b.expand(offsets, shape)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSet {
    pub shape: [usize; 3],
    pub seed: u64,
    pub margins: Margins,
    pub connectivity: Connectivity,
    pub boxes: Vec<BoundingBox3>,
    /// The prior mask had no tumor voxels.
    pub empty_prior: bool,
}

impl RoiSet {
    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.boxes.iter().map(|b| b.source_label).collect()
    }
}

/// Build the ROI set for a prior mask: components of GTVp then GTVn, each
/// tight box expanded by [`perturb_box`]. Boxes come out ordered by label,
/// then component id, and the random stream is seeded from `seed` alone.
pub fn boxes_from_prior(
    prior: &LabelMask3,
    margins: Margins,
    connectivity: Connectivity,
    seed: u64,
) -> RoiSet {
    let shape = prior.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = Vec::new();
    for label in [GTVP, GTVN] {
        let set = label_components(prior, label, connectivity);
        for c in set.components() {
            boxes.push(perturb_box(&c.bbox, shape, &mut rng, margins));
        }
    }
    let empty_prior = boxes.is_empty();
    if empty_prior {
        log::warn!("prior mask is empty; ROI set has no boxes");
    }
    RoiSet {
        shape,
        seed,
        margins,
        connectivity,
        boxes,
        empty_prior,
    }
}

/// Binary mask of the union of all boxes.
pub fn rasterize(rois: &RoiSet, geometry: &Geometry) -> LabelMask3 {
    let mut m = LabelMask3::filled(geometry.clone(), 0);
    for b in &rois.boxes {
        for k in b.lo[2]..=b.hi[2] {
            for j in b.lo[1]..=b.hi[1] {
                for i in b.lo[0]..=b.hi[0] {
                    *m.get_mut(i, j, k) = 1;
                }
            }
        }
    }
    m
}
