//! Dense 3D grids with physical geometry.
//!
//! Voxel `(i, j, k)` lives at linear index `i + nx * (j + ny * k)`: the first
//! axis varies fastest, which is also the on-disk NIfTI order. Every module in
//! the crate uses this convention.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-major 3x4 voxel-to-millimetre placement matrix.
pub type Affine = [[f64; 4]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("data length {found} does not match shape {shape:?} ({expected} voxels)")]
    LengthMismatch {
        shape: [usize; 3],
        expected: usize,
        found: usize,
    },
    #[error("spacing must be finite and positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("shape {0:?} has a zero extent")]
    EmptyShape([usize; 3]),
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
}

/// Extent, voxel size and placement shared by paired images and masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: Affine,
}

impl Geometry {
    /// Geometry with an axis-aligned affine and zero origin.
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self, GridError> {
        let affine = diagonal_affine(spacing);
        Self::with_affine(shape, spacing, affine)
    }

    pub fn with_affine(
        shape: [usize; 3],
        spacing: [f64; 3],
        affine: Affine,
    ) -> Result<Self, GridError> {
        if shape.contains(&0) {
            return Err(GridError::EmptyShape(shape));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(GridError::BadSpacing(spacing));
        }
        Ok(Self {
            shape,
            spacing,
            affine,
        })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical size of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Shape and spacing agree exactly. The affine is not compared: no
    /// computation in the toolkit depends on orientation.
    pub fn matches(&self, other: &Geometry) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }
}

pub fn diagonal_affine(spacing: [f64; 3]) -> Affine {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
    ]
}

/// A scalar field over a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    geometry: Geometry,
    data: Vec<T>,
}

/// Image intensities and derived scalar maps.
pub type Volume3 = Grid3<f64>;

/// Label map: 0 background, 1 GTVp, 2 GTVn.
pub type LabelMask3 = Grid3<u8>;

impl<T> Grid3<T> {
    pub fn from_vec(geometry: Geometry, data: Vec<T>) -> Result<Self, GridError> {
        if data.len() != geometry.len() {
            return Err(GridError::LengthMismatch {
                shape: geometry.shape,
                expected: geometry.len(),
                found: data.len(),
            });
        }
        Ok(Self { geometry, data })
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let [nx, ny, nz] = geometry.shape;
        let mut data = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.data[self.geometry.index(i, j, k)]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize, k: usize) -> &mut T {
        let idx = self.geometry.index(i, j, k);
        &mut self.data[idx]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid3<U> {
        Grid3 {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Swap axes so that output axis `a` is input axis `perm[a]`. Spacing
    /// follows its axis; the affine is reset to the diagonal.
    pub fn permute_axes(&self, perm: [usize; 3]) -> Grid3<T>
    where
        T: Clone,
    {
        let src = self.shape();
        let shape = [src[perm[0]], src[perm[1]], src[perm[2]]];
        let sp = self.spacing();
        let spacing = [sp[perm[0]], sp[perm[1]], sp[perm[2]]];
        let geometry = Geometry {
            shape,
            spacing,
            affine: diagonal_affine(spacing),
        };
        Grid3::from_fn(geometry, |i, j, k| {
            let out = [i, j, k];
            let mut s = [0usize; 3];
            for a in 0..3 {
                s[perm[a]] = out[a];
            }
            self.get(s[0], s[1], s[2]).clone()
        })
    }
}

impl<T: Clone> Grid3<T> {
    pub fn filled(geometry: Geometry, value: T) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            data: vec![value; n],
        }
    }
}

impl Volume3 {
    /// Rejects NaN and infinities.
    pub fn check_finite(&self) -> Result<(), GridError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(idx) => Err(GridError::NonFinite(idx)),
            None => Ok(()),
        }
    }
}

impl LabelMask3 {
    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Binary mask (0/1) of the voxels equal to `label`.
    pub fn select(&self, label: u8) -> LabelMask3 {
        self.map(|&v| u8::from(v == label))
    }

    /// Sorted distinct nonzero labels.
    pub fn labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}
