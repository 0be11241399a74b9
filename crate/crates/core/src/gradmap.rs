//! Gaussian gradient-magnitude maps restricted to ROI boxes, and assembly of
//! the two-channel (image, gradient map) network input.
//!
//! The derivative kernel is the sampled Gaussian derivative truncated at
//! `round(4σ)` voxels and scaled so that a unit ramp responds with exactly 1.
//! It is applied as `Σ_k d[k]·(f[x+k] - f[x-k])`, which makes constant input
//! produce exact zeros. The response along each axis is then smoothed with
//! the normalized Gaussian over the two transverse axes. That smoothing is
//! evaluated as a single 2D stencil whose mirrored taps are summed pairwise,
//! so permuting the input axes permutes the output bit-for-bit. Distances are
//! in voxels; spacing does not enter. Boundaries reflect
//! (`d c b a | a b c d | d c b a`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::Connectivity;
use crate::grid::{Geometry, Grid3, LabelMask3, Volume3};
use crate::roi::{boxes_from_prior, BoundingBox3, Margins, RoiSet};
use crate::volume::{minmax_normalize, zscore_normalize, VolumeError, ZScoreStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradMapError {
    #[error("invalid gradient-map config: {0}")]
    BadConfig(String),
    #[error("ROI grid {rois:?} does not match image shape {image:?}")]
    GeometryMismatch { rois: [usize; 3], image: [usize; 3] },
    #[error("image and mask geometries differ")]
    MaskGeometry,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradMapConfig {
    /// Gaussian width in voxels.
    pub sigma: f64,
    /// Gradient values are divided by this before clipping to `[0, 1]`.
    pub clip_scale: f64,
}

impl Default for GradMapConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            clip_scale: 1.0,
        }
    }
}

impl GradMapConfig {
    pub fn new(sigma: f64, clip_scale: f64) -> Result<Self, GradMapError> {
        let cfg = Self { sigma, clip_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GradMapError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(GradMapError::BadConfig(format!(
                "sigma {} must be > 0",
                self.sigma
            )));
        }
        if !(self.clip_scale.is_finite() && self.clip_scale > 0.0) {
            return Err(GradMapError::BadConfig(format!(
                "clip_scale {} must be > 0",
                self.clip_scale
            )));
        }
        Ok(())
    }
}

/// Kernel half-width: `round(4σ)`, at least 1.
pub fn kernel_radius(sigma: f64) -> usize {
    ((4.0 * sigma + 0.5) as usize).max(1)
}

/// Positive-side derivative taps `d[1..=R]` (index 0 unused, zero).
/// The full antisymmetric kernel is `d[-k] = -d[k]`, so it sums to zero,
/// and `Σ_{k=-R}^{R} k·d[k] = 1`.
pub fn derivative_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma);
    let mut d: Vec<f64> = (0..=r)
        .map(|k| {
            let x = k as f64;
            x * (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let ramp: f64 = (1..=r).map(|k| 2.0 * k as f64 * d[k]).sum();
    for w in d.iter_mut() {
        *w /= ramp;
    }
    d
}

/// Normalized Gaussian taps for offsets `-R..=R`.
pub fn smoothing_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|m| (-((m * m) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Half-sample symmetric reflection into `0..n`.
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn derivative_along(src: &[f64], shape: [usize; 3], axis: usize, d: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = shape;
    let r = d.len() - 1;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let c = [i, j, k];
                    let at = |off: i64| {
                        let mut p = c;
                        p[axis] = reflect(c[axis] as i64 + off, shape[axis]);
                        src[p[0] + nx * (p[1] + ny * p[2])]
                    };
                    let mut acc = 0.0;
                    for (n, &w) in d.iter().enumerate().take(r + 1).skip(1) {
                        let n = n as i64;
                        acc += w * (at(n) - at(-n));
                    }
                    slab[i + nx * j] = acc;
                }
            }
        });
    out
}

fn transverse_smooth(src: &[f64], shape: [usize; 3], axis: usize, w: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = shape;
    let (ja, ka) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let r = (w.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let c = [i, j, k];
                    let at = |a: i64, b: i64| {
                        let mut p = c;
                        p[ja] = reflect(c[ja] as i64 + a, shape[ja]);
                        p[ka] = reflect(c[ka] as i64 + b, shape[ka]);
                        src[p[0] + nx * (p[1] + ny * p[2])]
                    };
                    let mut acc = 0.0;
                    for a in -r..=r {
                        let wa = w[(a + r) as usize];
                        acc += wa * wa * at(a, a);
                        for b in (a + 1)..=r {
                            let wab = wa * w[(b + r) as usize];
                            acc += wab * (at(a, b) + at(b, a));
                        }
                    }
                    slab[i + nx * j] = acc;
                }
            }
        });
    out
}

/// Voxelwise `sqrt(gx² + gy² + gz²)` of the Gaussian-derivative responses.
pub fn gradient_magnitude(v: &Volume3, sigma: f64) -> Volume3 {
    let shape = v.shape();
    let d = derivative_kernel(sigma);
    let w = smoothing_kernel(sigma);
    let components: Vec<Vec<f64>> = (0..3)
        .map(|axis| {
            let deriv = derivative_along(v.data(), shape, axis, &d);
            transverse_smooth(&deriv, shape, axis, &w)
        })
        .collect();
    let data = (0..v.len())
        .into_par_iter()
        .map(|n| {
            let mut sq = [
                components[0][n] * components[0][n],
                components[1][n] * components[1][n],
                components[2][n] * components[2][n],
            ];
            // fixed summation order regardless of which axis is which
            sq.sort_by(f64::total_cmp);
            (sq[0] + sq[1] + sq[2]).sqrt()
        })
        .collect();
    Grid3::from_vec(v.geometry().clone(), data).expect("same geometry")
}

/// Copy the voxels of `b` into a standalone volume with unit spacing.
fn crop(v: &Volume3, b: &BoundingBox3) -> Volume3 {
    let geometry = Geometry::new(b.extent(), v.spacing()).expect("non-empty box");
    Grid3::from_fn(geometry, |i, j, k| {
        *v.get(b.lo[0] + i, b.lo[1] + j, b.lo[2] + k)
    })
}

/// Gradient map of `mid_img` restricted to the ROI boxes.
///
/// The image is min-max normalized over its full range; each box is padded
/// by the kernel radius, differentiated, cropped back, divided by
/// `clip_scale` and clipped to `[0, 1]`. Overlaps keep the maximum. Voxels
/// outside every box are exactly zero.
pub fn build_gradient_map(
    mid_img: &Volume3,
    rois: &RoiSet,
    cfg: &GradMapConfig,
) -> Result<Volume3, GradMapError> {
    cfg.validate()?;
    let shape = mid_img.shape();
    if rois.shape != shape {
        return Err(GradMapError::GeometryMismatch {
            rois: rois.shape,
            image: shape,
        });
    }
    let mut out = Volume3::filled(mid_img.geometry().clone(), 0.0);
    if rois.is_empty() {
        log::warn!("empty ROI set; gradient map is all zeros");
        return Ok(out);
    }
    let normalized = match minmax_normalize(mid_img) {
        Ok(n) => n,
        // a constant image has no gradient anywhere
        Err(VolumeError::ZeroRange) => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    let pad = kernel_radius(cfg.sigma);
    let patches: Vec<(BoundingBox3, Volume3, BoundingBox3)> = rois
        .boxes
        .par_iter()
        .map(|b| {
            let padded = b.expand([[pad, pad]; 3], shape);
            let grad = gradient_magnitude(&crop(&normalized, &padded), cfg.sigma);
            (*b, grad, padded)
        })
        .collect();
    for (b, grad, padded) in patches {
        for k in b.lo[2]..=b.hi[2] {
            for j in b.lo[1]..=b.hi[1] {
                for i in b.lo[0]..=b.hi[0] {
                    let g = *grad.get(i - padded.lo[0], j - padded.lo[1], k - padded.lo[2]);
                    let val = (g / cfg.clip_scale).clamp(0.0, 1.0);
                    let slot = out.get_mut(i, j, k);
                    if val > *slot {
                        *slot = val;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Acquisition time point of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "preRT")]
    PreRt,
    #[serde(rename = "midRT")]
    MidRt,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::PreRt => "preRT",
            Phase::MidRt => "midRT",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ROI and gradient settings for sample assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SampleConfig {
    pub gradient: GradMapConfig,
    pub margins: Margins,
    pub connectivity: Connectivity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoChannelSample {
    pub case_id: String,
    pub phase: Phase,
    /// Z-scored image.
    pub channel0: Volume3,
    /// Gradient map in `[0, 1]`, zero outside the ROI boxes.
    pub channel1: Volume3,
    pub rois: RoiSet,
    pub zscore: ZScoreStats,
}

/// Build one network input: the z-scored image plus the gradient map inside
/// boxes derived from `prior` (the registered pre-RT mask for mid-RT samples,
/// the pre-RT ground truth for pre-RT samples).
pub fn assemble_sample(
    case_id: &str,
    phase: Phase,
    img: &Volume3,
    prior: &LabelMask3,
    seed: u64,
    cfg: &SampleConfig,
) -> Result<TwoChannelSample, GradMapError> {
    if !img.geometry().matches(prior.geometry()) {
        return Err(GradMapError::MaskGeometry);
    }
    let (channel0, zscore) = zscore_normalize(img)?;
    let rois = boxes_from_prior(prior, cfg.margins, cfg.connectivity, seed);
    let channel1 = build_gradient_map(img, &rois, &cfg.gradient)?;
    Ok(TwoChannelSample {
        case_id: case_id.to_string(),
        phase,
        channel0,
        channel1,
        rois,
        zscore,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::rasterize;

    fn geom(shape: [usize; 3]) -> Geometry {
        Geometry::new(shape, [1.0; 3]).unwrap()
    }

    #[test]
    fn kernels_are_normalized() {
        for sigma in [0.5, 1.0, 1.7, 3.0] {
            let d = derivative_kernel(sigma);
            assert_eq!(d.len(), kernel_radius(sigma) + 1);
            let ramp: f64 = (1..d.len()).map(|k| 2.0 * k as f64 * d[k]).sum();
            assert!((ramp - 1.0).abs() < 1e-15);
            let w = smoothing_kernel(sigma);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(kernel_radius(1.0), 4);
    }

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn constant_gives_exact_zero() {
        let v = Volume3::filled(geom([9, 7, 5]), 42.5);
        assert!(gradient_magnitude(&v, 1.0).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ramp_slope_is_recovered() {
        let v = Volume3::from_fn(geom([32, 32, 32]), |i, _, _| 0.1 * i as f64);
        let g = gradient_magnitude(&v, 1.0);
        for i in 4..28 {
            for (j, k) in [(0, 0), (16, 16), (31, 5)] {
                assert!((g.get(i, j, k) - 0.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scales_linearly() {
        let v = Volume3::from_fn(geom([8, 9, 10]), |i, j, k| {
            ((i * 31 + j * 17 + k * 7) % 11) as f64
        });
        let a = gradient_magnitude(&v, 1.0);
        let b = gradient_magnitude(&v.map(|x| 3.5 * x), 1.0);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((3.5 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn empty_rois_give_zero_map() {
        let img = Volume3::from_fn(geom([6, 6, 6]), |i, j, k| (i + j + k) as f64);
        let prior = LabelMask3::filled(geom([6, 6, 6]), 0);
        let rois = boxes_from_prior(&prior, Margins::default(), Connectivity::TwentySix, 1);
        let map = build_gradient_map(&img, &rois, &GradMapConfig::default()).unwrap();
        assert!(map.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn support_inside_boxes_and_unit_range() {
        let img = Volume3::from_fn(geom([20, 20, 20]), |i, j, k| {
            ((i * 7919 + j * 104729 + k * 1299709) % 1000) as f64
        });
        let mut prior = LabelMask3::filled(geom([20, 20, 20]), 0);
        *prior.get_mut(5, 5, 5) = 1;
        *prior.get_mut(14, 12, 10) = 2;
        let rois = boxes_from_prior(&prior, Margins::default(), Connectivity::TwentySix, 5);
        let map = build_gradient_map(&img, &rois, &GradMapConfig::default()).unwrap();
        let union = rasterize(&rois, img.geometry());
        for (n, &x) in map.data().iter().enumerate() {
            assert!((0.0..=1.0).contains(&x));
            assert_eq!(x != 0.0, union.data()[n] == 1, "voxel {n}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = Volume3::filled(geom([6, 6, 6]), 0.0);
        let prior = LabelMask3::filled(geom([5, 6, 6]), 1);
        let rois = boxes_from_prior(&prior, Margins::default(), Connectivity::TwentySix, 1);
        assert!(matches!(
            build_gradient_map(&img, &rois, &GradMapConfig::default()),
            Err(GradMapError::GeometryMismatch { .. })
        ));
        assert!(GradMapConfig::new(0.0, 1.0).is_err());
        assert!(GradMapConfig::new(1.0, -1.0).is_err());
    }

    #[test]
    fn assembled_sample_is_deterministic() {
        let g = geom([16, 16, 16]);
        let img = Volume3::from_fn(g.clone(), |i, j, k| {
            let r2 = [i, j, k]
                .iter()
                .map(|&c| (c as f64 - 8.0).powi(2))
                .sum::<f64>();
            if r2 < 16.0 {
                100.0
            } else {
                20.0 + (i % 3) as f64
            }
        });
        let prior = img.map(|&x| u8::from(x == 100.0));
        let cfg = SampleConfig::default();
        let a = assemble_sample("P1", Phase::MidRt, &img, &prior, 11, &cfg).unwrap();
        let b = assemble_sample("P1", Phase::MidRt, &img, &prior, 11, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rois.boxes.len(), 1);
        let mean = a.channel0.data().iter().sum::<f64>() / a.channel0.len() as f64;
        assert!(mean.abs() < 1e-12);

        let empty = LabelMask3::filled(g, 0);
        let s = assemble_sample("P1", Phase::PreRt, &img, &empty, 11, &cfg).unwrap();
        assert!(s.rois.empty_prior);
        assert!(s.channel1.data().iter().all(|&x| x == 0.0));
    }
}
