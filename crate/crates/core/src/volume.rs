//! Resampling, intensity normalization and physical volume measurement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Affine, Geometry, Grid3, LabelMask3, Volume3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),
    #[error("invalid resample spec: {0}")]
    BadSpec(String),
    #[error("zero variance: z-score normalization undefined")]
    ZeroVariance,
    #[error("zero intensity range: min-max normalization undefined")]
    ZeroRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    Nearest,
    Linear,
    /// Catmull-Rom cubic convolution.
    Cubic,
}

impl Interpolation {
    pub fn from_order(order: u8) -> Result<Self, VolumeError> {
        match order {
            0 => Ok(Self::Nearest),
            1 => Ok(Self::Linear),
            3 => Ok(Self::Cubic),
            o => Err(VolumeError::BadSpec(format!(
                "interpolation order {o} not in {{0, 1, 3}}"
            ))),
        }
    }

    pub fn order(self) -> u8 {
        match self {
            Self::Nearest => 0,
            Self::Linear => 1,
            Self::Cubic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub target_spacing: [f64; 3],
    pub interpolation: Interpolation,
}

impl ResampleSpec {
    pub fn new(target_spacing: [f64; 3], order: u8) -> Result<Self, VolumeError> {
        if target_spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::BadSpec(format!(
                "target spacing {target_spacing:?} must be positive"
            )));
        }
        Ok(Self {
            target_spacing,
            interpolation: Interpolation::from_order(order)?,
        })
    }
}

/// Output extent along one axis: `ceil(n * src / dst)`, tolerant of
/// round-off in the ratio.
fn output_extent(n: usize, src: f64, dst: f64) -> usize {
    let exact = n as f64 * src / dst;
    ((exact - 1e-9).ceil() as usize).max(1)
}

/// Taps and weights for one output sample along an axis.
#[derive(Clone)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    len: usize,
}

fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

fn axis_taps(n_src: usize, n_out: usize, ratio: f64, interp: Interpolation) -> Vec<Taps> {
    (0..n_out)
        .map(|o| {
            // Output voxel centre expressed as a continuous source index.
            let x = (o as f64 + 0.5) * ratio - 0.5;
            match interp {
                Interpolation::Nearest => Taps {
                    idx: [clamp_index((x + 0.5).floor() as i64, n_src), 0, 0, 0],
                    w: [1.0, 0.0, 0.0, 0.0],
                    len: 1,
                },
                Interpolation::Linear => {
                    let f = x.floor();
                    let t = x - f;
                    let f = f as i64;
                    Taps {
                        idx: [clamp_index(f, n_src), clamp_index(f + 1, n_src), 0, 0],
                        w: [1.0 - t, t, 0.0, 0.0],
                        len: 2,
                    }
                }
                Interpolation::Cubic => {
                    let f = x.floor();
                    let t = x - f;
                    let f = f as i64;
                    Taps {
                        idx: [
                            clamp_index(f - 1, n_src),
                            clamp_index(f, n_src),
                            clamp_index(f + 1, n_src),
                            clamp_index(f + 2, n_src),
                        ],
                        w: catmull_rom(t),
                        len: 4,
                    }
                }
            }
        })
        .collect()
}

/// Resample a flat x-fastest buffer along `axis` using precomputed taps.
fn resample_axis(src: &[f64], shape: [usize; 3], axis: usize, taps: &[Taps]) -> Vec<f64> {
    let mut out_shape = shape;
    out_shape[axis] = taps.len();
    let [ox, oy, _] = out_shape;
    let [sx, sy, _] = shape;
    let stride = match axis {
        0 => 1,
        1 => sx,
        _ => sx * sy,
    };
    let plane = ox * oy;
    let mut out = vec![0.0; out_shape.iter().product()];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        for j in 0..oy {
            for i in 0..ox {
                let o = [i, j, k];
                let base_coords = {
                    let mut c = o;
                    c[axis] = 0;
                    c
                };
                let base = base_coords[0] + sx * (base_coords[1] + sy * base_coords[2]);
                let t = &taps[o[axis]];
                let mut acc = 0.0;
                for n in 0..t.len {
                    acc += t.w[n] * src[base + t.idx[n] * stride];
                }
                slab[i + ox * j] = acc;
            }
        }
    });
    out
}

fn resampled_geometry(g: &Geometry, target: [f64; 3]) -> Geometry {
    let shape: [usize; 3] =
        std::array::from_fn(|a| output_extent(g.shape[a], g.spacing[a], target[a]));
    // Columns scale with the spacing ratio; the origin moves to the centre of
    // the first output voxel.
    let mut affine: Affine = g.affine;
    let ratio: [f64; 3] = std::array::from_fn(|a| target[a] / g.spacing[a]);
    let first: [f64; 3] = std::array::from_fn(|a| 0.5 * ratio[a] - 0.5);
    for (r, row) in affine.iter_mut().enumerate() {
        let src = g.affine[r];
        for a in 0..3 {
            row[a] = src[a] * ratio[a];
        }
        row[3] = src[3] + src[0] * first[0] + src[1] * first[1] + src[2] * first[2];
    }
    Geometry {
        shape,
        spacing: target,
        affine,
    }
}

/// Resample onto a grid with `spec.target_spacing`, covering the same
/// physical extent. Samples are taken at output voxel centres; positions
/// outside the source grid replicate the edge voxels.
pub fn resample(v: &Volume3, spec: &ResampleSpec) -> Result<Volume3, VolumeError> {
    if v.is_empty() {
        return Err(VolumeError::DegenerateVolume("empty volume".into()));
    }
    let g = v.geometry();
    let out_geom = resampled_geometry(g, spec.target_spacing);
    let mut shape = g.shape;
    let mut buf = v.data().to_vec();
    for axis in 0..3 {
        let ratio = spec.target_spacing[axis] / g.spacing[axis];
        let taps = axis_taps(shape[axis], out_geom.shape[axis], ratio, spec.interpolation);
        buf = resample_axis(&buf, shape, axis, &taps);
        shape[axis] = out_geom.shape[axis];
    }
    Ok(Grid3::from_vec(out_geom, buf).expect("resampled buffer matches geometry"))
}

/// Resample a label map by interpolating each label's indicator trilinearly.
///
/// A voxel takes the label with the largest indicator above 0.5 (lower label
/// wins ties); otherwise it is background. The interpolation order in `spec`
/// is ignored.
pub fn resample_mask(m: &LabelMask3, spec: &ResampleSpec) -> Result<LabelMask3, VolumeError> {
    let linear = ResampleSpec {
        target_spacing: spec.target_spacing,
        interpolation: Interpolation::Linear,
    };
    let out_geom = resampled_geometry(m.geometry(), spec.target_spacing);
    let mut best = vec![0.5f64; out_geom.len()];
    let mut out = vec![0u8; out_geom.len()];
    for label in m.labels() {
        let indicator = m.map(|&l| if l == label { 1.0 } else { 0.0 });
        let interp = resample(&indicator, &linear)?;
        for ((b, o), &p) in best.iter_mut().zip(out.iter_mut()).zip(interp.data()) {
            // strict comparison keeps the earlier (lower) label on ties
            if p > *b {
                *b = p;
                *o = label;
            }
        }
    }
    Ok(LabelMask3::from_vec(out_geom, out).expect("mask buffer matches geometry"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Standardize to mean 0 and population standard deviation 1.
pub fn zscore_normalize(v: &Volume3) -> Result<(Volume3, ZScoreStats), VolumeError> {
    let n = v.len();
    if n < 2 {
        return Err(VolumeError::DegenerateVolume(format!(
            "z-score needs at least 2 voxels, got {n}"
        )));
    }
    let mean = v.data().iter().sum::<f64>() / n as f64;
    let var = v.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(VolumeError::ZeroVariance);
    }
    let out = v.map(|x| (x - mean) / std);
    Ok((out, ZScoreStats { mean, std }))
}

/// Rescale to `[0, 1]` using the full intensity range.
pub fn minmax_normalize(v: &Volume3) -> Result<Volume3, VolumeError> {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(hi > lo) {
        return Err(VolumeError::ZeroRange);
    }
    let range = hi - lo;
    Ok(v.map(|&x| (x - lo) / range))
}

/// Physical volume of `label` in cubic centimetres.
pub fn volume_cc(m: &LabelMask3, label: u8) -> f64 {
    m.count(label) as f64 * m.geometry().voxel_volume_mm3() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(shape: [usize; 3], spacing: [f64; 3]) -> Geometry {
        Geometry::new(shape, spacing).unwrap()
    }

    #[test]
    fn constants_survive_any_resampling() {
        let v = Volume3::filled(geom([7, 5, 4], [1.0, 0.7, 2.0]), 3.25);
        for order in [0, 1, 3] {
            let spec = ResampleSpec::new([0.4, 1.3, 0.9], order).unwrap();
            let r = resample(&v, &spec).unwrap();
            assert_eq!(r.shape(), [18, 3, 9]);
            assert!(
                r.data().iter().all(|&x| (x - 3.25).abs() < 1e-12),
                "order {order}"
            );
        }
    }

    #[test]
    fn identity_spec_reproduces_source() {
        let g = geom([6, 5, 4], [0.5, 0.5, 1.2]);
        let v = Volume3::from_fn(g, |i, j, k| ((i * 7 + j * 3 + k * 11) % 13) as f64 - 2.5);
        for order in [0, 1, 3] {
            let spec = ResampleSpec::new([0.5, 0.5, 1.2], order).unwrap();
            let r = resample(&v, &spec).unwrap();
            assert_eq!(r.shape(), v.shape());
            for (a, b) in r.data().iter().zip(v.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert_eq!(r.geometry().affine, v.geometry().affine);
        }
    }

    #[test]
    fn linear_ramp_reproduced_in_interior() {
        let v = Volume3::from_fn(geom([16, 3, 3], [1.0; 3]), |i, _, _| i as f64);
        for order in [1, 3] {
            let spec = ResampleSpec::new([0.5, 1.0, 1.0], order).unwrap();
            let r = resample(&v, &spec).unwrap();
            assert_eq!(r.shape(), [32, 3, 3]);
            // interior: all taps inside the source grid
            for o in 4..28 {
                let analytic = (o as f64 + 0.5) * 0.5 - 0.5;
                assert!(
                    (r.get(o, 1, 1) - analytic).abs() < 1e-9,
                    "order {order} at {o}"
                );
            }
        }
    }

    #[test]
    fn resample_rejects_bad_order() {
        assert!(ResampleSpec::new([1.0; 3], 2).is_err());
        assert!(ResampleSpec::new([1.0, -1.0, 1.0], 1).is_err());
    }

    #[test]
    fn mask_identity_and_empty() {
        let g = geom([6, 6, 6], [1.0; 3]);
        let m = LabelMask3::from_fn(g.clone(), |i, j, k| ((i + 2 * j + k) % 3) as u8);
        let spec = ResampleSpec::new([1.0; 3], 1).unwrap();
        assert_eq!(resample_mask(&m, &spec).unwrap(), m);

        let empty = LabelMask3::filled(g, 0);
        let up = resample_mask(&empty, &ResampleSpec::new([0.5; 3], 1).unwrap()).unwrap();
        assert_eq!(up.shape(), [12, 12, 12]);
        assert_eq!(up.count_nonzero(), 0);
    }

    #[test]
    fn cube_upsampling_is_solid_and_volume_preserving() {
        let g = geom([20, 20, 20], [1.0; 3]);
        let m = LabelMask3::from_fn(g, |i, j, k| {
            u8::from((5..15).contains(&i) && (5..15).contains(&j) && (5..15).contains(&k))
        });
        let spec = ResampleSpec::new([0.5; 3], 1).unwrap();
        let up = resample_mask(&m, &spec).unwrap();

        // Independent oracle: trilinear indicator evaluated directly.
        let ind = |x: f64| -> f64 {
            let f = x.floor();
            let t = x - f;
            let inside = |n: i64| f64::from(u8::from((5..15).contains(&n.clamp(0, 19))));
            (1.0 - t) * inside(f as i64) + t * inside(f as i64 + 1)
        };
        for k in 0..40 {
            for j in 0..40 {
                for i in 0..40 {
                    let c = |o: usize| (o as f64 + 0.5) * 0.5 - 0.5;
                    let p = ind(c(i)) * ind(c(j)) * ind(c(k));
                    assert_eq!(*up.get(i, j, k), u8::from(p > 0.5));
                }
            }
        }
        // no holes: everything strictly inside the output box is foreground
        for k in 11..29 {
            for j in 11..29 {
                for i in 11..29 {
                    assert_eq!(*up.get(i, j, k), 1);
                }
            }
        }
        let ratio = volume_cc(&up, 1) / volume_cc(&m, 1);
        assert!((ratio - 1.0).abs() < 0.15, "volume ratio {ratio}");
    }

    #[test]
    fn zscore_examples() {
        let v = Volume3::from_vec(geom([4, 1, 1], [1.0; 3]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (z, stats) = zscore_normalize(&v).unwrap();
        assert_eq!(stats.mean, 2.5);
        assert!((stats.std - 1.118033988749895).abs() < 1e-15);
        assert!((z.data()[0] - (-1.5 / 1.118033988749895)).abs() < 1e-12);
        assert!((z.data()[0] + 1.3416).abs() < 1e-4);
        let (zz, _) = zscore_normalize(&z).unwrap();
        for (a, b) in zz.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = Volume3::filled(geom([3, 1, 1], [1.0; 3]), 4.0);
        assert_eq!(zscore_normalize(&c).unwrap_err(), VolumeError::ZeroVariance);
        let one = Volume3::filled(geom([1, 1, 1], [1.0; 3]), 4.0);
        assert!(zscore_normalize(&one).is_err());
    }

    #[test]
    fn minmax_examples() {
        let g3 = geom([3, 1, 1], [1.0; 3]);
        let v = Volume3::from_vec(g3.clone(), vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&v).unwrap().data(), &[0.0, 0.5, 1.0]);
        let v = Volume3::from_vec(geom([2, 1, 1], [1.0; 3]), vec![-3.0, -1.0]).unwrap();
        assert_eq!(minmax_normalize(&v).unwrap().data(), &[0.0, 1.0]);
        let c = Volume3::filled(g3, 1.0);
        assert_eq!(minmax_normalize(&c).unwrap_err(), VolumeError::ZeroRange);
    }

    #[test]
    fn volume_cc_examples() {
        let m = LabelMask3::filled(geom([10, 10, 10], [1.0; 3]), 1);
        assert_eq!(volume_cc(&m, 1), 1.0);
        assert_eq!(volume_cc(&m, 2), 0.0);
        let mut data = vec![0u8; 4000];
        data[..3334].fill(2);
        let m = LabelMask3::from_vec(geom([4000, 1, 1], [1.2, 0.5, 0.5]), data).unwrap();
        let cc = volume_cc(&m, 2);
        assert!((cc - 3334.0 * 0.3 / 1000.0).abs() < 1e-12);
        assert!((cc - 1.0002).abs() < 1e-9);
    }

    fn small_volume() -> impl Strategy<Value = Volume3> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(a, b, c)| {
            proptest::collection::vec(-100.0f64..100.0, a * b * c).prop_map(move |d| {
                Volume3::from_vec(Geometry::new([a, b, c], [1.0; 3]).unwrap(), d).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn zscore_is_idempotent(v in small_volume()) {
            if let Ok((z, _)) = zscore_normalize(&v) {
                let (zz, _) = zscore_normalize(&z).unwrap();
                for (a, b) in zz.data().iter().zip(z.data()) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn minmax_is_idempotent_and_spans_unit(v in small_volume()) {
            if let Ok(m) = minmax_normalize(&v) {
                let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!((lo, hi), (0.0, 1.0));
                prop_assert_eq!(minmax_normalize(&m).unwrap(), m);
            }
        }

        #[test]
        fn mask_resampling_never_invents_labels(
            seed in proptest::collection::vec(prop_oneof![Just(0u8), Just(2u8)], 64),
            t in 0.3f64..2.0,
        ) {
            let m = LabelMask3::from_vec(Geometry::new([4, 4, 4], [1.0; 3]).unwrap(), seed).unwrap();
            let r = resample_mask(&m, &ResampleSpec::new([t, 1.0, 1.0], 1).unwrap()).unwrap();
            prop_assert!(r.data().iter().all(|&l| l == 0 || l == 2));
        }

        #[test]
        fn volume_cc_additive_and_permutation_invariant(
            data in proptest::collection::vec(0u8..3, 60),
            perm_idx in 0usize..6,
        ) {
            let m = LabelMask3::from_vec(Geometry::new([3, 4, 5], [0.5, 1.2, 0.7]).unwrap(), data).unwrap();
            let total = m.count_nonzero() as f64 * m.geometry().voxel_volume_mm3() / 1000.0;
            prop_assert!((volume_cc(&m, 1) + volume_cc(&m, 2) - total).abs() < 1e-12);
            let perms = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
            let p = m.permute_axes(perms[perm_idx]);
            for l in [1, 2] {
                prop_assert!((volume_cc(&p, l) - volume_cc(&m, l)).abs() < 1e-12);
            }
        }
    }
}
