//! Synthetic longitudinal cohorts of ellipsoidal tumors with exact ground
//! truth.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{case_volumes, CaseVolumes, LayoutSpec, PatientCase, Role, VolumeManifest};
use crate::grid::{Geometry, GridError};
use crate::nifti::{write_atomic, write_mask, write_volume, Datatype, NiftiError};
use crate::{LabelMask3, TumorLabel, Volume3};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorSpec {
    pub label: TumorLabel,
    /// Center in world mm; voxel `(i, j, k)` sits at `(i, j, k) * spacing`.
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    /// Mid-RT semi-axes are `shrinkage * semi_axes_mm`.
    pub shrinkage: f64,
    /// Tumor intensity minus background.
    pub contrast: f64,
}

impl TumorSpec {
    pub fn pre_volume_cc(&self) -> f64 {
        ellipsoid_cc(self.semi_axes_mm)
    }

    pub fn mid_semi_axes_mm(&self) -> [f64; 3] {
        self.semi_axes_mm.map(|a| a * self.shrinkage)
    }

    pub fn mid_volume_cc(&self) -> f64 {
        ellipsoid_cc(self.mid_semi_axes_mm())
    }
}

pub fn ellipsoid_cc(semi_axes_mm: [f64; 3]) -> f64 {
    4.0 / 3.0 * PI * semi_axes_mm.iter().product::<f64>() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background: f64,
    pub noise_sigma: f64,
    /// Maximum per-axis integer shift, in voxels, of each tumor in the
    /// registered pre-RT mask.
    pub jitter: usize,
    pub seed: u64,
    pub tumors: Vec<TumorSpec>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<Geometry, PhantomError> {
        let geometry = Geometry::new(self.shape, self.spacing)?;
        let bad = |m: String| Err(PhantomError::BadSpec(m));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma {} must be finite and >= 0",
                self.noise_sigma
            ));
        }
        if !self.background.is_finite() {
            return bad("background must be finite".into());
        }
        for (n, t) in self.tumors.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.shrinkage) {
                return bad(format!(
                    "tumor {n}: shrinkage {} outside [0, 1]",
                    t.shrinkage
                ));
            }
            if !t.contrast.is_finite() {
                return bad(format!("tumor {n}: contrast must be finite"));
            }
            for a in 0..3 {
                let (c, r) = (t.center_mm[a], t.semi_axes_mm[a]);
                if !(r > 0.0 && r.is_finite() && c.is_finite()) {
                    return bad(format!("tumor {n}: bad center/semi-axis on axis {a}"));
                }
                let pad = self.jitter as f64 * self.spacing[a];
                let top = (self.shape[a] - 1) as f64 * self.spacing[a];
                if c - r - pad < 0.0 || c + r + pad > top {
                    return bad(format!(
                        "tumor {n}: extent {:.3}..{:.3} mm (with jitter) leaves grid 0..{top:.3} mm on axis {a}",
                        c - r - pad,
                        c + r + pad
                    ));
                }
            }
        }
        Ok(geometry)
    }
}

/// Paint `label` where the ellipsoid (shifted by `shift` voxels) contains
/// the voxel center. Returns the painted voxel count.
fn paint(
    mask: &mut LabelMask3,
    contrast: &mut [f64],
    center: [f64; 3],
    semi: [f64; 3],
    shift: [i64; 3],
    label: u8,
    value: f64,
) -> usize {
    if semi.iter().any(|&r| r <= 0.0) {
        return 0;
    }
    let g = mask.geometry().clone();
    let sp = g.spacing;
    // index range covering the shifted ellipsoid
    let range = |a: usize| {
        let lo = ((center[a] - semi[a]) / sp[a]).floor() as i64 + shift[a];
        let hi = ((center[a] + semi[a]) / sp[a]).ceil() as i64 + shift[a];
        (lo.max(0), hi.min(g.shape[a] as i64 - 1))
    };
    let (r0, r1, r2) = (range(0), range(1), range(2));
    let mut painted = 0;
    for k in r2.0..=r2.1 {
        let dz = ((k - shift[2]) as f64 * sp[2] - center[2]) / semi[2];
        for j in r1.0..=r1.1 {
            let dy = ((j - shift[1]) as f64 * sp[1] - center[1]) / semi[1];
            for i in r0.0..=r0.1 {
                let dx = ((i - shift[0]) as f64 * sp[0] - center[0]) / semi[0];
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    let idx = g.index(i as usize, j as usize, k as usize);
                    mask.data_mut()[idx] = label;
                    contrast[idx] = value;
                    painted += 1;
                }
            }
        }
    }
    painted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorRecord {
    #[serde(flatten)]
    pub spec: TumorSpec,
    /// Integer voxel shift applied in the registered pre-RT mask.
    pub shift_vox: [i64; 3],
    pub pre_cc_analytic: f64,
    pub mid_cc_analytic: f64,
}

/// A rendered case. Pre-RT and mid-RT share one grid.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub pre_img: Volume3,
    pub mid_img: Volume3,
    pub pre_gt: LabelMask3,
    pub mid_gt: LabelMask3,
    /// Pre-RT mask with each tumor rigidly shifted: the registered prior.
    pub prior: LabelMask3,
    pub tumors: Vec<TumorRecord>,
}

fn render_image<R: Rng>(
    geometry: &Geometry,
    background: f64,
    contrast: &[f64],
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> Volume3 {
    let data = contrast
        .iter()
        .map(|&c| background + c + noise.map_or(0.0, |n| n.sample(rng)))
        .collect();
    Volume3::from_vec(geometry.clone(), data).expect("length matches")
}

/// Render a case in memory. Shifts are drawn first, then pre-RT noise,
/// then mid-RT noise, all from one stream seeded by `spec.seed`.
pub fn render_case(spec: &PhantomSpec) -> Result<PhantomCase, PhantomError> {
    let geometry = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j = spec.jitter as i64;
    let shifts: Vec<[i64; 3]> = spec
        .tumors
        .iter()
        .map(|_| std::array::from_fn(|_| rng.random_range(-j..=j)))
        .collect();

    let n = geometry.len();
    let mut pre_gt = LabelMask3::filled(geometry.clone(), 0);
    let mut mid_gt = pre_gt.clone();
    let mut prior = pre_gt.clone();
    let (mut pre_c, mut mid_c, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tumors = Vec::with_capacity(spec.tumors.len());
    for (t, &shift) in spec.tumors.iter().zip(&shifts) {
        let l = t.label.value();
        paint(
            &mut pre_gt,
            &mut pre_c,
            t.center_mm,
            t.semi_axes_mm,
            [0; 3],
            l,
            t.contrast,
        );
        paint(
            &mut mid_gt,
            &mut mid_c,
            t.center_mm,
            t.mid_semi_axes_mm(),
            [0; 3],
            l,
            t.contrast,
        );
        paint(
            &mut prior,
            &mut scratch,
            t.center_mm,
            t.semi_axes_mm,
            shift,
            l,
            t.contrast,
        );
        tumors.push(TumorRecord {
            spec: t.clone(),
            shift_vox: shift,
            pre_cc_analytic: t.pre_volume_cc(),
            mid_cc_analytic: t.mid_volume_cc(),
        });
    }

    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let pre_img = render_image(&geometry, spec.background, &pre_c, noise.as_ref(), &mut rng);
    let mid_img = render_image(&geometry, spec.background, &mid_c, noise.as_ref(), &mut rng);
    Ok(PhantomCase {
        pre_img,
        mid_img,
        pre_gt,
        mid_gt,
        prior,
        tumors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub id: String,
    pub spec: PhantomSpec,
    pub tumors: Vec<TumorRecord>,
    /// Voxel-counted volumes of the written masks.
    pub volumes: CaseVolumes,
}

/// Render a case and write every layout file under `patient_dir`, plus
/// `{id}_phantom.json`.
pub fn generate_case(
    spec: &PhantomSpec,
    id: &str,
    patient_dir: &Path,
    layout: &LayoutSpec,
) -> Result<(PatientCase, CaseManifest), PhantomError> {
    let case = render_case(spec)?;
    let path = |r| layout.resolve(patient_dir, id, r);
    // the phantom has no deformation, so the registered image is the native one
    write_volume(&case.pre_img, path(Role::PreImgNative), Datatype::Float32)?;
    write_volume(
        &case.pre_img,
        path(Role::PreImgRegistered),
        Datatype::Float32,
    )?;
    write_volume(&case.mid_img, path(Role::MidImg), Datatype::Float32)?;
    write_mask(&case.pre_gt, path(Role::PreGtNative))?;
    write_mask(&case.prior, path(Role::PreGtRegistered))?;
    write_mask(&case.mid_gt, path(Role::MidGt))?;

    let manifest = CaseManifest {
        id: id.to_string(),
        spec: spec.clone(),
        volumes: case_volumes(id, &case.pre_gt, &case.mid_gt),
        tumors: case.tumors,
    };
    write_atomic(
        &patient_dir.join(format!("{id}_phantom.json")),
        to_json(&manifest).as_bytes(),
    )?;
    let patient = PatientCase {
        id: id.to_string(),
        mid_img: path(Role::MidImg),
        mid_gt: path(Role::MidGt),
        pre_img_registered: path(Role::PreImgRegistered),
        pre_gt_registered: path(Role::PreGtRegistered),
        pre_img_native: path(Role::PreImgNative),
        pre_gt_native: path(Role::PreGtNative),
    };
    Ok((patient, manifest))
}

/// Distribution from which per-patient phantom specs are drawn. Every
/// patient gets one GTVp and one GTVn on opposite sides of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background: f64,
    pub noise_sigma: f64,
    pub contrast: [f64; 2],
    pub jitter: usize,
    pub shrinkage: [f64; 2],
    pub gtvp_semi_axes_mm: [f64; 2],
    pub gtvn_semi_axes_mm: [f64; 2],
    /// Number of patients whose GTVn disappears by mid-RT (shrinkage 0).
    pub vanishing: usize,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            shape: [112, 112, 40],
            spacing: [0.5, 0.5, 1.2],
            background: 100.0,
            noise_sigma: 5.0,
            contrast: [60.0, 120.0],
            jitter: 2,
            shrinkage: [0.3, 1.0],
            gtvp_semi_axes_mm: [7.0, 10.0],
            gtvn_semi_axes_mm: [4.0, 6.0],
            vanishing: 0,
        }
    }
}

// center ranges as fractions of the grid extent
const GTVP_CENTER: [[f64; 2]; 3] = [[0.25, 0.40], [0.36, 0.64], [0.38, 0.62]];
const GTVN_CENTER: [[f64; 2]; 3] = [[0.72, 0.82], [0.22, 0.78], [0.30, 0.70]];

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        Geometry::new(self.shape, self.spacing)?;
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        for (name, r) in [
            ("contrast", self.contrast),
            ("shrinkage", self.shrinkage),
            ("gtvp_semi_axes_mm", self.gtvp_semi_axes_mm),
            ("gtvn_semi_axes_mm", self.gtvn_semi_axes_mm),
        ] {
            if !ordered(r) {
                return Err(PhantomError::BadSpec(format!(
                    "{name} range {r:?} is not ordered"
                )));
            }
        }
        Ok(())
    }

    /// Draw one patient's spec.
    pub fn sample<R: Rng>(&self, rng: &mut R, vanish: bool) -> PhantomSpec {
        let extent: [f64; 3] =
            std::array::from_fn(|a| (self.shape[a] - 1) as f64 * self.spacing[a]);
        let mut tumor = |label, centers: [[f64; 2]; 3], axes: [f64; 2], shrink: Option<f64>| {
            let center_mm = std::array::from_fn(|a| extent[a] * uniform(rng, centers[a]));
            let semi_axes_mm = std::array::from_fn(|_| uniform(rng, axes));
            let s = uniform(rng, self.shrinkage);
            TumorSpec {
                label,
                center_mm,
                semi_axes_mm,
                shrinkage: shrink.unwrap_or(s),
                contrast: uniform(rng, self.contrast),
            }
        };
        let gtvp = tumor(TumorLabel::Gtvp, GTVP_CENTER, self.gtvp_semi_axes_mm, None);
        let gtvn = tumor(
            TumorLabel::Gtvn,
            GTVN_CENTER,
            self.gtvn_semi_axes_mm,
            vanish.then_some(0.0),
        );
        PhantomSpec {
            shape: self.shape,
            spacing: self.spacing,
            background: self.background,
            noise_sigma: self.noise_sigma,
            jitter: self.jitter,
            seed: rng.random(),
            tumors: vec![gtvp, gtvn],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortPatient {
    pub id: String,
    pub dir: PathBuf,
    pub vanishing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub n: usize,
    pub seed: u64,
    pub spec: CohortSpec,
    pub layout: LayoutSpec,
    pub patients: Vec<CohortPatient>,
}

pub fn patient_id(index: usize) -> String {
    format!("P{:03}", index + 1)
}

/// Per-patient specs. Patient `i` draws from stream `i + 1` of a generator
/// seeded by `seed`; stream 0 picks the vanishing patients.
pub fn sample_cohort(
    n: usize,
    spec: &CohortSpec,
    seed: u64,
) -> Result<Vec<(String, PhantomSpec, bool)>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::BadSpec(
            "cohort needs at least one patient".into(),
        ));
    }
    spec.validate()?;
    if spec.vanishing > n {
        return Err(PhantomError::BadSpec(format!(
            "{} vanishing patients requested out of {n}",
            spec.vanishing
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut vanish = vec![false; n];
    for &i in &order[..spec.vanishing] {
        vanish[i] = true;
    }
    let out = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            (patient_id(i), spec.sample(&mut rng, vanish[i]), vanish[i])
        })
        .collect::<Vec<_>>();
    for (id, s, _) in &out {
        s.validate()
            .map_err(|e| PhantomError::BadSpec(format!("patient {id}: {e}")))?;
    }
    Ok(out)
}

/// Write `n` patients under `root` in the default layout, plus
/// `cohort.json` and `volumes.json`. Returns the cohort manifest path.
pub fn generate_cohort(
    n: usize,
    spec: &CohortSpec,
    seed: u64,
    root: &Path,
) -> Result<PathBuf, PhantomError> {
    let layout = LayoutSpec::default();
    let patients = sample_cohort(n, spec, seed)?;
    let volumes = patients
        .par_iter()
        .map(|(id, s, _)| generate_case(s, id, &root.join(id), &layout).map(|(_, m)| m.volumes))
        .collect::<Result<Vec<_>, _>>()?;

    write_atomic(
        &root.join("volumes.json"),
        VolumeManifest::new(volumes).to_json().as_bytes(),
    )?;
    let manifest = CohortManifest {
        n,
        seed,
        spec: spec.clone(),
        layout,
        patients: patients
            .into_iter()
            .map(|(id, _, vanishing)| CohortPatient {
                dir: PathBuf::from(&id),
                id,
                vanishing,
            })
            .collect(),
    };
    let path = root.join("cohort.json");
    write_atomic(&path, to_json(&manifest).as_bytes())?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("manifest serializes");
    s.push('\n');
    s
}
