//! Dataset discovery, patient records, training-set doubling and
//! patient-level k-fold splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use rayon::prelude::*;

use crate::gradmap::Phase;
use crate::nifti::{read_mask, NiftiError};
use crate::volume::volume_cc;
use crate::{LabelMask3, TumorLabel, GTVN, GTVP};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("no patients found under {0}")]
    EmptyDataset(PathBuf),
    #[error("patient id {id} appears in both {first} and {second}")]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("need at least {k} patients for {k} folds, got {n}")]
    TooFewPatients { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("duplicate patient id {0} in id list")]
    DuplicateListId(String),
    #[error("patient {id} is missing {missing:?}")]
    Incomplete { id: String, missing: Vec<Role> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("walking dataset: {0}")]
    Walk(#[from] walkdir::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The six per-patient files of a longitudinal case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MidImg,
    MidGt,
    PreImgRegistered,
    PreGtRegistered,
    PreImgNative,
    PreGtNative,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::MidImg,
        Role::MidGt,
        Role::PreImgRegistered,
        Role::PreGtRegistered,
        Role::PreImgNative,
        Role::PreGtNative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::MidImg => "mid_img",
            Role::MidGt => "mid_gt",
            Role::PreImgRegistered => "pre_img_registered",
            Role::PreGtRegistered => "pre_gt_registered",
            Role::PreImgNative => "pre_img_native",
            Role::PreGtNative => "pre_gt_native",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// File name patterns, relative to a patient directory named by its id.
/// `{id}` is replaced by the patient id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub mid_img: String,
    pub mid_gt: String,
    pub pre_img_registered: String,
    pub pre_gt_registered: String,
    pub pre_img_native: String,
    pub pre_gt_native: String,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            mid_img: "midRT/{id}_midRT_T2.nii.gz".into(),
            mid_gt: "midRT/{id}_midRT_mask.nii.gz".into(),
            pre_img_registered: "midRT/{id}_preRT_T2_registered.nii.gz".into(),
            pre_gt_registered: "midRT/{id}_preRT_mask_registered.nii.gz".into(),
            pre_img_native: "preRT/{id}_preRT_T2.nii.gz".into(),
            pre_gt_native: "preRT/{id}_preRT_mask.nii.gz".into(),
        }
    }
}

impl LayoutSpec {
    pub fn pattern(&self, role: Role) -> &str {
        match role {
            Role::MidImg => &self.mid_img,
            Role::MidGt => &self.mid_gt,
            Role::PreImgRegistered => &self.pre_img_registered,
            Role::PreGtRegistered => &self.pre_gt_registered,
            Role::PreImgNative => &self.pre_img_native,
            Role::PreGtNative => &self.pre_gt_native,
        }
    }

    /// Path of `role` for patient `id` inside `patient_dir`.
    pub fn resolve(&self, patient_dir: &Path, id: &str, role: Role) -> PathBuf {
        patient_dir.join(self.pattern(role).replace("{id}", id))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, CohortError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A complete longitudinal record. The registered pre-RT files share the
/// mid-RT grid; the native pre-RT files share their own grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientCase {
    pub id: String,
    pub mid_img: PathBuf,
    pub mid_gt: PathBuf,
    pub pre_img_registered: PathBuf,
    pub pre_gt_registered: PathBuf,
    pub pre_img_native: PathBuf,
    pub pre_gt_native: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteCase {
    pub id: String,
    pub dir: PathBuf,
    pub missing: Vec<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    /// Sorted by id.
    pub cases: Vec<PatientCase>,
    pub incomplete: Vec<IncompleteCase>,
}

/// Find patient directories under `root`.
///
/// A directory is a patient directory when at least one role file resolves
/// inside it using the directory name as id. Patient directories are not
/// searched further. Missing roles are reported per patient, not as errors.
pub fn scan_dataset(root: &Path, layout: &LayoutSpec) -> Result<ScanReport, CohortError> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut walker = WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter();
    while let Some(entry) = walker.next() {
        let entry = entry?;
        if !entry.file_type().is_dir() {
            continue;
        }
        let Some(id) = entry.file_name().to_str() else {
            continue;
        };
        let dir = entry.path();
        let is_patient = Role::ALL
            .iter()
            .any(|&r| layout.resolve(dir, id, r).is_file());
        if !is_patient {
            continue;
        }
        walker.skip_current_dir();
        if let Some(first) = found.get(id) {
            return Err(CohortError::DuplicateId {
                id: id.to_string(),
                first: first.clone(),
                second: dir.to_path_buf(),
            });
        }
        found.insert(id.to_string(), dir.to_path_buf());
    }
    if found.is_empty() {
        return Err(CohortError::EmptyDataset(root.to_path_buf()));
    }

    let mut cases = Vec::new();
    let mut incomplete = Vec::new();
    for (id, dir) in found {
        let path = |r| layout.resolve(&dir, &id, r);
        let missing: Vec<Role> = Role::ALL
            .into_iter()
            .filter(|&r| !path(r).is_file())
            .collect();
        if missing.is_empty() {
            cases.push(PatientCase {
                mid_img: path(Role::MidImg),
                mid_gt: path(Role::MidGt),
                pre_img_registered: path(Role::PreImgRegistered),
                pre_gt_registered: path(Role::PreGtRegistered),
                pre_img_native: path(Role::PreImgNative),
                pre_gt_native: path(Role::PreGtNative),
                id,
            });
        } else {
            log::warn!("patient {id} is missing {missing:?}");
            incomplete.push(IncompleteCase { id, dir, missing });
        }
    }
    Ok(ScanReport { cases, incomplete })
}

/// A patient and time point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub patient_id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Patients whose mid-RT case is held out.
    pub validation: Vec<String>,
    /// Both phases of every other patient.
    pub training: Vec<SampleRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, CohortError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Seeded patient-level split into `k` folds whose sizes differ by at most
/// one (the larger folds come first). Input order does not matter.
pub fn split_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan, CohortError> {
    if k < 2 {
        return Err(CohortError::BadFoldCount(k));
    }
    if ids.len() < k {
        return Err(CohortError::TooFewPatients { n: ids.len(), k });
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(CohortError::DuplicateListId(w[0].clone()));
    }
    let mut shuffled = sorted.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = sorted.len();
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let size = base + usize::from(index < extra);
        let mut validation = shuffled[start..start + size].to_vec();
        validation.sort();
        start += size;
        let training = sorted
            .iter()
            .filter(|id| validation.binary_search(id).is_err())
            .flat_map(|id| {
                [Phase::MidRt, Phase::PreRt].map(|phase| SampleRef {
                    patient_id: id.clone(),
                    phase,
                })
            })
            .collect();
        folds.push(Fold {
            index,
            validation,
            training,
        });
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Inputs for one two-channel sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub patient_id: String,
    pub phase: Phase,
    pub image: PathBuf,
    /// Mask whose components define the ROI boxes.
    pub prior: PathBuf,
}

/// Mid-RT sample: mid-RT image with the registered pre-RT mask as prior.
pub fn mid_rt_descriptor(p: &PatientCase) -> SampleDescriptor {
    SampleDescriptor {
        patient_id: p.id.clone(),
        phase: Phase::MidRt,
        image: p.mid_img.clone(),
        prior: p.pre_gt_registered.clone(),
    }
}

/// Pre-RT sample: native pre-RT image with its own ground truth as prior.
pub fn pre_rt_descriptor(p: &PatientCase) -> SampleDescriptor {
    SampleDescriptor {
        patient_id: p.id.clone(),
        phase: Phase::PreRt,
        image: p.pre_img_native.clone(),
        prior: p.pre_gt_native.clone(),
    }
}

/// Two training samples per patient (mid-RT, then pre-RT).
pub fn expand_training(patients: &[PatientCase]) -> Vec<SampleDescriptor> {
    patients
        .iter()
        .flat_map(|p| [mid_rt_descriptor(p), pre_rt_descriptor(p)])
        .collect()
}

/// Pre-RT and mid-RT volume of one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelVolumes {
    pub pre_cc: f64,
    pub mid_cc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVolumes {
    pub case_id: String,
    #[serde(rename = "GTVp")]
    pub gtvp: LabelVolumes,
    #[serde(rename = "GTVn")]
    pub gtvn: LabelVolumes,
}

impl CaseVolumes {
    pub fn label(&self, label: TumorLabel) -> LabelVolumes {
        match label {
            TumorLabel::Gtvp => self.gtvp,
            TumorLabel::Gtvn => self.gtvn,
        }
    }
}

/// Per-case tumor volumes, sorted by case id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeManifest {
    pub cases: Vec<CaseVolumes>,
}

impl VolumeManifest {
    pub fn new(mut cases: Vec<CaseVolumes>) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Self { cases }
    }

    pub fn get(&self, id: &str) -> Option<&CaseVolumes> {
        self.cases
            .binary_search_by(|c| c.case_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.cases[i])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, CohortError> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::new(m.cases))
    }
}

/// Volumes from a native pre-RT mask and a mid-RT mask.
pub fn case_volumes(id: &str, pre_gt: &LabelMask3, mid_gt: &LabelMask3) -> CaseVolumes {
    let v = |label: u8| LabelVolumes {
        pre_cc: volume_cc(pre_gt, label),
        mid_cc: volume_cc(mid_gt, label),
    };
    CaseVolumes {
        case_id: id.to_string(),
        gtvp: v(GTVP),
        gtvn: v(GTVN),
    }
}

/// Read each case's native pre-RT and mid-RT ground truth and tabulate
/// volumes.
pub fn compute_volume_manifest(cases: &[PatientCase]) -> Result<VolumeManifest, NiftiError> {
    let rows = cases
        .par_iter()
        .map(|c| {
            let (pre, _) = read_mask(&c.pre_gt_native)?;
            let (mid, _) = read_mask(&c.mid_gt)?;
            Ok(case_volumes(&c.id, &pre, &mid))
        })
        .collect::<Result<Vec<_>, NiftiError>>()?;
    Ok(VolumeManifest::new(rows))
}
