use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use gradseg_core::cohort::{
    expand_training, mid_rt_descriptor, scan_dataset, FoldPlan, IncompleteCase, SampleDescriptor,
};
use gradseg_core::gradmap::assemble_sample;
use gradseg_core::nifti::{read_mask, read_volume, write_atomic, write_volume, Datatype};
use gradseg_core::volume::{resample, resample_mask, ZScoreStats};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{sample_seed, to_json, ProcessingConfig, ProcessingFlags, RunConfig};
use crate::{CmdResult, Failure, UsageContext};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layout JSON mapping file roles to `{id}` patterns.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// folds.json from `gradseg folds`; requires --fold.
    #[arg(long, requires = "fold")]
    pub folds: Option<PathBuf>,
    /// Fold whose training and validation samples are built.
    #[arg(long, requires = "folds")]
    pub fold: Option<usize>,
    /// Random seed; falls back to the config file, then GRADSEG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub processing: ProcessingFlags,
}

#[derive(Debug, Serialize)]
struct SampleEntry {
    case_id: String,
    phase: String,
    split: &'static str,
    /// Inputs, relative to the dataset root.
    image: PathBuf,
    prior: PathBuf,
    seed: u64,
    /// Outputs, relative to the output directory.
    channel0: Option<String>,
    channel1: Option<String>,
    rois: Option<String>,
    n_boxes: Option<usize>,
    shape: Option<[usize; 3]>,
    zscore: Option<ZScoreStats>,
    warnings: Vec<String>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    config: ProcessingConfig,
    config_hash: String,
    fold: Option<usize>,
    n_samples: usize,
    n_failed: usize,
    incomplete_patients: Vec<IncompleteCase>,
    samples: Vec<SampleEntry>,
}

fn relative(path: &Path, root: &Path) -> PathBuf {
    path.strip_prefix(root).unwrap_or(path).to_path_buf()
}

struct Outputs {
    channel0: String,
    channel1: String,
    rois: String,
    n_boxes: usize,
    shape: [usize; 3],
    zscore: ZScoreStats,
    warnings: Vec<String>,
}

fn process(
    d: &SampleDescriptor,
    seed: u64,
    cfg: &ProcessingConfig,
    out: &Path,
) -> anyhow::Result<Outputs> {
    let (img, _) =
        read_volume(&d.image).with_context(|| format!("reading {}", d.image.display()))?;
    let (prior, _) =
        read_mask(&d.prior).with_context(|| format!("reading {}", d.prior.display()))?;
    if !img.geometry().matches(prior.geometry()) {
        return Err(anyhow!(
            "image grid {:?}@{:?} differs from prior grid {:?}@{:?}",
            img.shape(),
            img.spacing(),
            prior.shape(),
            prior.spacing()
        ));
    }
    let (img, prior) = if img.spacing() == cfg.target_spacing {
        (img, prior)
    } else {
        let spec = cfg.resample_spec();
        (resample(&img, &spec)?, resample_mask(&prior, &spec)?)
    };
    let sample = assemble_sample(&d.patient_id, d.phase, &img, &prior, seed, &cfg.sample)?;

    let stem = format!("{}_{}", d.patient_id, d.phase);
    let names = [
        format!("{stem}_0000.nii.gz"),
        format!("{stem}_0001.nii.gz"),
        format!("{stem}_rois.json"),
    ];
    write_volume(&sample.channel0, out.join(&names[0]), Datatype::Float32)?;
    write_volume(&sample.channel1, out.join(&names[1]), Datatype::Float32)?;
    write_atomic(&out.join(&names[2]), to_json(&sample.rois).as_bytes())?;
    let mut warnings = Vec::new();
    if sample.rois.empty_prior {
        warnings.push("empty prior: channel 1 is all zero".to_string());
    }
    let [channel0, channel1, rois] = names;
    Ok(Outputs {
        channel0,
        channel1,
        rois,
        n_boxes: sample.rois.boxes.len(),
        shape: sample.channel0.shape(),
        zscore: sample.zscore,
        warnings,
    })
}

pub fn run(a: PreprocessArgs, cfg: &RunConfig) -> CmdResult {
    let root = cfg.data(a.data).usage()?;
    let out = cfg.out(a.out).usage()?;
    let layout = cfg.layout(a.layout).usage()?;
    let seed = cfg.seed(a.seed).usage()?;
    let pcfg = ProcessingConfig::resolve(cfg, &a.processing, seed).usage()?;

    let scan = scan_dataset(&root, &layout)?;
    for c in &scan.incomplete {
        log::warn!(
            "skipping incomplete patient {} (missing {:?})",
            c.id,
            c.missing
        );
    }
    // (descriptor, split)
    let descriptors: Vec<(SampleDescriptor, &'static str)> = match (&a.folds, a.fold) {
        (Some(path), Some(f)) => {
            let plan = FoldPlan::read_json(path)
                .with_context(|| format!("reading {}", path.display()))
                .usage()?;
            let fold = plan.folds.get(f).ok_or_else(|| {
                Failure::Usage(anyhow!("fold {f} out of range; plan has {} folds", plan.k))
            })?;
            let find = |id: &str| {
                scan.cases.iter().find(|c| c.id == id).ok_or_else(|| {
                    Failure::Runtime(anyhow!(
                        "patient {id} from the fold plan is not in the dataset"
                    ))
                })
            };
            let mut train_ids: Vec<&str> = fold
                .training
                .iter()
                .map(|s| s.patient_id.as_str())
                .collect();
            train_ids.dedup();
            let mut v = Vec::new();
            for id in train_ids {
                v.extend(
                    expand_training(std::slice::from_ref(find(id)?))
                        .into_iter()
                        .map(|d| (d, "train")),
                );
            }
            for id in &fold.validation {
                v.push((mid_rt_descriptor(find(id)?), "validation"));
            }
            v
        }
        _ => expand_training(&scan.cases)
            .into_iter()
            .map(|d| (d, "train"))
            .collect(),
    };

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let samples: Vec<SampleEntry> = descriptors
        .par_iter()
        .map(|(d, split)| {
            let s = sample_seed(seed, &d.patient_id, d.phase.as_str());
            let result = process(d, s, &pcfg, &out);
            let mut e = SampleEntry {
                case_id: d.patient_id.clone(),
                phase: d.phase.to_string(),
                split,
                image: relative(&d.image, &root),
                prior: relative(&d.prior, &root),
                seed: s,
                channel0: None,
                channel1: None,
                rois: None,
                n_boxes: None,
                shape: None,
                zscore: None,
                warnings: Vec::new(),
                error: None,
            };
            match result {
                Ok(o) => {
                    for w in &o.warnings {
                        log::warn!("{} {}: {w}", d.patient_id, d.phase);
                    }
                    e.channel0 = Some(o.channel0);
                    e.channel1 = Some(o.channel1);
                    e.rois = Some(o.rois);
                    e.n_boxes = Some(o.n_boxes);
                    e.shape = Some(o.shape);
                    e.zscore = Some(o.zscore);
                    e.warnings = o.warnings;
                }
                Err(err) => {
                    log::error!("{} {}: {err:#}", d.patient_id, d.phase);
                    e.error = Some(format!("{err:#}"));
                }
            }
            e
        })
        .collect();

    let n_failed = samples.iter().filter(|s| s.error.is_some()).count();
    let manifest = RunManifest {
        config_hash: pcfg.hash(),
        config: pcfg,
        fold: a.fold,
        n_samples: samples.len(),
        n_failed,
        incomplete_patients: scan.incomplete,
        samples,
    };
    let path = out.join("preprocess.json");
    write_atomic(&path, to_json(&manifest).as_bytes())?;
    println!("{}", path.display());
    if n_failed > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{n_failed} of {} samples failed",
            manifest.n_samples
        )));
    }
    Ok(())
}
