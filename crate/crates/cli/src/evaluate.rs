use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use gradseg_core::cohort::{scan_dataset, PatientCase, Role};
use gradseg_core::metrics::{evaluate_case, CohortReport};
use gradseg_core::nifti::{read_mask, write_atomic};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{CmdResult, Failure, UsageContext};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted masks named `{case}.nii[.gz]`.
    #[arg(long, requires = "gt", conflicts_with = "data")]
    pub pred: Option<PathBuf>,
    /// Directory of ground-truth masks named like the predictions.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Dataset root; scores `--pred-role` against the mid-RT ground truth.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset file used as the prediction with `--data`.
    #[arg(long, value_enum, default_value = "pre-gt-registered")]
    pub pred_role: PredRole,
    /// Layout JSON mapping file roles to `{id}` patterns.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PredRole {
    PreGtRegistered,
    PreGtNative,
    MidGt,
}

impl PredRole {
    fn path(self, c: &PatientCase) -> &Path {
        match self {
            PredRole::PreGtRegistered => &c.pre_gt_registered,
            PredRole::PreGtNative => &c.pre_gt_native,
            PredRole::MidGt => &c.mid_gt,
        }
    }

    fn role(self) -> Role {
        match self {
            PredRole::PreGtRegistered => Role::PreGtRegistered,
            PredRole::PreGtNative => Role::PreGtNative,
            PredRole::MidGt => Role::MidGt,
        }
    }
}

fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .map(String::from)
}

fn list_masks(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        if let Some(id) = case_id(&path) {
            if let Some(prev) = out.insert(id.clone(), path.clone()) {
                bail!(
                    "case {id} has two files: {} and {}",
                    prev.display(),
                    path.display()
                );
            }
        }
    }
    Ok(out)
}

/// (case id, prediction, ground truth); a missing side is an error message.
type Job = (String, Result<(PathBuf, PathBuf), String>);

fn score(jobs: Vec<Job>) -> CohortReport {
    let results = jobs
        .into_par_iter()
        .map(|(id, paths)| {
            let r = paths.and_then(|(p, g)| {
                let (pred, _) = read_mask(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                let (gt, _) = read_mask(&g).map_err(|e| format!("{}: {e}", g.display()))?;
                evaluate_case(&pred, &gt).map_err(|e| e.to_string())
            });
            if let Err(e) = &r {
                log::error!("case {id}: {e}");
            }
            (id, r)
        })
        .collect();
    CohortReport::from_results(results)
}

pub fn run(a: EvaluateArgs, cfg: &RunConfig) -> CmdResult {
    let out = cfg.out(a.out).usage()?;
    let jobs: Vec<Job> = match (a.pred, a.gt) {
        (Some(pred), Some(gt)) => {
            let preds = list_masks(&pred).usage()?;
            let gts = list_masks(&gt).usage()?;
            if gts.is_empty() {
                return Err(Failure::Usage(anyhow!("no masks in {}", gt.display())));
            }
            let mut ids: Vec<&String> = preds.keys().chain(gts.keys()).collect();
            ids.sort();
            ids.dedup();
            ids.into_iter()
                .map(|id| {
                    let r = match (preds.get(id), gts.get(id)) {
                        (Some(p), Some(g)) => Ok((p.clone(), g.clone())),
                        (None, _) => Err("missing prediction".to_string()),
                        (_, None) => Err("missing ground truth".to_string()),
                    };
                    (id.clone(), r)
                })
                .collect()
        }
        _ => {
            let root = cfg.data(a.data).usage()?;
            let layout = cfg.layout(a.layout).usage()?;
            let scan = scan_dataset(&root, &layout)?;
            let mut jobs: Vec<Job> = scan
                .cases
                .iter()
                .map(|c| {
                    (
                        c.id.clone(),
                        Ok((a.pred_role.path(c).to_path_buf(), c.mid_gt.clone())),
                    )
                })
                .collect();
            for c in scan.incomplete {
                let needed = [a.pred_role.role(), Role::MidGt];
                if c.missing.iter().any(|r| needed.contains(r)) {
                    jobs.push((c.id, Err(format!("missing {:?}", c.missing))));
                } else {
                    let dir = &c.dir;
                    let p = layout.resolve(dir, &c.id, a.pred_role.role());
                    let g = layout.resolve(dir, &c.id, Role::MidGt);
                    jobs.push((c.id, Ok((p, g))));
                }
            }
            jobs
        }
    };

    let report = score(jobs);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    let s = &report.summary;
    println!(
        "{} cases ({} failed)  DSC_agg GTVp {:.4}  GTVn {:.4}  mean {:.4}",
        report.n_cases,
        report.n_failed,
        s.gtvp.dsc_agg.unwrap_or(f64::NAN),
        s.gtvn.dsc_agg.unwrap_or(f64::NAN),
        s.mean_dsc_agg.unwrap_or(f64::NAN),
    );
    if report.n_failed > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{} cases failed",
            report.n_failed
        )));
    }
    Ok(())
}
