use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use gradseg_core::cohort::{scan_dataset, split_folds};
use gradseg_core::nifti::write_atomic;

use crate::config::{to_json, RunConfig};
use crate::{CmdResult, Failure, UsageContext};

#[derive(Debug, Args)]
pub struct FoldsArgs {
    /// Dataset root to scan for patients.
    #[arg(long, conflicts_with = "ids")]
    pub data: Option<PathBuf>,
    /// Text file with one patient id per line, instead of scanning.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Layout JSON for scanning.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Random seed; falls back to the config file, then GRADSEG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (folds.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: FoldsArgs, cfg: &RunConfig) -> CmdResult {
    let out = cfg.out(a.out).usage()?;
    let seed = cfg.seed(a.seed).usage()?;
    let k = a.k.or(cfg.k).unwrap_or(5);
    let ids: Vec<String> = match a.ids {
        Some(path) => std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .usage()?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => {
            let root = cfg.data(a.data).usage()?;
            let layout = cfg.layout(a.layout).usage()?;
            let report = scan_dataset(&root, &layout)?;
            for c in &report.incomplete {
                log::warn!(
                    "skipping incomplete patient {} (missing {:?})",
                    c.id,
                    c.missing
                );
            }
            report.cases.into_iter().map(|c| c.id).collect()
        }
    };
    let plan = split_folds(&ids, k, seed).map_err(|e| Failure::Usage(e.into()))?;
    write_atomic(&out, to_json(&plan).as_bytes())?;
    println!("{}", out.display());
    Ok(())
}
