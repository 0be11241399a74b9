use std::path::PathBuf;

use clap::Args;
use gradseg_core::cohort::{compute_volume_manifest, scan_dataset};
use gradseg_core::nifti::write_atomic;

use crate::config::RunConfig;
use crate::{CmdResult, UsageContext};

#[derive(Debug, Args)]
pub struct VolumesArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Layout JSON mapping file roles to `{id}` patterns.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Output file (volumes.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: VolumesArgs, cfg: &RunConfig) -> CmdResult {
    let root = cfg.data(a.data).usage()?;
    let out = cfg.out(a.out).usage()?;
    let layout = cfg.layout(a.layout).usage()?;
    let scan = scan_dataset(&root, &layout)?;
    let manifest = compute_volume_manifest(&scan.cases)?;
    write_atomic(&out, manifest.to_json().as_bytes())?;
    println!("{}", out.display());
    Ok(())
}
