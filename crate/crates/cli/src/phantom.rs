use std::path::PathBuf;

use clap::Args;
use gradseg_core::phantom::{generate_cohort, sample_cohort, CohortSpec};

use crate::config::RunConfig;
use crate::{CmdResult, UsageContext};

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Number of patients.
    #[arg(long)]
    pub n: usize,
    /// Random seed; falls back to the config file, then GRADSEG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Patients whose GTVn disappears by mid-RT.
    #[arg(long, default_value_t = 0)]
    pub vanishing: usize,
    /// Maximum registration shift of each prior tumor, in voxels.
    #[arg(long)]
    pub jitter: Option<usize>,
    /// Shrinkage factor range, as LO,HI.
    #[arg(long, value_delimiter = ',')]
    pub shrinkage: Option<Vec<f64>>,
    /// Gaussian noise sigma.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Grid shape, as NX,NY,NZ.
    #[arg(long, value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,
    /// Voxel spacing in mm, as X,Y,Z.
    #[arg(long, value_delimiter = ',')]
    pub spacing: Option<Vec<f64>>,
}

pub fn run(a: PhantomArgs, cfg: &RunConfig) -> CmdResult {
    let out = cfg.out(a.out).usage()?;
    let seed = cfg.seed(a.seed).usage()?;
    let mut spec = CohortSpec {
        vanishing: a.vanishing,
        ..CohortSpec::default()
    };
    if let Some(j) = a.jitter {
        spec.jitter = j;
    }
    if let Some(s) = a.shrinkage {
        spec.shrinkage = fixed(&s, "--shrinkage").usage()?;
    }
    if let Some(n) = a.noise {
        spec.noise_sigma = n;
    }
    if let Some(s) = a.shape {
        spec.shape = fixed(&s, "--shape").usage()?;
    }
    if let Some(s) = a.spacing.or_else(|| cfg.target_spacing.map(Vec::from)) {
        spec.spacing = fixed(&s, "--spacing").usage()?;
    }
    // reject an impossible spec before touching the disk
    sample_cohort(a.n, &spec, seed).usage()?;
    let manifest = generate_cohort(a.n, &spec, seed, &out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn fixed<T: Copy + std::fmt::Debug, const N: usize>(v: &[T], flag: &str) -> anyhow::Result<[T; N]> {
    <[T; N]>::try_from(v)
        .map_err(|_| anyhow::anyhow!("{flag} needs {N} comma-separated values, got {v:?}"))
}
