//! Run configuration: defaults, then the JSON config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gradseg_core::cohort::LayoutSpec;
use gradseg_core::components::Connectivity;
use gradseg_core::gradmap::{GradMapConfig, SampleConfig};
use gradseg_core::roi::Margins;
use gradseg_core::volume::ResampleSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "GRADSEG_SEED";

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub margins: Option<[usize; 2]>,
    pub sigma: Option<f64>,
    pub clip_scale: Option<f64>,
    /// (x, y, z) in mm.
    pub target_spacing: Option<[f64; 3]>,
    pub interpolation_order: Option<u8>,
    pub connectivity: Option<Connectivity>,
    pub k: Option<usize>,
    pub layout: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Flag value, else config value, else `GRADSEG_SEED`, else 0.
    pub fn seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn data(&self, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        match flag.or_else(|| self.data.clone()) {
            Some(p) => Ok(p),
            None => bail!("a dataset root is required (--data or \"data\" in the config)"),
        }
    }

    pub fn out(&self, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        match flag.or_else(|| self.out.clone()) {
            Some(p) => Ok(p),
            None => bail!("an output location is required (--out or \"out\" in the config)"),
        }
    }

    pub fn layout(&self, flag: Option<PathBuf>) -> anyhow::Result<LayoutSpec> {
        match flag.or_else(|| self.layout.clone()) {
            Some(p) => {
                LayoutSpec::read_json(&p).with_context(|| format!("reading layout {}", p.display()))
            }
            None => Ok(LayoutSpec::default()),
        }
    }
}

/// Flags shared by the commands that build samples.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ProcessingFlags {
    /// Face margin range in voxels, as LO,HI.
    #[arg(long, value_delimiter = ',')]
    pub margins: Option<Vec<usize>>,
    /// Gaussian sigma of the gradient map, in voxels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Gradient magnitude mapped to 1.0 before clipping.
    #[arg(long)]
    pub clip_scale: Option<f64>,
    /// Target spacing in mm, as X,Y,Z.
    #[arg(long, value_delimiter = ',')]
    pub spacing: Option<Vec<f64>>,
    /// Image interpolation order (0, 1 or 3).
    #[arg(long)]
    pub order: Option<u8>,
    /// Voxel connectivity for prior components (6, 18 or 26).
    #[arg(long)]
    pub connectivity: Option<Connectivity>,
}

/// Every parameter that affects preprocessing output. Its hash goes into the
/// run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingConfig {
    pub seed: u64,
    pub sample: SampleConfig,
    pub target_spacing: [f64; 3],
    pub interpolation_order: u8,
}

pub const DEFAULT_SPACING: [f64; 3] = [0.5, 0.5, 1.2];

impl ProcessingConfig {
    pub fn resolve(cfg: &RunConfig, flags: &ProcessingFlags, seed: u64) -> anyhow::Result<Self> {
        let margins = match flags.margins.as_deref() {
            Some(&[lo, hi]) => [lo, hi],
            Some(other) => bail!("--margins needs two values, got {other:?}"),
            None => cfg.margins.unwrap_or([2, 6]),
        };
        let margins = Margins::new(margins[0], margins[1]).map_err(anyhow::Error::msg)?;
        let gradient = GradMapConfig::new(
            flags.sigma.or(cfg.sigma).unwrap_or(1.0),
            flags.clip_scale.or(cfg.clip_scale).unwrap_or(1.0),
        )?;
        let target_spacing = match flags.spacing.as_deref() {
            Some(&[x, y, z]) => [x, y, z],
            Some(other) => bail!("--spacing needs three values, got {other:?}"),
            None => cfg.target_spacing.unwrap_or(DEFAULT_SPACING),
        };
        let interpolation_order = flags.order.or(cfg.interpolation_order).unwrap_or(3);
        // validates spacing and order
        ResampleSpec::new(target_spacing, interpolation_order)?;
        Ok(Self {
            seed,
            sample: SampleConfig {
                gradient,
                margins,
                connectivity: flags.connectivity.or(cfg.connectivity).unwrap_or_default(),
            },
            target_spacing,
            interpolation_order,
        })
    }

    pub fn resample_spec(&self) -> ResampleSpec {
        ResampleSpec::new(self.target_spacing, self.interpolation_order).expect("validated")
    }

    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-sample ROI seed: the first eight bytes of
/// `sha256("{seed}:{case_id}:{phase}")`, little-endian.
pub fn sample_seed(seed: u64, case_id: &str, phase: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{case_id}:{phase}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}
