//! Prior-guided gradient-map preprocessing and segmentation evaluation for
//! longitudinal (pre-RT to mid-RT) 3D tumor volumes.
//!
//! Pipeline: the registered pre-RT mask is split into tumor instances
//! ([`components`]), each instance becomes a randomly expanded box
//! ([`roi`]), and the mid-RT image's Gaussian gradient magnitude inside the
//! boxes forms a second input channel ([`gradmap`]). [`metrics`] and
//! [`stats`] score and analyze segmentations; [`phantom`] produces synthetic
//! cohorts with exact ground truth.

pub mod cohort;
pub mod components;
pub mod gradmap;
pub mod grid;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod roi;
pub mod stats;
pub mod volume;

pub use grid::{Geometry, Grid3, LabelMask3, Volume3};

/// Mask value of the primary tumor.
pub const GTVP: u8 = 1;
/// Mask value of nodal tumors.
pub const GTVN: u8 = 2;

/// The two segmentation targets.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum TumorLabel {
    #[serde(rename = "GTVp")]
    Gtvp,
    #[serde(rename = "GTVn")]
    Gtvn,
}

impl TumorLabel {
    pub const ALL: [TumorLabel; 2] = [TumorLabel::Gtvp, TumorLabel::Gtvn];

    pub fn value(self) -> u8 {
        match self {
            TumorLabel::Gtvp => GTVP,
            TumorLabel::Gtvn => GTVN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TumorLabel::Gtvp => "GTVp",
            TumorLabel::Gtvn => "GTVn",
        }
    }

    pub fn from_value(v: u8) -> Option<Self> {
        match v {
            GTVP => Some(TumorLabel::Gtvp),
            GTVN => Some(TumorLabel::Gtvn),
            _ => None,
        }
    }
}

impl std::fmt::Display for TumorLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
