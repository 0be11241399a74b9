//! Connected-component labeling of tumor masks.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Geometry, LabelMask3};
use crate::roi::BoundingBox3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComponentError {
    #[error("unknown component id {id} (set has {count})")]
    UnknownComponent { id: usize, count: usize },
    #[error("connectivity must be 6, 18 or 26, got {0}")]
    BadConnectivity(String),
}

/// Voxel neighbourhood used for adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Shared faces.
    Six,
    /// Shared faces or edges.
    Eighteen,
    /// Shared faces, edges or corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::Eighteen => nonzero == 1 || nonzero == 2,
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Whether two distinct voxels are neighbours.
    pub fn adjacent(self, a: [usize; 3], b: [usize; 3]) -> bool {
        let d: Vec<usize> = (0..3).map(|n| a[n].abs_diff(b[n])).collect();
        if d.iter().any(|&x| x > 1) {
            return false;
        }
        let nonzero = d.iter().filter(|&&x| x == 1).count();
        match self {
            Connectivity::Six => nonzero == 1,
            Connectivity::Eighteen => (1..=2).contains(&nonzero),
            Connectivity::TwentySix => nonzero >= 1,
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = ComponentError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(ComponentError::BadConnectivity(other.to_string())),
        }
    }
}

impl FromStr for Connectivity {
    type Err = ComponentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .map_err(|_| ComponentError::BadConnectivity(s.to_string()))
            .and_then(Connectivity::try_from)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentInfo {
    pub voxel_count: usize,
    pub bbox: BoundingBox3,
}

/// Instance labeling of one mask label.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    geometry: Geometry,
    /// 0 background, `1..=count` component ids.
    labeled: Vec<u32>,
    source_label: u8,
    components: Vec<ComponentInfo>,
}

impl ComponentSet {
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn source_label(&self) -> u8 {
        self.source_label
    }

    pub fn labeled(&self) -> &[u32] {
        &self.labeled
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Components in id order; entry `n` is id `n + 1`.
    pub fn components(&self) -> &[ComponentInfo] {
        &self.components
    }

    pub fn component(&self, id: usize) -> Result<&ComponentInfo, ComponentError> {
        if id == 0 || id > self.count() {
            return Err(ComponentError::UnknownComponent {
                id,
                count: self.count(),
            });
        }
        Ok(&self.components[id - 1])
    }

    /// Minimal closed voxel box around component `id` (1-based).
    pub fn tight_bbox(&self, id: usize) -> Result<BoundingBox3, ComponentError> {
        self.component(id).map(|c| c.bbox)
    }
}

/// Label the connected regions of voxels equal to `label`.
///
/// Ids are assigned in ascending order of each component's smallest linear
/// index, so the output does not depend on traversal details.
pub fn label_components(m: &LabelMask3, label: u8, connectivity: Connectivity) -> ComponentSet {
    let g = m.geometry();
    let [nx, ny, nz] = g.shape;
    let data = m.data();
    let offsets = connectivity.offsets();
    let mut labeled = vec![0u32; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..data.len() {
        if data[seed] != label || labeled[seed] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        let [si, sj, sk] = g.coords(seed);
        let mut info = ComponentInfo {
            voxel_count: 0,
            bbox: BoundingBox3::new([si, sj, sk], [si, sj, sk], label),
        };
        labeled[seed] = id;
        queue.push_back(seed);
        while let Some(idx) = queue.pop_front() {
            let c = g.coords(idx);
            info.voxel_count += 1;
            info.bbox.include(c);
            for off in &offsets {
                let ni = c[0] as i64 + off[0];
                let nj = c[1] as i64 + off[1];
                let nk = c[2] as i64 + off[2];
                if ni < 0 || nj < 0 || nk < 0 {
                    continue;
                }
                let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                if ni >= nx || nj >= ny || nk >= nz {
                    continue;
                }
                let n = g.index(ni, nj, nk);
                if data[n] == label && labeled[n] == 0 {
                    labeled[n] = id;
                    queue.push_back(n);
                }
            }
        }
        components.push(info);
    }

    ComponentSet {
        geometry: g.clone(),
        labeled,
        source_label: label,
        components,
    }
}
