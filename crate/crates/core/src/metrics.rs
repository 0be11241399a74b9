//! Segmentation evaluation: Dice, aggregated Dice, HD95 and mean surface
//! distance.
//!
//! Conventions:
//! - foreground is any nonzero voxel of the (per-label) binary mask;
//! - DSC is 1.0 when both masks are empty and 0.0 when exactly one is;
//! - surface voxels are foreground voxels with a 6-neighbour that is
//!   background or outside the grid;
//! - surface distances run between voxel centres in mm, from every surface
//!   voxel of one mask to the nearest surface voxel of the other, pooled over
//!   both directions. HD95 is the 95th percentile of the pool (linear
//!   interpolation between order statistics), MSD its mean. Both are
//!   undefined when either surface is empty.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Geometry, LabelMask3};
use crate::TumorLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("geometry mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    GeometryMismatch {
        pred: Box<Geometry>,
        gt: Box<Geometry>,
    },
    #[error("empty cohort")]
    EmptyCohort,
}

fn check_geometry(pred: &LabelMask3, gt: &LabelMask3) -> Result<(), MetricsError> {
    if pred.geometry().matches(gt.geometry()) {
        Ok(())
    } else {
        Err(MetricsError::GeometryMismatch {
            pred: Box::new(pred.geometry().clone()),
            gt: Box::new(gt.geometry().clone()),
        })
    }
}

/// Voxel tallies behind a Dice score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection: u64,
    pub pred: u64,
    pub gt: u64,
}

impl Overlap {
    pub fn dsc(&self) -> f64 {
        let denom = self.pred + self.gt;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

impl std::ops::Add for Overlap {
    type Output = Overlap;
    fn add(self, o: Overlap) -> Overlap {
        Overlap {
            intersection: self.intersection + o.intersection,
            pred: self.pred + o.pred,
            gt: self.gt + o.gt,
        }
    }
}

pub fn overlap(pred: &LabelMask3, gt: &LabelMask3) -> Result<Overlap, MetricsError> {
    check_geometry(pred, gt)?;
    let mut t = Overlap::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p != 0, g != 0);
        t.pred += u64::from(p);
        t.gt += u64::from(g);
        t.intersection += u64::from(p && g);
    }
    Ok(t)
}

/// `2|P∩G| / (|P| + |G|)`.
pub fn dsc(pred: &LabelMask3, gt: &LabelMask3) -> Result<f64, MetricsError> {
    overlap(pred, gt).map(|o| o.dsc())
}

/// Pooled Dice over a cohort: `2 Σ|Pᵢ∩Gᵢ| / Σ(|Pᵢ| + |Gᵢ|)`.
pub fn dsc_agg(tallies: &[Overlap]) -> Result<f64, MetricsError> {
    if tallies.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    Ok(tallies
        .iter()
        .copied()
        .fold(Overlap::default(), |a, b| a + b)
        .dsc())
}

/// Foreground voxels with at least one face neighbour outside the mask.
pub fn surface_voxels(m: &LabelMask3) -> Vec<[usize; 3]> {
    let g = m.geometry();
    let [nx, ny, nz] = g.shape;
    let d = m.data();
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if d[g.index(i, j, k)] == 0 {
                    continue;
                }
                let boundary = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || d[g.index(i - 1, j, k)] == 0
                    || d[g.index(i + 1, j, k)] == 0
                    || d[g.index(i, j - 1, k)] == 0
                    || d[g.index(i, j + 1, k)] == 0
                    || d[g.index(i, j, k - 1)] == 0
                    || d[g.index(i, j, k + 1)] == 0;
                if boundary {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Lower-envelope squared distance transform of one line (Felzenszwalb and
/// Huttenlocher), with sample positions `q * step`.
fn edt_line(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * step;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p)))
                        / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut seg = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while seg + 1 < v.len() && z[seg + 1] < pos(q) {
            seg += 1;
        }
        let p = v[seg];
        let d = pos(q) - pos(p);
        *slot = d * d + f[p];
    }
}

/// Squared Euclidean distance in mm from every voxel centre to the nearest
/// site (`true` in `sites`). Infinite everywhere when there are no sites.
pub fn squared_distance_transform(sites: &[bool], geometry: &Geometry) -> Vec<f64> {
    let shape = geometry.shape;
    let spacing = geometry.spacing;
    let mut buf: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [1, shape[0], shape[0] * shape[1]];
    for axis in 0..3 {
        let n = shape[axis];
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let lines: Vec<usize> = (0..shape[a1] * shape[a2])
            .map(|l| (l % shape[a1]) * strides[a1] + (l / shape[a1]) * strides[a2])
            .collect();
        let stride = strides[axis];
        let results: Vec<Vec<f64>> = lines
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(v, z), &base| {
                    let f: Vec<f64> = (0..n).map(|q| buf[base + q * stride]).collect();
                    let mut out = vec![0.0; n];
                    edt_line(&f, spacing[axis], &mut out, v, z);
                    out
                },
            )
            .collect();
        for (base, line) in lines.iter().zip(results) {
            for (q, val) in line.into_iter().enumerate() {
                buf[base + q * stride] = val;
            }
        }
    }
    buf
}

/// Distances in mm from each surface voxel of `from` to the nearest surface
/// voxel of `to`, or `None` when either surface is empty.
pub fn directed_surface_distances(from: &LabelMask3, to: &LabelMask3) -> Option<Vec<f64>> {
    let src = surface_voxels(from);
    let dst = surface_voxels(to);
    if src.is_empty() || dst.is_empty() {
        return None;
    }
    let g = to.geometry();
    let mut sites = vec![false; g.len()];
    for v in &dst {
        sites[g.index(v[0], v[1], v[2])] = true;
    }
    let dt = squared_distance_transform(&sites, g);
    Some(
        src.iter()
            .map(|v| dt[g.index(v[0], v[1], v[2])].sqrt())
            .collect(),
    )
}

/// Pooled bidirectional surface distances, `None` if either surface is empty.
pub fn pooled_surface_distances(
    pred: &LabelMask3,
    gt: &LabelMask3,
) -> Result<Option<Vec<f64>>, MetricsError> {
    check_geometry(pred, gt)?;
    let Some(mut ab) = directed_surface_distances(pred, gt) else {
        return Ok(None);
    };
    let ba = directed_surface_distances(gt, pred).expect("both surfaces non-empty");
    ab.extend(ba);
    Ok(Some(ab))
}

/// Percentile with linear interpolation between closest ranks:
/// rank `p/100 · (n-1)` in the sorted sample.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let t = rank - lo as f64;
    Some(v[lo] + (v[hi] - v[lo]) * t)
}

pub fn hd95(pred: &LabelMask3, gt: &LabelMask3) -> Result<Option<f64>, MetricsError> {
    Ok(pooled_surface_distances(pred, gt)?.and_then(|d| percentile(&d, 95.0)))
}

pub fn msd(pred: &LabelMask3, gt: &LabelMask3) -> Result<Option<f64>, MetricsError> {
    Ok(pooled_surface_distances(pred, gt)?.map(|d| d.iter().sum::<f64>() / d.len() as f64))
}

/// Scores of one label in one case. Distances are `None` (serialized as
/// `null`) when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub dsc: f64,
    pub hd95_mm: Option<f64>,
    pub msd_mm: Option<f64>,
    pub pred_volume_cc: f64,
    pub gt_volume_cc: f64,
    pub intersection_voxels: u64,
    pub pred_voxels: u64,
    pub gt_voxels: u64,
}

impl LabelMetrics {
    pub fn overlap(&self) -> Overlap {
        Overlap {
            intersection: self.intersection_voxels,
            pred: self.pred_voxels,
            gt: self.gt_voxels,
        }
    }
}

pub fn evaluate_label(
    pred: &LabelMask3,
    gt: &LabelMask3,
    label: TumorLabel,
) -> Result<LabelMetrics, MetricsError> {
    check_geometry(pred, gt)?;
    let p = pred.select(label.value());
    let g = gt.select(label.value());
    let tally = overlap(&p, &g)?;
    let distances = pooled_surface_distances(&p, &g)?;
    let cc = pred.geometry().voxel_volume_mm3() / 1000.0;
    Ok(LabelMetrics {
        dsc: tally.dsc(),
        hd95_mm: distances.as_ref().and_then(|d| percentile(d, 95.0)),
        msd_mm: distances.map(|d| d.iter().sum::<f64>() / d.len() as f64),
        pred_volume_cc: tally.pred as f64 * cc,
        gt_volume_cc: tally.gt as f64 * cc,
        intersection_voxels: tally.intersection,
        pred_voxels: tally.pred,
        gt_voxels: tally.gt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    #[serde(rename = "GTVp")]
    pub gtvp: LabelMetrics,
    #[serde(rename = "GTVn")]
    pub gtvn: LabelMetrics,
}

impl CaseMetrics {
    pub fn label(&self, label: TumorLabel) -> &LabelMetrics {
        match label {
            TumorLabel::Gtvp => &self.gtvp,
            TumorLabel::Gtvn => &self.gtvn,
        }
    }
}

pub fn evaluate_case(pred: &LabelMask3, gt: &LabelMask3) -> Result<CaseMetrics, MetricsError> {
    Ok(CaseMetrics {
        gtvp: evaluate_label(pred, gt, TumorLabel::Gtvp)?,
        gtvn: evaluate_label(pred, gt, TumorLabel::Gtvn)?,
    })
}

/// One case of a cohort; failed cases carry their error instead of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub metrics: Option<CaseMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub n_cases: usize,
    pub dsc_agg: Option<f64>,
    pub mean_dsc: Option<f64>,
    pub mean_hd95_mm: Option<f64>,
    pub mean_msd_mm: Option<f64>,
    /// Cases excluded from the distance means because a surface was empty.
    pub hd95_undefined: usize,
    pub msd_undefined: usize,
    /// Pooled tallies; `dsc_agg` is recomputable from these.
    pub intersection_voxels: u64,
    pub pred_voxels: u64,
    pub gt_voxels: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl LabelSummary {
    fn from_cases<'a>(cases: impl Iterator<Item = &'a LabelMetrics> + Clone) -> Self {
        let n_cases = cases.clone().count();
        let pooled = cases
            .clone()
            .map(LabelMetrics::overlap)
            .fold(Overlap::default(), |a, b| a + b);
        LabelSummary {
            n_cases,
            dsc_agg: (n_cases > 0).then(|| pooled.dsc()),
            mean_dsc: mean(cases.clone().map(|c| c.dsc)),
            mean_hd95_mm: mean(cases.clone().filter_map(|c| c.hd95_mm)),
            mean_msd_mm: mean(cases.clone().filter_map(|c| c.msd_mm)),
            hd95_undefined: cases.clone().filter(|c| c.hd95_mm.is_none()).count(),
            msd_undefined: cases.filter(|c| c.msd_mm.is_none()).count(),
            intersection_voxels: pooled.intersection,
            pred_voxels: pooled.pred,
            gt_voxels: pooled.gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    #[serde(rename = "GTVp")]
    pub gtvp: LabelSummary,
    #[serde(rename = "GTVn")]
    pub gtvn: LabelSummary,
    /// Mean of the two per-label `dsc_agg` values.
    pub mean_dsc_agg: Option<f64>,
}

impl CohortSummary {
    pub fn label(&self, label: TumorLabel) -> &LabelSummary {
        match label {
            TumorLabel::Gtvp => &self.gtvp,
            TumorLabel::Gtvn => &self.gtvn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub n_cases: usize,
    pub n_failed: usize,
    pub summary: CohortSummary,
    pub cases: Vec<CaseRecord>,
}

impl CohortReport {
    /// Build a report from per-case outcomes; cases are sorted by id.
    pub fn from_results(results: Vec<(String, Result<CaseMetrics, String>)>) -> Self {
        let mut cases: Vec<CaseRecord> = results
            .into_iter()
            .map(|(id, r)| match r {
                Ok(m) => CaseRecord {
                    id,
                    metrics: Some(m),
                    error: None,
                },
                Err(e) => CaseRecord {
                    id,
                    metrics: None,
                    error: Some(e),
                },
            })
            .collect();
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = summarize(&cases);
        CohortReport {
            n_cases: cases.len(),
            n_failed: cases.iter().filter(|c| c.error.is_some()).count(),
            summary,
            cases,
        }
    }

    /// Aggregates recomputed from the stored per-case tallies.
    pub fn recompute_summary(&self) -> CohortSummary {
        summarize(&self.cases)
    }

    pub fn successful(&self) -> impl Iterator<Item = (&str, &CaseMetrics)> {
        self.cases
            .iter()
            .filter_map(|c| c.metrics.as_ref().map(|m| (c.id.as_str(), m)))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn read_json(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(std::io::Error::other)
    }

    /// One row per case per label; undefined distances are empty fields.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "case_id",
            "label",
            "dsc",
            "hd95_mm",
            "msd_mm",
            "pred_volume_cc",
            "gt_volume_cc",
            "intersection_voxels",
            "pred_voxels",
            "gt_voxels",
            "error",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for case in &self.cases {
            for label in TumorLabel::ALL {
                let row: Vec<String> = match &case.metrics {
                    Some(m) => {
                        let l = m.label(label);
                        vec![
                            case.id.clone(),
                            label.to_string(),
                            l.dsc.to_string(),
                            opt(l.hd95_mm),
                            opt(l.msd_mm),
                            l.pred_volume_cc.to_string(),
                            l.gt_volume_cc.to_string(),
                            l.intersection_voxels.to_string(),
                            l.pred_voxels.to_string(),
                            l.gt_voxels.to_string(),
                            String::new(),
                        ]
                    }
                    None => {
                        let mut r = vec![case.id.clone(), label.to_string()];
                        r.extend(std::iter::repeat_n(String::new(), 8));
                        r.push(case.error.clone().unwrap_or_default());
                        r
                    }
                };
                w.write_record(&row).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn summarize(cases: &[CaseRecord]) -> CohortSummary {
    let ok: Vec<&CaseMetrics> = cases.iter().filter_map(|c| c.metrics.as_ref()).collect();
    let gtvp = LabelSummary::from_cases(ok.iter().map(|m| &m.gtvp));
    let gtvn = LabelSummary::from_cases(ok.iter().map(|m| &m.gtvn));
    let mean_dsc_agg = match (gtvp.dsc_agg, gtvn.dsc_agg) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    CohortSummary {
        gtvp,
        gtvn,
        mean_dsc_agg,
    }
}

/// A prediction and its ground truth for one case.
pub struct CasePair {
    pub id: String,
    pub pred: LabelMask3,
    pub gt: LabelMask3,
}

/// Score every case (in parallel); a failing case is recorded with its error
/// and does not abort the cohort.
pub fn evaluate_cohort(pairs: &[CasePair]) -> CohortReport {
    let results = pairs
        .par_iter()
        .map(|p| {
            (
                p.id.clone(),
                evaluate_case(&p.pred, &p.gt).map_err(|e| e.to_string()),
            )
        })
        .collect();
    CohortReport::from_results(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(shape: [usize; 3], spacing: [f64; 3]) -> Geometry {
        Geometry::new(shape, spacing).unwrap()
    }

    fn mask(shape: [usize; 3], spacing: [f64; 3], vox: &[[usize; 3]], label: u8) -> LabelMask3 {
        let mut m = LabelMask3::filled(geom(shape, spacing), 0);
        for v in vox {
            *m.get_mut(v[0], v[1], v[2]) = label;
        }
        m
    }

    #[test]
    fn dsc_examples() {
        let a = mask(
            [6, 6, 1],
            [1.0; 3],
            &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]],
            1,
        );
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        let empty = mask([6, 6, 1], [1.0; 3], &[], 1);
        assert_eq!(dsc(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dsc(&a, &empty).unwrap(), 0.0);
        assert_eq!(dsc(&empty, &a).unwrap(), 0.0);
        let shifted = mask(
            [6, 6, 1],
            [1.0; 3],
            &[[1, 0, 0], [2, 0, 0], [1, 1, 0], [2, 1, 0]],
            1,
        );
        assert_eq!(dsc(&a, &shifted).unwrap(), 0.5);
        let other = mask([6, 6, 2], [1.0; 3], &[], 1);
        assert!(matches!(
            dsc(&a, &other),
            Err(MetricsError::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn dsc_agg_examples() {
        let c1 = Overlap {
            intersection: 2,
            pred: 4,
            gt: 4,
        };
        let c2 = Overlap {
            intersection: 0,
            pred: 2,
            gt: 0,
        };
        assert_eq!(dsc_agg(&[c1]).unwrap(), c1.dsc());
        assert_eq!(dsc_agg(&[c1, c2]).unwrap(), 0.4);
        let missed = Overlap {
            intersection: 0,
            pred: 0,
            gt: 5,
        };
        assert_eq!(dsc_agg(&[missed, missed]).unwrap(), 0.0);
        assert_eq!(dsc_agg(&[]), Err(MetricsError::EmptyCohort));
        assert_eq!(dsc_agg(&[Overlap::default()]).unwrap(), 1.0);
    }

    #[test]
    fn surface_counts() {
        let single = mask([5, 5, 5], [1.0; 3], &[[2, 2, 2]], 1);
        assert_eq!(surface_voxels(&single), vec![[2, 2, 2]]);
        let mut cube = Vec::new();
        for k in 1..4 {
            for j in 1..4 {
                for i in 1..4 {
                    cube.push([i, j, k]);
                }
            }
        }
        let m = mask([5, 5, 5], [1.0; 3], &cube, 1);
        let s = surface_voxels(&m);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&[2, 2, 2]));
        // a full grid is all surface only on its border
        let full = LabelMask3::filled(geom([3, 3, 3], [1.0; 3]), 1);
        assert_eq!(surface_voxels(&full).len(), 26);
    }

    #[test]
    fn distance_examples() {
        let a = mask([8, 3, 3], [0.5, 1.0, 1.0], &[[1, 1, 1]], 1);
        let b = mask([8, 3, 3], [0.5, 1.0, 1.0], &[[4, 1, 1]], 1);
        assert_eq!(hd95(&a, &b).unwrap(), Some(1.5));
        assert_eq!(msd(&a, &b).unwrap(), Some(1.5));
        assert_eq!(hd95(&a, &a).unwrap(), Some(0.0));
        assert_eq!(msd(&a, &a).unwrap(), Some(0.0));
        let empty = mask([8, 3, 3], [0.5, 1.0, 1.0], &[], 1);
        assert_eq!(hd95(&a, &empty).unwrap(), None);
        assert_eq!(msd(&empty, &empty).unwrap(), None);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[], 95.0), None);
        assert_eq!(percentile(&[3.0], 95.0), Some(3.0));
        let v: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((percentile(&v, 95.0).unwrap() - 9.5).abs() < 1e-12);
        assert_eq!(percentile(&[4.0, 1.0], 50.0), Some(2.5));
    }

    #[test]
    fn edt_without_sites_is_infinite() {
        let g = geom([3, 2, 2], [1.0; 3]);
        assert!(squared_distance_transform(&[false; 12], &g)
            .iter()
            .all(|d| d.is_infinite()));
    }

    #[test]
    fn perfect_cohort_and_failures() {
        let g = geom([6, 6, 6], [1.0; 3]);
        let gt = LabelMask3::from_fn(g.clone(), |i, j, _| {
            if i < 2 {
                1
            } else if j > 3 {
                2
            } else {
                0
            }
        });
        let pairs = vec![
            CasePair {
                id: "b".into(),
                pred: gt.clone(),
                gt: gt.clone(),
            },
            CasePair {
                id: "a".into(),
                pred: gt.clone(),
                gt: gt.clone(),
            },
            CasePair {
                id: "c".into(),
                pred: LabelMask3::filled(geom([5, 6, 6], [1.0; 3]), 0),
                gt: gt.clone(),
            },
        ];
        let r = evaluate_cohort(&pairs);
        assert_eq!(
            r.cases.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!((r.n_cases, r.n_failed), (3, 1));
        assert!(r.cases[2].error.as_ref().unwrap().contains("geometry"));
        for l in TumorLabel::ALL {
            let s = r.summary.label(l);
            assert_eq!(s.n_cases, 2);
            assert_eq!(s.dsc_agg, Some(1.0));
            assert_eq!(s.mean_hd95_mm, Some(0.0));
            assert_eq!(s.mean_msd_mm, Some(0.0));
        }
        assert_eq!(r.summary.mean_dsc_agg, Some(1.0));
        let back = CohortReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.recompute_summary(), r.summary);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
    }

    #[test]
    fn undefined_distances_are_excluded_and_counted() {
        let g = geom([6, 6, 6], [1.0; 3]);
        let gt = LabelMask3::from_fn(g.clone(), |i, _, _| u8::from(i < 2));
        let pred = LabelMask3::filled(g, 0);
        let r = evaluate_cohort(&[
            CasePair {
                id: "miss".into(),
                pred,
                gt: gt.clone(),
            },
            CasePair {
                id: "hit".into(),
                pred: gt.clone(),
                gt,
            },
        ]);
        let p = &r.summary.gtvp;
        assert_eq!(p.hd95_undefined, 1);
        assert_eq!(p.mean_hd95_mm, Some(0.0));
        assert_eq!(p.mean_dsc, Some(0.5));
        // GTVn absent everywhere: both-empty convention
        assert_eq!(r.summary.gtvn.dsc_agg, Some(1.0));
        assert_eq!(r.summary.gtvn.hd95_undefined, 2);
        assert_eq!(r.summary.gtvn.mean_hd95_mm, None);
        let csv = r.to_csv();
        assert!(csv.contains("miss,GTVp,0,,,"));
    }
}
