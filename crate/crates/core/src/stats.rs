//! Nonparametric statistics: Wilcoxon signed-rank test, Spearman rank
//! correlation, and volume-binned correlation of volume change against Dice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::VolumeManifest;
use crate::metrics::CohortReport;
use crate::TumorLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("bin edges must be finite and strictly ascending: {0:?}")]
    InvalidEdges(Vec<f64>),
}

/// Largest effective sample size for which the exact null distribution is
/// used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub ids: Vec<String>,
    pub values_a: Vec<f64>,
    pub values_b: Vec<f64>,
}

impl PairedSample {
    pub fn new(
        ids: Vec<String>,
        values_a: Vec<f64>,
        values_b: Vec<f64>,
    ) -> Result<Self, StatsError> {
        if values_a.len() != values_b.len() || ids.len() != values_a.len() {
            return Err(StatsError::DegenerateInput(format!(
                "length mismatch: {} ids, {} vs {} values",
                ids.len(),
                values_a.len(),
                values_b.len()
            )));
        }
        if values_a.is_empty() {
            return Err(StatsError::DegenerateInput("empty sample".into()));
        }
        if values_a.iter().chain(&values_b).any(|v| !v.is_finite()) {
            return Err(StatsError::DegenerateInput("non-finite value".into()));
        }
        Ok(Self {
            ids,
            values_a,
            values_b,
        })
    }

    /// Unlabelled pairs, ids are their positions.
    pub fn from_values(values_a: Vec<f64>, values_b: Vec<f64>) -> Result<Self, StatsError> {
        let ids = (0..values_a.len()).map(|i| i.to_string()).collect();
        Self::new(ids, values_a, values_b)
    }
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    pub method: PValueMethod,
}

/// Two-sided Wilcoxon signed-rank test of `a - b`.
///
/// Zero differences are dropped and tied magnitudes get mid-ranks. Up to
/// [`EXACT_MAX_N`] remaining pairs the p-value comes from the exact
/// distribution over all `2^n` sign assignments of the observed ranks;
/// beyond that a normal approximation is used.
pub fn wilcoxon_signed_rank(s: &PairedSample) -> Result<WilcoxonResult, StatsError> {
    let diffs: Vec<f64> = s
        .values_a
        .iter()
        .zip(&s.values_b)
        .map(|(a, b)| a - b)
        .filter(|&d| d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(StatsError::AllZeroDifferences);
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&magnitudes);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), PValueMethod::Exact)
    } else {
        (normal_p(&magnitudes, w_plus, n), PValueMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        p_two_sided: p,
        n_effective: n,
        method,
    })
}

/// Exact two-sided p from the null distribution of `W+`. Mid-ranks are
/// multiples of 1/2, so the distribution is tabulated over doubled ranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let total = 2f64.powi(ranks.len() as i32);
    let obs = (2.0 * w_plus).round() as usize;
    let lower: u64 = counts[..=obs].iter().sum();
    let upper: u64 = counts[obs..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total).min(1.0)
}

fn normal_p(magnitudes: &[f64], w_plus: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(StatsError::DegenerateInput("need at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::DegenerateInput("non-finite value".into()));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    pearson(&rx, &ry)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Tumor volume change for one case and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeChangeRecord {
    pub case_id: String,
    pub label: TumorLabel,
    pub pre_cc: f64,
    pub mid_cc: f64,
    /// `pre_cc - mid_cc`.
    pub delta_cc: f64,
    pub dsc: f64,
}

impl VolumeChangeRecord {
    pub fn new(
        case_id: impl Into<String>,
        label: TumorLabel,
        pre_cc: f64,
        mid_cc: f64,
        dsc: f64,
    ) -> Self {
        Self {
            case_id: case_id.into(),
            label,
            pre_cc,
            mid_cc,
            delta_cc: pre_cc - mid_cc,
            dsc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordGroup {
    /// Inclusive lower bound; `None` for the underflow group.
    pub lo: Option<f64>,
    /// Exclusive upper bound; `None` for the overflow group.
    pub hi: Option<f64>,
    pub n: usize,
    /// `spearman(delta_cc, dsc)`, absent with fewer than 2 records or
    /// constant data.
    pub spearman_rho: Option<f64>,
    pub records: Vec<VolumeChangeRecord>,
}

impl RecordGroup {
    fn new(lo: Option<f64>, hi: Option<f64>, records: Vec<VolumeChangeRecord>) -> Self {
        let delta: Vec<f64> = records.iter().map(|r| r.delta_cc).collect();
        let dsc: Vec<f64> = records.iter().map(|r| r.dsc).collect();
        Self {
            lo,
            hi,
            n: records.len(),
            spearman_rho: spearman(&delta, &dsc).ok(),
            records,
        }
    }
}

/// Records partitioned by mid-RT volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBinning {
    pub edges: Vec<f64>,
    /// `mid_cc` below the first edge (and nonzero).
    pub underflow: RecordGroup,
    /// Half-open bins `[edges[i], edges[i+1])`.
    pub bins: Vec<RecordGroup>,
    /// `mid_cc` at or above the last edge.
    pub overflow: RecordGroup,
    /// Tumors absent at mid-RT (`mid_cc == 0`), held apart from every bin.
    pub zero_mid_volume: Vec<VolumeChangeRecord>,
}

impl VolumeBinning {
    /// The bin whose half-open interval contains `cc`.
    pub fn bin_containing(&self, cc: f64) -> Option<&RecordGroup> {
        self.bins
            .iter()
            .find(|b| b.lo.is_some_and(|lo| lo <= cc) && b.hi.is_some_and(|hi| cc < hi))
    }
}

pub fn bin_volume_records(
    records: &[VolumeChangeRecord],
    edges: &[f64],
) -> Result<VolumeBinning, StatsError> {
    if edges.is_empty()
        || edges.iter().any(|e| !e.is_finite())
        || edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(StatsError::InvalidEdges(edges.to_vec()));
    }
    let mut under = Vec::new();
    let mut over = Vec::new();
    let mut zero = Vec::new();
    let mut bins: Vec<Vec<VolumeChangeRecord>> = vec![Vec::new(); edges.len() - 1];
    for r in records {
        let v = r.mid_cc;
        if v == 0.0 {
            zero.push(r.clone());
        } else if v < edges[0] {
            under.push(r.clone());
        } else if v >= edges[edges.len() - 1] {
            over.push(r.clone());
        } else {
            // v in [edges[0], edges[last]): find i with edges[i] <= v < edges[i+1]
            let i = edges.partition_point(|&e| e <= v) - 1;
            bins[i].push(r.clone());
        }
    }
    Ok(VolumeBinning {
        edges: edges.to_vec(),
        underflow: RecordGroup::new(None, Some(edges[0]), under),
        bins: bins
            .into_iter()
            .enumerate()
            .map(|(i, recs)| RecordGroup::new(Some(edges[i]), Some(edges[i + 1]), recs))
            .collect(),
        overflow: RecordGroup::new(Some(edges[edges.len() - 1]), None, over),
        zero_mid_volume: zero,
    })
}

/// Join per-case DSC from a report with volumes from a manifest. Cases
/// missing from either side, or failed in the report, are skipped.
pub fn volume_change_records(
    report: &CohortReport,
    volumes: &VolumeManifest,
) -> Vec<VolumeChangeRecord> {
    let mut out = Vec::new();
    for (id, m) in report.successful() {
        let Some(v) = volumes.get(id) else {
            log::warn!("case {id} has no volume entry");
            continue;
        };
        for label in TumorLabel::ALL {
            let lv = v.label(label);
            out.push(VolumeChangeRecord::new(
                id,
                label,
                lv.pre_cc,
                lv.mid_cc,
                m.label(label).dsc,
            ));
        }
    }
    out
}
