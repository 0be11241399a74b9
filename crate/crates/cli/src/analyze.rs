use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use gradseg_core::cohort::VolumeManifest;
use gradseg_core::metrics::CohortReport;
use gradseg_core::nifti::write_atomic;
use gradseg_core::stats::{
    bin_volume_records, volume_change_records, wilcoxon_signed_rank, PairedSample, VolumeBinning,
    WilcoxonResult,
};
use gradseg_core::TumorLabel;
use serde::Serialize;

use crate::config::{to_json, RunConfig};
use crate::{CmdResult, Failure, UsageContext};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Evaluation report (report.json).
    #[arg(long)]
    pub report: PathBuf,
    /// Second report; per-case DSC is compared with a Wilcoxon signed-rank test.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Volume manifest (volumes.json) for volume-binned correlations.
    #[arg(long)]
    pub volumes: Option<PathBuf>,
    /// Ascending mid-RT volume bin edges in cc.
    #[arg(long, value_delimiter = ',', default_value = "0.8,3.0")]
    pub bins: Vec<f64>,
    /// Output file (stats JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional scatter CSV of (case, label, mid_cc, delta_cc, dsc).
    #[arg(long)]
    pub scatter_csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum TestOutcome {
    Ok(WilcoxonResult),
    Err { error: String },
}

#[derive(Debug, Serialize)]
struct Paired {
    n_common_cases: usize,
    /// Per label, DSC of `report` against DSC of `against`.
    wilcoxon: BTreeMap<String, TestOutcome>,
}

#[derive(Debug, Serialize)]
struct Analysis {
    #[serde(skip_serializing_if = "Option::is_none")]
    paired: Option<Paired>,
    /// Per label and pooled (`all`).
    #[serde(skip_serializing_if = "Option::is_none")]
    binning: Option<BTreeMap<String, VolumeBinning>>,
}

fn read_report(path: &PathBuf) -> Result<CohortReport, Failure> {
    CohortReport::read_json(path)
        .with_context(|| format!("reading report {}", path.display()))
        .usage()
}

fn paired(a: &CohortReport, b: &CohortReport) -> Paired {
    let b_cases: BTreeMap<&str, _> = b.successful().collect();
    let common: Vec<_> = a
        .successful()
        .filter_map(|(id, m)| b_cases.get(id).map(|n| (id, m, *n)))
        .collect();
    let mut wilcoxon = BTreeMap::new();
    for label in TumorLabel::ALL {
        let ids = common.iter().map(|c| c.0.to_string()).collect();
        let xa = common.iter().map(|c| c.1.label(label).dsc).collect();
        let xb = common.iter().map(|c| c.2.label(label).dsc).collect();
        let outcome = match PairedSample::new(ids, xa, xb).and_then(|s| wilcoxon_signed_rank(&s)) {
            Ok(r) => TestOutcome::Ok(r),
            Err(e) => {
                log::warn!("{label}: {e}");
                TestOutcome::Err {
                    error: e.to_string(),
                }
            }
        };
        wilcoxon.insert(label.name().to_string(), outcome);
    }
    Paired {
        n_common_cases: common.len(),
        wilcoxon,
    }
}

pub fn run(a: AnalyzeArgs, cfg: &RunConfig) -> CmdResult {
    let out = cfg.out(a.out).usage()?;
    let report = read_report(&a.report)?;
    if a.against.is_none() && a.volumes.is_none() {
        return Err(Failure::Usage(anyhow!(
            "nothing to do: give --against and/or --volumes"
        )));
    }
    let paired = match &a.against {
        Some(p) => Some(paired(&report, &read_report(p)?)),
        None => None,
    };

    let mut scatter = None;
    let binning = match &a.volumes {
        Some(p) => {
            let vols = VolumeManifest::read_json(p)
                .with_context(|| format!("reading volumes {}", p.display()))
                .usage()?;
            let records = volume_change_records(&report, &vols);
            let mut groups = BTreeMap::new();
            for label in TumorLabel::ALL {
                let recs: Vec<_> = records
                    .iter()
                    .filter(|r| r.label == label)
                    .cloned()
                    .collect();
                groups.insert(
                    label.name().to_string(),
                    bin_volume_records(&recs, &a.bins).usage()?,
                );
            }
            groups.insert(
                "all".to_string(),
                bin_volume_records(&records, &a.bins).usage()?,
            );
            scatter = Some(records);
            Some(groups)
        }
        None => None,
    };

    if let (Some(path), Some(records)) = (&a.scatter_csv, &scatter) {
        let mut text = String::from("case_id,label,pre_cc,mid_cc,delta_cc,dsc\n");
        for r in records {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.case_id, r.label, r.pre_cc, r.mid_cc, r.delta_cc, r.dsc
            ));
        }
        write_atomic(path, text.as_bytes())?;
    }

    let analysis = Analysis { paired, binning };
    write_atomic(&out, to_json(&analysis).as_bytes())?;
    println!("{}", out.display());
    Ok(())
}
