use std::collections::BTreeSet;

use gradseg_core::cohort::{
    compute_volume_manifest, expand_training, scan_dataset, split_folds, LayoutSpec, Role,
    VolumeManifest,
};
use gradseg_core::components::{label_components, Connectivity};
use gradseg_core::gradmap::{assemble_sample, Phase, SampleConfig};
use gradseg_core::metrics::dsc;
use gradseg_core::nifti::{read_mask, read_volume};
use gradseg_core::phantom::{
    generate_case, generate_cohort, render_case, sample_cohort, CohortManifest, CohortSpec,
    PhantomSpec, TumorSpec,
};
use gradseg_core::roi::{perturb_box, Margins};
use gradseg_core::volume::volume_cc;
use gradseg_core::{TumorLabel, GTVN, GTVP};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cohort() -> CohortSpec {
    CohortSpec {
        shape: [72, 72, 28],
        noise_sigma: 2.0,
        gtvp_semi_axes_mm: [5.0, 7.0],
        gtvn_semi_axes_mm: [3.0, 4.0],
        ..CohortSpec::default()
    }
}

fn tree_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().display().to_string();
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn generated_tree_scans_splits_and_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        vanishing: 2,
        ..small_cohort()
    };
    let manifest_path = generate_cohort(10, &spec, 7, dir.path()).unwrap();
    let manifest: CohortManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest.patients.len(), 10);

    let scan = scan_dataset(dir.path(), &LayoutSpec::default()).unwrap();
    assert_eq!(scan.cases.len(), 10);
    assert!(scan.incomplete.is_empty());
    assert_eq!(expand_training(&scan.cases).len(), 20);

    let ids: Vec<String> = scan.cases.iter().map(|c| c.id.clone()).collect();
    let plan = split_folds(&ids, 5, 1).unwrap();
    let mut all_val = BTreeSet::new();
    for f in &plan.folds {
        assert_eq!(f.validation.len(), 2);
        assert_eq!(f.training.len(), 16);
        all_val.extend(f.validation.iter().cloned());
        let train: BTreeSet<_> = f.training.iter().map(|s| s.patient_id.clone()).collect();
        assert!(f.validation.iter().all(|v| !train.contains(v)));
    }
    assert_eq!(all_val.len(), 10);

    // volumes.json agrees with the masks on disk
    let written = VolumeManifest::read_json(dir.path().join("volumes.json")).unwrap();
    assert_eq!(written, compute_volume_manifest(&scan.cases).unwrap());
    for c in &written.cases {
        let vanished = manifest
            .patients
            .iter()
            .find(|p| p.id == c.case_id)
            .unwrap()
            .vanishing;
        assert!(c.gtvp.mid_cc <= c.gtvp.pre_cc);
        assert_eq!(c.gtvn.mid_cc == 0.0, vanished);
    }

    // regenerate: byte-identical tree
    let again = tempfile::tempdir().unwrap();
    generate_cohort(10, &spec, 7, again.path()).unwrap();
    assert_eq!(tree_bytes(dir.path()), tree_bytes(again.path()));

    // drop one ground truth: 9 complete + 1 flagged
    let victim = &scan.cases[3];
    std::fs::remove_file(&victim.mid_gt).unwrap();
    let rescan = scan_dataset(dir.path(), &LayoutSpec::default()).unwrap();
    assert_eq!(rescan.cases.len(), 9);
    assert_eq!(rescan.incomplete.len(), 1);
    assert_eq!(rescan.incomplete[0].id, victim.id);
    assert_eq!(rescan.incomplete[0].missing, vec![Role::MidGt]);
}

#[test]
fn jittered_prior_boxes_contain_mid_tumor() {
    let pats = sample_cohort(20, &small_cohort(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (_, spec, _) in pats {
        let c = render_case(&spec).unwrap();
        for label in [GTVP, GTVN] {
            let comps = label_components(&c.prior, label, Connectivity::TwentySix);
            let boxes: Vec<_> = comps
                .components()
                .iter()
                .map(|i| {
                    perturb_box(
                        &i.bbox,
                        c.prior.shape(),
                        &mut rng,
                        Margins::new(spec.jitter, 6).unwrap(),
                    )
                })
                .collect();
            let g = c.mid_gt.geometry();
            for n in 0..g.len() {
                if c.mid_gt.data()[n] == label {
                    assert!(boxes.iter().any(|b| b.contains(g.coords(n))));
                }
            }
        }
    }
}

#[test]
fn shrinkage_lowers_naive_prior_dice() {
    let mut last = 1.1;
    for s in [1.0, 0.8, 0.6, 0.4] {
        let spec = PhantomSpec {
            shape: [64, 64, 32],
            spacing: [0.5, 0.5, 1.2],
            background: 100.0,
            noise_sigma: 0.0,
            jitter: 0,
            seed: 1,
            tumors: vec![TumorSpec {
                label: TumorLabel::Gtvp,
                center_mm: [16.0, 16.0, 18.0],
                semi_axes_mm: [8.0, 7.0, 6.0],
                shrinkage: s,
                contrast: 50.0,
            }],
        };
        let c = render_case(&spec).unwrap();
        let d = dsc(&c.prior, &c.mid_gt).unwrap();
        assert!(d < last);
        last = d;
        let voxel = volume_cc(&c.pre_gt, GTVP);
        let analytic = c.tumors[0].pre_cc_analytic;
        assert!((voxel - analytic).abs() / analytic < 0.02);
    }
}

#[test]
fn case_files_round_trip_and_empty_gtvp_prior() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        shape: [48, 48, 20],
        spacing: [0.5, 0.5, 1.2],
        background: 100.0,
        noise_sigma: 3.0,
        jitter: 1,
        seed: 5,
        tumors: vec![TumorSpec {
            label: TumorLabel::Gtvn,
            center_mm: [12.0, 12.0, 12.0],
            semi_axes_mm: [4.0, 4.0, 4.0],
            shrinkage: 0.8,
            contrast: 40.0,
        }],
    };
    let layout = LayoutSpec::default();
    let (case, manifest) = generate_case(&spec, "X01", &dir.path().join("X01"), &layout).unwrap();
    let (prior, _) = read_mask(&case.pre_gt_native).unwrap();
    let (img, _) = read_volume(&case.pre_img_native).unwrap();
    assert_eq!(prior.count(GTVP), 0);
    assert!(prior.count(GTVN) > 0);
    assert_eq!(manifest.volumes.gtvp.pre_cc, 0.0);

    let descriptors = expand_training(std::slice::from_ref(&case));
    assert_eq!(descriptors.len(), 2);
    assert_eq!(descriptors[1].phase, Phase::PreRt);
    let s = assemble_sample(
        "X01",
        Phase::PreRt,
        &img,
        &prior,
        3,
        &SampleConfig::default(),
    )
    .unwrap();
    assert_eq!(s.rois.labels(), vec![GTVN]);
}
