use gradseg_core::components::{label_components, Connectivity};
use gradseg_core::grid::Geometry;
use gradseg_core::LabelMask3;
use gradseg_testkit as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn as_partition(labeled: &[u32]) -> Vec<Option<u32>> {
    labeled.iter().map(|&l| (l != 0).then_some(l)).collect()
}

#[test]
fn partition_matches_transitive_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 0..60 {
        let fill = rng.random_range(0.1..0.5);
        let m = oracle::random_mask(&mut rng, 9, fill, &[1, 2]);
        let (conn, c) = match n % 3 {
            0 => (Connectivity::Six, 6),
            1 => (Connectivity::Eighteen, 18),
            _ => (Connectivity::TwentySix, 26),
        };
        for label in [1, 2] {
            let got = label_components(&m, label, conn);
            let want = oracle::components_by_closure(&m, label, c);
            assert!(oracle::same_partition(&as_partition(got.labeled()), &want));
            // ids ascend with each component's first voxel
            let firsts: Vec<usize> = (1..=got.count())
                .map(|id| {
                    got.labeled()
                        .iter()
                        .position(|&l| l as usize == id)
                        .unwrap()
                })
                .collect();
            assert!(firsts.windows(2).all(|w| w[0] < w[1]));
            for (id, info) in got.components().iter().enumerate() {
                let count = got
                    .labeled()
                    .iter()
                    .filter(|&&l| l as usize == id + 1)
                    .count();
                assert_eq!(info.voxel_count, count);
            }
        }
    }
}

#[test]
fn corner_touching_voxels() {
    let g = Geometry::new([2, 2, 2], [1.0; 3]).unwrap();
    let mut m = LabelMask3::filled(g, 0);
    *m.get_mut(0, 0, 0) = 1;
    *m.get_mut(1, 1, 1) = 1;
    assert_eq!(label_components(&m, 1, Connectivity::Six).count(), 2);
    assert_eq!(label_components(&m, 1, Connectivity::Eighteen).count(), 2);
    assert_eq!(label_components(&m, 1, Connectivity::TwentySix).count(), 1);
    // edge-touching separates 6 from 18
    *m.get_mut(1, 1, 1) = 0;
    *m.get_mut(1, 1, 0) = 1;
    assert_eq!(label_components(&m, 1, Connectivity::Six).count(), 2);
    assert_eq!(label_components(&m, 1, Connectivity::Eighteen).count(), 1);
}

#[test]
fn tight_boxes_enclose_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = oracle::random_mask(&mut rng, 12, 0.2, &[1]);
    let set = label_components(&m, 1, Connectivity::TwentySix);
    let g = m.geometry();
    for id in 1..=set.count() {
        let b = set.tight_bbox(id).unwrap();
        let vox: Vec<[usize; 3]> = (0..g.len())
            .filter(|&i| set.labeled()[i] as usize == id)
            .map(|i| g.coords(i))
            .collect();
        for a in 0..3 {
            assert_eq!(b.lo[a], vox.iter().map(|v| v[a]).min().unwrap());
            assert_eq!(b.hi[a], vox.iter().map(|v| v[a]).max().unwrap());
        }
    }
    assert!(set.tight_bbox(0).is_err());
    assert!(set.tight_bbox(set.count() + 1).is_err());
}
