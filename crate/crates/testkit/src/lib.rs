//! Slow, direct reference implementations for checking `gradseg-core`.
//! Nothing here shares code with the library beyond its data types.

use gradseg_core::grid::Geometry;
use gradseg_core::{LabelMask3, Volume3};
use num_rational::Ratio;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Random mask on a random shape up to `max_extent` per axis. Each voxel is
/// labeled independently: `labels[i]` with probability `fill / labels.len()`.
pub fn random_mask<R: Rng>(rng: &mut R, max_extent: usize, fill: f64, labels: &[u8]) -> LabelMask3 {
    let shape = [
        rng.random_range(1..=max_extent),
        rng.random_range(1..=max_extent),
        rng.random_range(1..=max_extent),
    ];
    let spacing = [
        rng.random_range(0.3..2.0),
        rng.random_range(0.3..2.0),
        rng.random_range(0.3..2.5),
    ];
    let g = Geometry::new(shape, spacing).unwrap();
    random_mask_on(rng, &g, fill, labels)
}

pub fn random_mask_on<R: Rng>(rng: &mut R, g: &Geometry, fill: f64, labels: &[u8]) -> LabelMask3 {
    LabelMask3::from_fn(g.clone(), |_, _, _| {
        if rng.random_bool(fill) {
            labels[rng.random_range(0..labels.len())]
        } else {
            0
        }
    })
}

/// Blobby mask: union of a few random boxes. Gives surfaces with flat
/// faces, unlike salt-and-pepper noise.
pub fn random_blobs<R: Rng>(rng: &mut R, g: &Geometry, count: usize, label: u8) -> LabelMask3 {
    let mut m = LabelMask3::filled(g.clone(), 0);
    for _ in 0..count {
        let lo: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..g.shape[a]));
        let hi: [usize; 3] = std::array::from_fn(|a| rng.random_range(lo[a]..g.shape[a]));
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    *m.get_mut(i, j, k) = label;
                }
            }
        }
    }
    m
}

fn coords(shape: [usize; 3], idx: usize) -> [i64; 3] {
    [
        (idx % shape[0]) as i64,
        ((idx / shape[0]) % shape[1]) as i64,
        (idx / (shape[0] * shape[1])) as i64,
    ]
}

/// Adjacency by coordinate differences: every axis differs by at most one
/// and the number of differing axes is at most 1, 2 or 3.
pub fn adjacent(a: [i64; 3], b: [i64; 3], connectivity: u8) -> bool {
    let d: Vec<i64> = (0..3).map(|i| (a[i] - b[i]).abs()).collect();
    if d.iter().any(|&x| x > 1) || d.iter().all(|&x| x == 0) {
        return false;
    }
    let changed = d.iter().filter(|&&x| x == 1).count();
    match connectivity {
        6 => changed == 1,
        18 => changed <= 2,
        26 => true,
        _ => panic!("connectivity {connectivity}"),
    }
}

/// Component partition by transitive closure of the pairwise adjacency
/// relation: every voxel starts in its own class and classes are merged to
/// a fixpoint. Returns, per voxel, the smallest linear index in its class,
/// or `None` for voxels not equal to `label`.
pub fn components_by_closure(m: &LabelMask3, label: u8, connectivity: u8) -> Vec<Option<usize>> {
    let shape = m.shape();
    let fg: Vec<usize> = (0..m.len()).filter(|&i| m.data()[i] == label).collect();
    let pos: Vec<[i64; 3]> = fg.iter().map(|&i| coords(shape, i)).collect();
    let mut edges = Vec::new();
    for a in 0..fg.len() {
        for b in a + 1..fg.len() {
            if adjacent(pos[a], pos[b], connectivity) {
                edges.push((a, b));
            }
        }
    }
    let mut rep: Vec<usize> = fg.clone();
    loop {
        let mut changed = false;
        for &(a, b) in &edges {
            let m = rep[a].min(rep[b]);
            if rep[a] != m || rep[b] != m {
                rep[a] = m;
                rep[b] = m;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = vec![None; m.len()];
    for (n, &i) in fg.iter().enumerate() {
        out[i] = Some(rep[n]);
    }
    out
}

/// True when two voxel labelings induce the same partition (same
/// background, and a bijection between class ids).
pub fn same_partition<A: Copy + Ord, B: Copy + Ord>(a: &[Option<A>], b: &[Option<B>]) -> bool {
    use std::collections::BTreeMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *back.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Surface as `mask AND NOT erode(mask)`, eroding with the 6-neighbour
/// cross and treating outside the grid as background.
pub fn surface_by_erosion(m: &LabelMask3) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.shape();
    let inside = |i: i64, j: i64, k: i64| {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < nx
            && (j as usize) < ny
            && (k as usize) < nz
            && *m.get(i as usize, j as usize, k as usize) != 0
    };
    let mut out = Vec::new();
    for k in 0..nz as i64 {
        for j in 0..ny as i64 {
            for i in 0..nx as i64 {
                if !inside(i, j, k) {
                    continue;
                }
                let eroded = inside(i - 1, j, k)
                    && inside(i + 1, j, k)
                    && inside(i, j - 1, k)
                    && inside(i, j + 1, k)
                    && inside(i, j, k - 1)
                    && inside(i, j, k + 1);
                if !eroded {
                    out.push([i as usize, j as usize, k as usize]);
                }
            }
        }
    }
    out
}

/// For each voxel of `from`, the distance in mm to the nearest voxel of
/// `to`, by exhaustive search.
pub fn nearest_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let mut s = 0.0;
                    for a in 0..3 {
                        let d = (p[a] as f64 - q[a] as f64) * spacing[a];
                        s += d * d;
                    }
                    s
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Linear-interpolation percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// (HD95, MSD) in mm for binary masks, or `None` when either surface is
/// empty.
pub fn brute_surface_metrics(pred: &LabelMask3, gt: &LabelMask3) -> Option<(f64, f64)> {
    let sp = pred.spacing();
    let sp_ = surface_by_erosion(pred);
    let sg = surface_by_erosion(gt);
    if sp_.is_empty() || sg.is_empty() {
        return None;
    }
    let mut all = nearest_distances(&sp_, &sg, sp);
    all.extend(nearest_distances(&sg, &sp_, sp));
    let msd = all.iter().sum::<f64>() / all.len() as f64;
    Some((percentile(&all, 95.0), msd))
}

/// Dice as an exact fraction; `None` when both masks are empty.
pub fn dsc_rational(pred: &LabelMask3, gt: &LabelMask3) -> Option<Ratio<u64>> {
    let mut inter = 0u64;
    let mut p = 0u64;
    let mut g = 0u64;
    for (a, b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (*a != 0, *b != 0);
        inter += u64::from(a && b);
        p += u64::from(a);
        g += u64::from(b);
    }
    (p + g > 0).then(|| Ratio::new(2 * inter, p + g))
}

/// Mid-ranks by counting: `1 + #smaller + (#equal - 1) / 2`.
pub fn midranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let eq = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

/// Two-sided Wilcoxon signed-rank p by listing all `2^n` sign assignments
/// of the nonzero differences' mid-ranks.
pub fn wilcoxon_by_enumeration(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    assert!(
        n > 0 && n <= 22,
        "enumeration oracle needs 1..=22 differences"
    );
    let ranks = midranks_by_counting(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let observed: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| r)
        .sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        // ranks are multiples of 1/2, so these sums are exact
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

/// Spearman's rho by `1 - 6 Σd² / (n(n² - 1))`; valid without ties.
pub fn spearman_rank_formula(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64)
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// First derivative of a 1D signal by direct correlation with the sampled
/// Gaussian derivative `m·exp(-m²/2σ²)` on `|m| <= round(4σ)`, scaled to
/// unit response on a unit ramp, with half-sample symmetric boundaries.
pub fn dense_gaussian_derivative(signal: &[f64], sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).round() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|m| m as f64 * (-(m * m) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = (-r..=r).zip(&w).map(|(m, w)| m as f64 * w).sum();
    let n = signal.len() as i64;
    let at = |i: i64| {
        let period = 2 * n;
        let mut i = i.rem_euclid(period);
        if i >= n {
            i = period - 1 - i;
        }
        signal[i as usize]
    };
    (0..n)
        .map(|x| (-r..=r).zip(&w).map(|(m, w)| w * at(x + m)).sum::<f64>() / norm)
        .collect()
}

/// Upper-tail probability of Pearson's χ² statistic for equal expected
/// counts.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Random volume with values in `[lo, hi)`.
pub fn random_volume<R: Rng>(rng: &mut R, g: &Geometry, lo: f64, hi: f64) -> Volume3 {
    Volume3::from_fn(g.clone(), |_, _, _| rng.random_range(lo..hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_small_cases() {
        assert_eq!(wilcoxon_by_enumeration(&[1.0, 2.0, 3.0, 4.0, 5.0]), 0.0625);
        assert_eq!(wilcoxon_by_enumeration(&[1.0, -1.0]), 1.0);
    }

    #[test]
    fn rank_formula() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman_rank_formula(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dense_derivative_of_ramp() {
        let s: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        let d = dense_gaussian_derivative(&s, 1.0);
        assert!((d[20] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn chi_square_reference() {
        // statistic 0 gives p = 1
        assert!((chi_square_uniform_p(&[10, 10, 10]) - 1.0).abs() < 1e-12);
        // df = 4, statistic 13.2767 is the 0.01 critical value
        let p = chi_square_uniform_p(&[100 + 13, 100 - 13, 100, 100, 100]);
        assert!(p > 0.0 && p < 1.0);
    }
}
