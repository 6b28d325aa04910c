//! Visual information clustering: density-peaks clustering where the search
//! for a token's nearest denser neighbor is gated by spatial distance.
//!
//! Conventions used throughout:
//!
//! * Token `j` is *denser* than `i` when `rho[j] > rho[i]`, or when the
//!   densities are exactly equal and `j < i`. This keeps the parent relation
//!   acyclic.
//! * Tokens with no denser neighbor inside the spatial radius get no parent,
//!   and their `delta` is the largest pairwise feature distance (1.0 if every
//!   distance is zero).
//! * Centers are the `ceil(n * alpha)` tokens of largest `gamma = rho * delta`,
//!   ties broken by larger `rho`, then lower index. The center ranked `k`
//!   (from 1) owns cluster id `k`.
//! * Non-centers are visited densest first and take their parent's label.
//!   Parentless non-centers join the feature-nearest center instead.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};

use crate::model::ClusterAssignment;
use crate::schedule::center_count;
use crate::{Error, Result};

/// Feature and spatial distance matrices over the same token set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePair {
    pub feature: Array2<f64>,
    pub spatial: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicParams {
    pub d_c: f64,
    pub tau: f64,
    pub alpha: f64,
}

/// Symmetric Euclidean distance matrix over the rows of `points`.
pub fn euclidean_matrix(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let a = points.row(i);
        for j in (i + 1)..n {
            let b = points.row(j);
            let d = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

pub fn pairwise_distances(
    features: ArrayView2<f64>,
    positions: ArrayView2<f64>,
) -> Result<DistancePair> {
    if features.nrows() != positions.nrows() {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows but {} position rows",
            features.nrows(),
            positions.nrows()
        )));
    }
    Ok(DistancePair {
        feature: euclidean_matrix(features),
        spatial: euclidean_matrix(positions),
    })
}

/// Gaussian-kernel local density of each token with cutoff `d_c`.
pub fn local_density(feature_distances: ArrayView2<f64>, d_c: f64) -> Result<Vec<f64>> {
    if !(d_c > 0.0 && d_c.is_finite()) {
        return Err(Error::InvalidParameter(format!("d_c={d_c} must be positive")));
    }
    let n = feature_distances.nrows();
    Ok((0..n)
        .map(|i| {
            let row = feature_distances.row(i);
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let r = row[j] / d_c;
                    (-(r * r)).exp()
                })
                .sum()
        })
        .collect())
}

fn denser(rho: &[f64], j: usize, i: usize) -> bool {
    rho[j] > rho[i] || (rho[j] == rho[i] && j < i)
}

/// Largest off-diagonal entry, or 1.0 when there is none above zero.
fn delta_sentinel(feature_distances: ArrayView2<f64>) -> f64 {
    let max = feature_distances
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(0.0f64, f64::max);
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

/// For each token, the feature distance to its nearest denser neighbor within
/// spatial radius `tau`, and that neighbor's index.
pub fn delta_and_parent(
    rho: &[f64],
    feature_distances: ArrayView2<f64>,
    spatial_distances: ArrayView2<f64>,
    tau: f64,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = rho.len();
    let sentinel = delta_sentinel(feature_distances);
    let mut delta = vec![sentinel; n];
    let mut parent = vec![None; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j == i || !denser(rho, j, i) || spatial_distances[[i, j]] > tau {
                continue;
            }
            let d = feature_distances[[i, j]];
            if d < best {
                best = d;
                parent[i] = Some(j);
            }
        }
        if parent[i].is_some() {
            delta[i] = best;
        }
    }
    (delta, parent)
}

pub fn cluster(
    features: ArrayView2<f64>,
    positions: ArrayView2<f64>,
    params: VicParams,
) -> Result<ClusterAssignment> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::NoTokens);
    }
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha={} not in (0, 1]",
            params.alpha
        )));
    }
    if params.tau.is_nan() || params.tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tau={} must be positive",
            params.tau
        )));
    }
    let dist = pairwise_distances(features, positions)?;
    let rho = local_density(dist.feature.view(), params.d_c)?;
    let (delta, parent) = delta_and_parent(&rho, dist.feature.view(), dist.spatial.view(), params.tau);
    let gamma: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();

    let mut by_gamma: Vec<usize> = (0..n).collect();
    by_gamma.sort_by(|&a, &b| {
        gamma[b]
            .partial_cmp(&gamma[a])
            .unwrap_or(Ordering::Equal)
            .then(rho[b].partial_cmp(&rho[a]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let n_centers = center_count(n, params.alpha);
    let centers = by_gamma[..n_centers].to_vec();

    let mut labels = vec![0usize; n];
    for (k, &c) in centers.iter().enumerate() {
        labels[c] = k + 1;
    }

    // densest first; the tie-break matches `denser`, so parents precede children
    let mut by_rho: Vec<usize> = (0..n).collect();
    by_rho.sort_by(|&a, &b| {
        rho[b]
            .partial_cmp(&rho[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in &by_rho {
        if labels[i] != 0 {
            continue;
        }
        labels[i] = match parent[i] {
            Some(p) => {
                debug_assert_ne!(labels[p], 0, "parent visited after child");
                labels[p]
            }
            None => nearest_center(i, &centers, dist.feature.view()),
        };
    }

    Ok(ClusterAssignment {
        labels,
        centers,
        rho,
        delta,
        gamma,
        parent,
    })
}

/// Cluster id of the center closest to token `i` in feature space; ties go
/// to the lower cluster id.
fn nearest_center(i: usize, centers: &[usize], feature_distances: ArrayView2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, &c) in centers.iter().enumerate() {
        let d = feature_distances[[i, c]];
        if d < best.0 {
            best = (d, k + 1);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Axis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E_INV: f64 = 0.36787944117144233;

    #[test]
    fn distance_examples() {
        let d = pairwise_distances(array![[0.0], [3.0]].view(), array![[0.0, 0.0], [0.3, 0.4]].view())
            .unwrap();
        assert_eq!(d.feature[[0, 1]], 3.0);
        assert!((d.spatial[[0, 1]] - 0.5).abs() < 1e-15);
        assert_eq!(d.feature[[1, 0]], 3.0);
        assert_eq!(d.feature[[0, 0]], 0.0);
    }

    #[test]
    fn distances_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((20, 7), |_| rng.random_range(-2.0..2.0));
        let d = euclidean_matrix(pts.view());
        for i in 0..20 {
            for j in 0..20 {
                let mut s = 0.0;
                for c in 0..7 {
                    s += (pts[[i, c]] - pts[[j, c]]).powi(2);
                }
                assert!((d[[i, j]] - s.sqrt()).abs() < 1e-9);
            }
        }
        // triangle inequality on every triple
        for i in 0..20 {
            for j in 0..20 {
                for k in 0..20 {
                    assert!(d[[i, k]] <= d[[i, j]] + d[[j, k]] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn density_examples() {
        let rho = local_density(array![[0.0, 8.0], [8.0, 0.0]].view(), 8.0).unwrap();
        assert!((rho[0] - E_INV).abs() < 1e-12 && (rho[1] - E_INV).abs() < 1e-12);
        let rho = local_density(Array2::zeros((3, 3)).view(), 8.0).unwrap();
        assert_eq!(rho, vec![2.0, 2.0, 2.0]);
        assert!(local_density(Array2::zeros((2, 2)).view(), 0.0).is_err());
    }

    #[test]
    fn delta_examples() {
        let (delta, parent) = delta_and_parent(&[0.0], Array2::zeros((1, 1)).view(), Array2::zeros((1, 1)).view(), 0.6);
        assert_eq!(parent, vec![None]);
        assert_eq!(delta, vec![1.0]);

        let feat = array![[0.0, 1.5], [1.5, 0.0]];
        let near = array![[0.0, 0.2], [0.2, 0.0]];
        let (delta, parent) = delta_and_parent(&[2.0, 1.0], feat.view(), near.view(), 0.6);
        assert_eq!(parent, vec![None, Some(0)]);
        assert_eq!(delta, vec![1.5, 1.5]);

        let far = array![[0.0, 0.9], [0.9, 0.0]];
        let (delta, parent) = delta_and_parent(&[2.0, 1.0], feat.view(), far.view(), 0.6);
        assert_eq!(parent, vec![None, None]);
        assert_eq!(delta, vec![1.5, 1.5]);
    }

    #[test]
    fn identical_tokens_form_one_cluster() {
        let feats = Array2::from_elem((6, 3), 0.7);
        let pos = Array2::from_elem((6, 2), 0.5);
        let a = cluster(feats.view(), pos.view(), VicParams { d_c: 1.0, tau: 0.6, alpha: 0.1 }).unwrap();
        assert_eq!(a.centers, vec![0]);
        assert!(a.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn orphans_join_nearest_center() {
        // token 2 is spatially isolated from everything denser
        let feats = array![[0.0], [0.1], [5.0], [5.2]];
        let pos = array![[0.0, 0.0], [0.0, 0.1], [1.0, 1.0], [0.0, 0.2]];
        let a = cluster(feats.view(), pos.view(), VicParams { d_c: 1.0, tau: 0.5, alpha: 0.5 }).unwrap();
        assert_eq!(a.n_clusters(), 2);
        for i in 0..4 {
            assert!((1..=2).contains(&a.labels[i]));
        }
        for (k, &c) in a.centers.iter().enumerate() {
            assert_eq!(a.labels[c], k + 1);
        }
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
        let p = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        (f, p)
    }

    proptest! {
        #[test]
        fn density_permutation_equivariant(seed in 0u64..1000, n in 2usize..24) {
            let (f, _) = random_instance(seed, n, 4);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(seed as usize % n);
            perm.swap(0, n - 1);
            let fp = f.select(Axis(0), &perm);
            let rho = local_density(euclidean_matrix(f.view()).view(), 2.0).unwrap();
            let rho_p = local_density(euclidean_matrix(fp.view()).view(), 2.0).unwrap();
            for (k, &src) in perm.iter().enumerate() {
                prop_assert!((rho_p[k] - rho[src]).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_invariance(seed in 0u64..1000, n in 2usize..24) {
            // powers of two keep the scaling bit-exact
            let (f, p) = random_instance(seed, n, 3);
            let params = VicParams { d_c: 1.5, tau: 0.5, alpha: 0.25 };
            let a = cluster(f.view(), p.view(), params).unwrap();
            let scaled = &f * 4.0;
            let b = cluster(scaled.view(), p.view(), VicParams { d_c: 6.0, ..params }).unwrap();
            prop_assert_eq!(&a.labels, &b.labels);
            prop_assert_eq!(&a.centers, &b.centers);
            prop_assert_eq!(&a.parent, &b.parent);
            prop_assert_eq!(&a.rho, &b.rho);
        }

        #[test]
        fn alpha_one_is_bijection(seed in 0u64..1000, n in 1usize..20) {
            let (f, p) = random_instance(seed, n, 3);
            let a = cluster(f.view(), p.view(), VicParams { d_c: 1.0, tau: 0.4, alpha: 1.0 }).unwrap();
            prop_assert_eq!(a.n_clusters(), n);
            let mut labels = a.labels.clone();
            labels.sort();
            prop_assert_eq!(labels, (1..=n).collect::<Vec<_>>());
        }

        #[test]
        fn labels_partition_tokens(seed in 0u64..1000, n in 1usize..40, alpha in 0.01f64..1.0) {
            let (f, p) = random_instance(seed, n, 5);
            let a = cluster(f.view(), p.view(), VicParams { d_c: 2.0, tau: 0.3, alpha }).unwrap();
            let nc = a.n_clusters();
            prop_assert_eq!(nc, center_count(n, alpha));
            prop_assert!(a.labels.iter().all(|&l| (1..=nc).contains(&l)));
            let groups = a.members();
            prop_assert!(groups.iter().all(|g| !g.is_empty()));
            prop_assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), n);
            prop_assert!(a.rho.iter().all(|&r| r >= 0.0));
            if n >= 2 {
                prop_assert!(a.delta.iter().all(|&d| d > 0.0));
            }
        }
    }
}
