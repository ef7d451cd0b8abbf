use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nearest, relabel_by_size, ClusterError, ClusterModel, Points};
use crate::scalar::{squared_euclidean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Largest centroid shift still counted as converged when `max_iter`
    /// runs out before the assignment settles.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// k-means++ seeding: first centroid uniform, then proportional to the squared
/// distance to the nearest chosen centroid.
fn plus_plus<T: Scalar>(points: &Points<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(points.row(i), points.row(chosen[0])).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(squared_euclidean(points.row(i), points.row(next)).as_f64());
        }
    }
    chosen.into_iter().flat_map(|i| points.row(i).iter().copied()).collect()
}

fn means<T: Scalar>(points: &Points<'_, T>, labels: &[usize], k: usize) -> Vec<T> {
    let dim = points.dim();
    let mut sums = vec![T::zero(); k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let c = T::from_count(c.max(1));
        sums[j * dim..(j + 1) * dim].iter_mut().for_each(|s| *s /= c);
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster, taking
/// only from clusters that keep at least one member.
fn repair_empty(labels: &mut [usize], dist: &mut [f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && pick.is_none_or(|p| dist[i] > dist[p]) {
                pick = Some(i);
            }
        }
        let i = pick.expect("k <= n leaves a donor cluster");
        counts[labels[i]] -= 1;
        counts[j] += 1;
        labels[i] = j;
        dist[i] = 0.0;
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Iterates until the assignment is a fixed point of its own centroids
/// (labels unchanged between passes) or `max_iter` is reached. The returned
/// centroids are always the means of the returned clusters. Labels are
/// size-ordered.
pub fn kmeans<T: Scalar>(
    points: &Points<'_, T>,
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterModel<T>, ClusterError> {
    let n = points.len();
    if k < 2 {
        return Err(ClusterError::InvalidK(k));
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, n });
    }
    points.check_finite()?;

    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut n_iter = 0;
    let mut converged = false;
    let mut shift = f64::INFINITY;

    while n_iter < params.max_iter {
        n_iter += 1;
        let (mut next, mut dist): (Vec<usize>, Vec<f64>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let (j, d) = nearest(&centroids, dim, points.row(i));
                (j, d.as_f64())
            })
            .unzip();
        repair_empty(&mut next, &mut dist, k);
        let stable = next == labels;
        labels = next;
        if stable {
            converged = true;
            break;
        }
        let updated = means(points, &labels, k);
        shift = updated
            .chunks_exact(dim)
            .zip(centroids.chunks_exact(dim))
            .map(|(a, b)| squared_euclidean(a, b).as_f64().sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
    }
    if !converged {
        // centroids were refreshed after the last assignment; keep them
        // consistent with the reported labels
        centroids = means(points, &labels, k);
        converged = shift < params.tol;
    }

    let mut model = ClusterModel {
        k,
        dim,
        centroids,
        labels: labels.iter().map(|l| l + 1).collect(),
        inertia: T::zero(),
        seed,
        n_iter,
        converged,
    };
    model.inertia = model.inertia_of(points);
    Ok(relabel_by_size(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_groups_split_exactly() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let b = [5.0, 1.0, -2.0, 0.5];
        let data: Vec<f64> = [a, a, a, b, b, b].concat();
        let pts = Points::new(&data, 4).unwrap();
        for seed in 0..5 {
            let m = kmeans(&pts, 2, seed, &KMeansParams::default()).unwrap();
            assert_eq!(m.inertia, 0.0);
            assert!(m.converged);
            assert_eq!(m.labels[0], m.labels[1]);
            assert_eq!(m.labels[1], m.labels[2]);
            assert_eq!(m.labels[3], m.labels[4]);
            assert_ne!(m.labels[0], m.labels[3]);
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let data = vec![0.0, 1.0, 5.0, 9.0, 20.0];
        let pts = Points::new(&data, 1).unwrap();
        let m = kmeans(&pts, 5, 3, &KMeansParams::default()).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut l = m.labels.clone();
        l.sort();
        assert_eq!(l, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let data = vec![2.0; 12];
        let pts = Points::new(&data, 2).unwrap();
        let m = kmeans(&pts, 3, 1, &KMeansParams::default()).unwrap();
        assert_eq!(m.sizes().iter().filter(|&&s| s > 0).count(), 3);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn argument_errors() {
        let data = vec![0.0, 1.0];
        let pts = Points::new(&data, 1).unwrap();
        assert!(matches!(
            kmeans(&pts, 3, 0, &KMeansParams::default()),
            Err(ClusterError::KTooLarge { .. })
        ));
        assert!(matches!(
            kmeans(&pts, 1, 0, &KMeansParams::default()),
            Err(ClusterError::InvalidK(1))
        ));
        let bad = vec![0.0, f64::NAN, 1.0];
        let pts = Points::new(&bad, 1).unwrap();
        assert!(matches!(
            kmeans(&pts, 2, 0, &KMeansParams::default()),
            Err(ClusterError::NonFinite)
        ));
    }

    #[test]
    fn repair_takes_farthest_point_from_shared_cluster() {
        let mut labels = vec![0, 0, 0, 1];
        let mut dist = vec![0.5, 3.0, 1.0, 9.0];
        repair_empty(&mut labels, &mut dist, 3);
        assert_eq!(labels, vec![0, 2, 0, 1]);
        assert_eq!(dist[1], 0.0);
    }

    #[test]
    fn works_in_f32() {
        let data: Vec<f32> = vec![0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let pts = Points::new(&data, 1).unwrap();
        let m = kmeans(&pts, 2, 7, &KMeansParams::default()).unwrap();
        assert_eq!(m.labels[0], m.labels[2]);
        assert_ne!(m.labels[0], m.labels[3]);
    }
}
