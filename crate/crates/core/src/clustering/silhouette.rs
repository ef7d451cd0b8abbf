use rayon::prelude::*;

use super::{densify, ClusterError, Points};
use crate::scalar::{ordered_sum, squared_euclidean, Scalar};

/// Mean silhouette width over all points, using Euclidean distance.
///
/// For point `i`, `a` is the mean distance to the rest of its cluster and
/// `b` the smallest mean distance to another cluster; its width is
/// `(b − a) / max(a, b)`. Points in singleton clusters, and points with
/// `a = b = 0`, score 0. Labels may be any integers.
pub fn silhouette<T: Scalar>(points: &Points<'_, T>, labels: &[usize]) -> Result<T, ClusterError> {
    let n = points.len();
    if labels.len() != n {
        return Err(ClusterError::LengthMismatch {
            labels: labels.len(),
            points: n,
        });
    }
    let (dense, k) = densify(labels);
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &l in &dense {
        sizes[l] += 1;
    }

    let widths: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return T::zero();
            }
            let mut sums = vec![T::zero(); k];
            let xi = points.row(i);
            for j in 0..n {
                if j != i {
                    sums[dense[j]] += squared_euclidean(xi, points.row(j)).sqrt();
                }
            }
            let a = sums[own] / T::from_count(sizes[own] - 1);
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / T::from_count(sizes[c]))
                .fold(T::infinity(), T::min);
            let m = a.max(b);
            if m.is_zero() {
                T::zero()
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(ordered_sum(&widths) / T::from_count(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_pairs() {
        let data: Vec<f64> = vec![0.0, 0.1, 10.0, 10.1];
        let pts = Points::new(&data, 1).unwrap();
        let s = silhouette(&pts, &[1, 1, 2, 2]).unwrap();
        // Brute force by hand: widths are 1 − 0.1/10.05, 1 − 0.1/9.95, 1 − 0.1/9.95, 1 − 0.1/10.05.
        let expected = (2.0 * (1.0 - 0.1 / 10.05) + 2.0 * (1.0 - 0.1 / 9.95)) / 4.0;
        assert!((s - expected).abs() < 1e-12);
        assert!(s >= 0.98);

        let swapped = silhouette(&pts, &[1, 2, 1, 2]).unwrap();
        assert!(swapped < 0.0);
    }

    #[test]
    fn identical_points_score_zero() {
        let data: Vec<f64> = vec![3.0; 6];
        let pts = Points::new(&data, 1).unwrap();
        assert_eq!(silhouette(&pts, &[1, 1, 2, 2, 3, 3]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let data: Vec<f64> = vec![0.0, 1.0, 2.0];
        let pts = Points::new(&data, 1).unwrap();
        assert!(matches!(silhouette(&pts, &[4, 4, 4]), Err(ClusterError::SingleCluster)));
        assert!(matches!(
            silhouette(&pts, &[1, 2]),
            Err(ClusterError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn singletons_score_zero() {
        let data: Vec<f64> = vec![0.0, 1.0, 50.0];
        let pts = Points::new(&data, 1).unwrap();
        let s = silhouette(&pts, &[1, 1, 2]).unwrap();
        let expected = ((1.0 - 1.0 / 50.0) + (1.0 - 1.0 / 49.0)) / 3.0;
        assert!((s - expected).abs() < 1e-12);
    }
}
