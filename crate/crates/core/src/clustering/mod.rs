//! Multidimensional time-series k-means over per-cell `12 × D` matrices.
//!
//! Matrices are compared flattened: the distance is the Euclidean norm of
//! the element-wise difference and k-means minimizes its square. Labels in
//! a finished [`ClusterModel`] are 1-based and size-ordered, so cluster 1 is
//! always the largest.

mod io;
mod kmeans;
mod select;
mod silhouette;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{squared_euclidean, Scalar};

pub use io::{
    read_labels_csv, read_model, write_centroid_profiles_csv, write_labels_csv, write_model, ModelHeader, StoredModel,
    MODEL_FORMAT,
};
pub use kmeans::{kmeans, KMeansParams};
pub use select::{derive_seed, select_k, KScore, KSelectionReport, SelectParams};
pub use silhouette::silhouette;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("shape mismatch: expected {expected} entries, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("invalid k range [{0}, {1}]")]
    InvalidRange(usize, usize),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("{labels} labels for {points} points")]
    LengthMismatch { labels: usize, points: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `n` points of dimension `dim` stored contiguously.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a, T> {
    data: &'a [T],
    dim: usize,
}

impl<'a, T: Scalar> Points<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Result<Self, ClusterError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(ClusterError::ShapeMismatch {
                expected: dim,
                found: data.len(),
            });
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &'a [T] {
        self.data
    }

    fn check_finite(&self) -> Result<(), ClusterError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ClusterError::NonFinite)
        }
    }
}

/// Euclidean norm of `a − b` over all entries.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(squared_euclidean(a, b).sqrt())
}

/// Index of the nearest centroid (0-based); ties go to the lowest index.
pub(crate) fn nearest<T: Scalar>(centroids: &[T], dim: usize, x: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_euclidean(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row `j` is the centroid of cluster `j + 1`.
    pub centroids: Vec<T>,
    /// Cluster of each point, in `1..=k`.
    pub labels: Vec<usize>,
    pub inertia: T,
    pub seed: u64,
    pub n_iter: usize,
    pub converged: bool,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn centroid(&self, label: usize) -> &[T] {
        &self.centroids[(label - 1) * self.dim..label * self.dim]
    }

    /// Members per cluster, indexed by `label − 1`.
    pub fn sizes(&self) -> Vec<usize> {
        cluster_sizes(&self.labels, self.k)
    }

    /// Nearest centroid's label; ties go to the smallest label.
    pub fn assign(&self, matrix: &[T]) -> Result<usize, ClusterError> {
        if matrix.len() != self.dim {
            return Err(ClusterError::ShapeMismatch {
                expected: self.dim,
                found: matrix.len(),
            });
        }
        Ok(nearest(&self.centroids, self.dim, matrix).0 + 1)
    }

    /// `Σ d²(x_i, centroid(label_i))` recomputed from the points.
    pub fn inertia_of(&self, points: &Points<'_, T>) -> T {
        (0..points.len()).fold(T::zero(), |acc, i| {
            acc + squared_euclidean(points.row(i), self.centroid(self.labels[i]))
        })
    }
}

pub fn assign<T: Scalar>(model: &ClusterModel<T>, matrix: &[T]) -> Result<usize, ClusterError> {
    model.assign(matrix)
}

pub(crate) fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l - 1] += 1;
    }
    sizes
}

/// New label for each old label (`mapping[old − 1]`), ordering clusters by
/// decreasing size with ties broken by old label.
pub fn size_order_mapping(labels: &[usize], k: usize) -> Vec<usize> {
    let sizes = cluster_sizes(labels, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut mapping = vec![0; k];
    for (new, old) in order.into_iter().enumerate() {
        mapping[old] = new + 1;
    }
    mapping
}

/// Renumbers clusters so that cluster 1 is the largest.
pub fn relabel_by_size<T: Scalar>(model: ClusterModel<T>) -> ClusterModel<T> {
    let mapping = size_order_mapping(&model.labels, model.k);
    let dim = model.dim;
    let mut centroids = vec![T::zero(); model.centroids.len()];
    for (old, &new) in mapping.iter().enumerate() {
        centroids[(new - 1) * dim..new * dim].copy_from_slice(&model.centroids[old * dim..(old + 1) * dim]);
    }
    let labels = model.labels.iter().map(|&l| mapping[l - 1]).collect();
    ClusterModel {
        centroids,
        labels,
        ..model
    }
}

/// Dense 0-based relabeling of arbitrary labels, in ascending label order.
pub(crate) fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // reassign ids in sorted order so the result does not depend on first appearance
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}
