use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, silhouette, ClusterError, ClusterModel, KMeansParams, Points};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub kmeans: KMeansParams,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            k_min: 3,
            k_max: 10,
            seed: 0,
            restarts: 10,
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
    /// Seed of the restart kept for this k.
    pub seed: u64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub scores: Vec<KScore>,
    pub chosen_k: usize,
    pub tie_break: Option<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for restart `restart` at cluster count `k`.
pub fn derive_seed(seed: u64, k: usize, restart: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((k as u64) << 32) | restart as u64))
}

fn best_of_restarts<T: Scalar>(
    points: &Points<'_, T>,
    k: usize,
    params: &SelectParams,
) -> Result<ClusterModel<T>, ClusterError> {
    let mut best: Option<ClusterModel<T>> = None;
    for r in 0..params.restarts.max(1) {
        let model = kmeans(points, k, derive_seed(params.seed, k, r), &params.kmeans)?;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Runs k-means for every k in `[k_min, k_max]` (best restart by inertia)
/// and keeps the k with the highest silhouette; ties go to the smallest k.
pub fn select_k<T: Scalar>(
    points: &Points<'_, T>,
    params: &SelectParams,
) -> Result<(ClusterModel<T>, KSelectionReport), ClusterError> {
    let (k_min, k_max) = (params.k_min, params.k_max);
    if k_min < 2 || k_min > k_max {
        return Err(ClusterError::InvalidRange(k_min, k_max));
    }
    if k_max > points.len() {
        return Err(ClusterError::KTooLarge {
            k: k_max,
            n: points.len(),
        });
    }
    let runs: Vec<(ClusterModel<T>, T)> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let model = best_of_restarts(points, k, params)?;
            let score = silhouette(points, &model.labels)?;
            Ok((model, score))
        })
        .collect::<Result<_, ClusterError>>()?;

    let mut chosen = 0;
    for (i, (_, s)) in runs.iter().enumerate() {
        if *s > runs[chosen].1 {
            chosen = i;
        }
    }
    let best_score = runs[chosen].1;
    let tied: Vec<usize> = runs
        .iter()
        .filter(|(_, s)| *s == best_score)
        .map(|(m, _)| m.k)
        .collect();
    let tie_break = (tied.len() > 1).then(|| {
        format!(
            "silhouette {} shared by k = {:?}; smallest k kept",
            best_score.as_f64(),
            tied
        )
    });
    let scores = runs
        .iter()
        .map(|(m, s)| KScore {
            k: m.k,
            silhouette: s.as_f64(),
            inertia: m.inertia.as_f64(),
            seed: m.seed,
            converged: m.converged,
        })
        .collect();
    let chosen_k = runs[chosen].0.k;
    let model = runs.into_iter().nth(chosen).unwrap().0;
    Ok((
        model,
        KSelectionReport {
            scores,
            chosen_k,
            tie_break,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_pick_smallest_k() {
        let data = vec![1.0; 40];
        let pts = Points::new(&data, 2).unwrap();
        let (model, report) = select_k(
            &pts,
            &SelectParams {
                restarts: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.chosen_k, 3);
        assert_eq!(model.k, 3);
        assert!(report.scores.iter().all(|s| s.silhouette == 0.0));
        assert!(report.tie_break.is_some());
        assert_eq!(report.scores.len(), 8);
    }

    #[test]
    fn range_errors() {
        let data = vec![0.0, 1.0, 2.0, 3.0];
        let pts = Points::new(&data, 1).unwrap();
        assert!(matches!(
            select_k(&pts, &SelectParams::default()),
            Err(ClusterError::KTooLarge { .. })
        ));
        let p = SelectParams {
            k_min: 4,
            k_max: 3,
            ..Default::default()
        };
        assert!(matches!(select_k(&pts, &p), Err(ClusterError::InvalidRange(4, 3))));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 3, 0), derive_seed(1, 3, 1));
        assert_ne!(derive_seed(1, 3, 0), derive_seed(1, 4, 0));
        assert_eq!(derive_seed(9, 5, 2), derive_seed(9, 5, 2));
    }
}
