//! Cluster model file: one line of JSON header, then `k × dim` little-endian
//! f64 centroids (cluster 1 first).

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{nearest, ClusterError, ClusterModel};
use crate::grid::CellId;
use crate::scalar::Scalar;
use crate::signatures::{minmax_scale, DayType, BINS};

pub const MODEL_FORMAT: &str = "vibrancy-cluster-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub dim: usize,
    pub bins: usize,
    pub categories: Vec<String>,
    pub day_type: DayType,
    pub seed: u64,
    pub n_iter: usize,
    pub converged: bool,
    pub inertia: f64,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel<T> {
    pub header: ModelHeader,
    pub centroids: Vec<T>,
}

impl<T: Scalar> StoredModel<T> {
    pub fn assign(&self, matrix: &[T]) -> Result<usize, ClusterError> {
        if matrix.len() != self.header.dim {
            return Err(ClusterError::ShapeMismatch {
                expected: self.header.dim,
                found: matrix.len(),
            });
        }
        Ok(nearest(&self.centroids, self.header.dim, matrix).0 + 1)
    }
}

pub fn write_model<T: Scalar, W: Write>(
    mut w: W,
    model: &ClusterModel<T>,
    categories: &[String],
    day_type: DayType,
) -> Result<(), ClusterError> {
    if model.dim != BINS * categories.len() {
        return Err(ClusterError::ShapeMismatch {
            expected: BINS * categories.len(),
            found: model.dim,
        });
    }
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: 1,
        k: model.k,
        dim: model.dim,
        bins: BINS,
        categories: categories.to_vec(),
        day_type,
        seed: model.seed,
        n_iter: model.n_iter,
        converged: model.converged,
        inertia: model.inertia.as_f64(),
        sizes: model.sizes(),
    };
    let line = serde_json::to_string(&header).map_err(|e| ClusterError::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut payload = Vec::with_capacity(model.centroids.len() * 8);
    for c in &model.centroids {
        payload.extend_from_slice(&c.as_f64().to_le_bytes());
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(r: R) -> Result<StoredModel<T>, ClusterError> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: ModelHeader =
        serde_json::from_slice(&line).map_err(|e| ClusterError::Format(format!("bad header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(ClusterError::Format(format!("unexpected format `{}`", header.format)));
    }
    let mut payload = vec![0u8; header.k * header.dim * 8];
    r.read_exact(&mut payload)
        .map_err(|e| ClusterError::Format(format!("truncated centroids: {e}")))?;
    let centroids = payload
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(StoredModel { header, centroids })
}

/// `col,row,cluster`, one line per cell.
pub fn write_labels_csv<W: Write>(out: W, cells: &[CellId], labels: &[usize]) -> Result<(), ClusterError> {
    if cells.len() != labels.len() {
        return Err(ClusterError::LengthMismatch {
            labels: labels.len(),
            points: cells.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| ClusterError::Io(e.into());
    w.write_record(["col", "row", "cluster"]).map_err(io)?;
    for (cell, label) in cells.iter().zip(labels) {
        w.write_record([cell.col.to_string(), cell.row.to_string(), label.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<(CellId, usize)>, ClusterError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| ClusterError::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["col", "row", "cluster"] {
        return Err(ClusterError::Format("labels header must be `col,row,cluster`".into()));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| ClusterError::Format(e.to_string()))?;
            let num = |i: usize| {
                rec[i]
                    .parse::<usize>()
                    .map_err(|_| ClusterError::Format(format!("bad number `{}`", &rec[i])))
            };
            Ok((CellId::new(num(0)? as u32, num(1)? as u32), num(2)?))
        })
        .collect()
}

/// Plot-ready centroid curves: `cluster,bin,category,value,scaled`, where
/// `scaled` is the min-max scaled curve of that cluster and category.
pub fn write_centroid_profiles_csv<T: Scalar, W: Write>(
    out: W,
    centroids: &[T],
    k: usize,
    categories: &[String],
) -> Result<(), ClusterError> {
    let d = categories.len();
    if centroids.len() != k * BINS * d {
        return Err(ClusterError::ShapeMismatch {
            expected: k * BINS * d,
            found: centroids.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| ClusterError::Io(e.into());
    w.write_record(["cluster", "bin", "category", "value", "scaled"])
        .map_err(io)?;
    for j in 0..k {
        let c = &centroids[j * BINS * d..(j + 1) * BINS * d];
        for (cat_idx, cat) in categories.iter().enumerate() {
            let curve: Vec<T> = (0..BINS).map(|b| c[b * d + cat_idx]).collect();
            let scaled = minmax_scale(&curve);
            for b in 0..BINS {
                w.write_record([
                    (j + 1).to_string(),
                    b.to_string(),
                    cat.clone(),
                    curve[b].as_f64().to_string(),
                    scaled[b].as_f64().to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
