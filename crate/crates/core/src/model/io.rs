use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FitRecord, ModelError, MultinomialLogit};
use crate::scalar::Scalar;

pub const LOGIT_FORMAT: &str = "vibrancy-multinomial-logit";

/// JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLogit {
    pub format: String,
    pub classes: Vec<usize>,
    pub covariates: Vec<String>,
    pub lambda: f64,
    /// One row per class.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub fit: Option<FitRecord>,
}

impl<T: Scalar> MultinomialLogit<T> {
    pub fn to_stored(&self) -> StoredLogit {
        let p = self.n_covariates();
        StoredLogit {
            format: LOGIT_FORMAT.into(),
            classes: self.classes.clone(),
            covariates: self.covariates.clone(),
            lambda: self.lambda,
            weights: (0..self.n_classes())
                .map(|c| self.weights[c * p..(c + 1) * p].iter().map(|w| w.as_f64()).collect())
                .collect(),
            intercepts: self.intercepts.iter().map(|b| b.as_f64()).collect(),
            fit: self.fit.clone(),
        }
    }

    pub fn from_stored(s: StoredLogit) -> Result<Self, ModelError> {
        if s.format != LOGIT_FORMAT {
            return Err(ModelError::Format(format!("unexpected format `{}`", s.format)));
        }
        if s.weights.len() != s.classes.len() || s.weights.iter().any(|r| r.len() != s.covariates.len()) {
            return Err(ModelError::Format(
                "weight matrix shape does not match classes × covariates".into(),
            ));
        }
        let weights = s.weights.iter().flatten().map(|&w| T::lit(w)).collect();
        let intercepts = s.intercepts.iter().map(|&b| T::lit(b)).collect();
        let mut m = Self::from_parameters(s.classes, s.covariates, weights, intercepts)?;
        m.lambda = s.lambda;
        m.fit = s.fit;
        Ok(m)
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(&mut out, &self.to_stored()).map_err(|e| ModelError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self, ModelError> {
        let s: StoredLogit = serde_json::from_reader(input).map_err(|e| ModelError::Format(e.to_string()))?;
        Self::from_stored(s)
    }

    /// Coefficients with one row per covariate and one column per class.
    pub fn coefficient_table(&self) -> Result<CoefficientTable, ModelError> {
        if self.fit.is_none() {
            return Err(ModelError::NotFitted);
        }
        let (c, p) = (self.n_classes(), self.n_covariates());
        let values = (0..p)
            .flat_map(|j| (0..c).map(move |k| (j, k)))
            .map(|(j, k)| self.weight(k, j).as_f64())
            .collect();
        Ok(CoefficientTable {
            covariates: self.covariates.clone(),
            classes: self.classes.clone(),
            values,
            intercepts: self.intercepts.iter().map(|b| b.as_f64()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub covariates: Vec<String>,
    pub classes: Vec<usize>,
    /// `P × C`, row-major by covariate.
    pub values: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl CoefficientTable {
    pub fn get(&self, covariate: usize, class_idx: usize) -> f64 {
        self.values[covariate * self.classes.len() + class_idx]
    }

    pub fn column(&self, class_idx: usize) -> Vec<f64> {
        (0..self.covariates.len()).map(|j| self.get(j, class_idx)).collect()
    }

    /// `covariate,cluster_1,…,cluster_C`, with the intercepts as a last row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| ModelError::Io(e.into());
        let mut header = vec!["covariate".to_string()];
        header.extend(self.classes.iter().map(|c| format!("cluster_{c}")));
        w.write_record(&header).map_err(io)?;
        for (j, name) in self.covariates.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend((0..self.classes.len()).map(|k| self.get(j, k).to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        let mut rec = vec!["intercept".to_string()];
        rec.extend(self.intercepts.iter().map(|b| b.to_string()));
        w.write_record(&rec).map_err(io)?;
        w.flush()?;
        Ok(())
    }
}
