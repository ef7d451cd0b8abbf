//! L2-regularized multinomial logistic regression from cell covariates to
//! cluster labels.
//!
//! Full softmax parameterization: every class has its own weight vector and
//! intercept. After fitting, weights and intercepts are centred across
//! classes (sum to zero), which leaves every prediction unchanged and makes
//! the coefficient table well defined.

mod io;
mod metrics;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureTable;
use crate::scalar::{ordered_sum, Scalar};

pub use io::{CoefficientTable, StoredLogit};
pub use metrics::{evaluate, ClassMetrics, MetricsReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} covariates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("model has not been fitted")]
    NotFitted,
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub lambda: f64,
    /// Stop once the gradient's ∞-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

/// Starting point of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Init<T> {
    Zeros,
    /// Standard normal draws from a seeded generator.
    Seeded(u64),
    /// Weights (`C × P`, class-major) followed by the `C` intercepts.
    Given(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub iterations: usize,
    pub converged: bool,
    pub loss: f64,
    pub grad_norm: f64,
    pub standardized: bool,
}

/// Row-major `n × p` design matrix.
#[derive(Debug, Clone, Copy)]
pub struct Design<'a, T> {
    data: &'a [T],
    p: usize,
}

impl<'a, T: Scalar> Design<'a, T> {
    pub fn new(data: &'a [T], p: usize) -> Result<Self, ModelError> {
        if p == 0 || !data.len().is_multiple_of(p) {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                found: data.len(),
            });
        }
        Ok(Self { data, p })
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialLogit<T> {
    /// Sorted class labels.
    pub classes: Vec<usize>,
    pub covariates: Vec<String>,
    pub lambda: f64,
    /// `C × P`, one row per class.
    pub weights: Vec<T>,
    pub intercepts: Vec<T>,
    pub fit: Option<FitRecord>,
}

impl<T: Scalar> MultinomialLogit<T> {
    /// Model with explicit parameters and no fit record.
    pub fn from_parameters(
        classes: Vec<usize>,
        covariates: Vec<String>,
        weights: Vec<T>,
        intercepts: Vec<T>,
    ) -> Result<Self, ModelError> {
        let (c, p) = (classes.len(), covariates.len());
        if weights.len() != c * p {
            return Err(ModelError::LengthMismatch(weights.len(), c * p));
        }
        if intercepts.len() != c {
            return Err(ModelError::LengthMismatch(intercepts.len(), c));
        }
        if !weights.iter().chain(&intercepts).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("parameters"));
        }
        Ok(Self {
            classes,
            covariates,
            lambda: 0.0,
            weights,
            intercepts,
            fit: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn weight(&self, class_idx: usize, covariate: usize) -> T {
        self.weights[class_idx * self.n_covariates() + covariate]
    }

    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_some_and(|f| f.converged)
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        let p = self.n_covariates();
        if x.len() != p {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                found: x.len(),
            });
        }
        Ok(logits(&self.weights, &self.intercepts, p, x))
    }

    /// `softmax(intercepts + weights · x)`.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Most probable class; exact ties go to the smallest label.
    pub fn predict(&self, x: &[T]) -> Result<usize, ModelError> {
        let probs = self.predict_proba(x)?;
        Ok(self.classes[argmax(&probs)])
    }

    pub fn predict_all(&self, x: &Design<'_, T>) -> Result<Vec<usize>, ModelError> {
        (0..x.n()).map(|i| self.predict(x.row(i))).collect()
    }

    /// Penalized loss at the current parameters.
    pub fn loss(&self, x: &Design<'_, T>, y: &[usize]) -> Result<T, ModelError> {
        let problem = Problem::new(x, y, &self.classes, self.lambda)?;
        Ok(problem.loss(&self.flat()))
    }

    fn flat(&self) -> Vec<T> {
        let mut theta = self.weights.clone();
        theta.extend_from_slice(&self.intercepts);
        theta
    }
}

fn logits<T: Scalar>(weights: &[T], intercepts: &[T], p: usize, x: &[T]) -> Vec<T> {
    intercepts
        .iter()
        .enumerate()
        .map(|(c, &b)| {
            let w = &weights[c * p..(c + 1) * p];
            w.iter().zip(x).fold(b, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = ordered_sum(&e);
    e.into_iter().map(|v| v / s).collect()
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Training data with labels mapped to class indices.
struct Problem<'a, T> {
    x: Design<'a, T>,
    y: Vec<usize>,
    c: usize,
    lambda: T,
}

impl<'a, T: Scalar> Problem<'a, T> {
    fn new(x: &Design<'a, T>, y: &[usize], classes: &[usize], lambda: f64) -> Result<Self, ModelError> {
        if y.len() != x.n() {
            return Err(ModelError::LengthMismatch(y.len(), x.n()));
        }
        let y = y
            .iter()
            .map(|l| {
                classes
                    .binary_search(l)
                    .map_err(|_| ModelError::Invalid(format!("label {l} is not a model class")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            x: *x,
            y,
            c: classes.len(),
            lambda: T::lit(lambda),
        })
    }

    fn dim(&self) -> usize {
        self.c * (self.x.p() + 1)
    }

    fn split<'t>(&self, theta: &'t [T]) -> (&'t [T], &'t [T]) {
        theta.split_at(self.c * self.x.p())
    }

    fn loss(&self, theta: &[T]) -> T {
        let (w, b) = self.split(theta);
        let p = self.x.p();
        let terms: Vec<T> = (0..self.x.n())
            .map(|i| {
                let z = logits(w, b, p, self.x.row(i));
                let m = z.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + ordered_sum(&z.iter().map(|&v| (v - m).exp()).collect::<Vec<_>>()).ln();
                lse - z[self.y[i]]
            })
            .collect();
        let n = T::from_count(self.x.n());
        let sq: Vec<T> = w.iter().map(|&v| v * v).collect();
        ordered_sum(&terms) / n + self.lambda / (T::lit(2.0) * n) * ordered_sum(&sq)
    }

    fn gradient(&self, theta: &[T]) -> Vec<T> {
        let (w, b) = self.split(theta);
        let p = self.x.p();
        let mut g = vec![T::zero(); theta.len()];
        for i in 0..self.x.n() {
            let x = self.x.row(i);
            let mut r = softmax(&logits(w, b, p, x));
            r[self.y[i]] -= T::one();
            for (c, &rc) in r.iter().enumerate() {
                for (gj, &xj) in g[c * p..(c + 1) * p].iter_mut().zip(x) {
                    *gj += rc * xj;
                }
                g[self.c * p + c] += rc;
            }
        }
        let n = T::from_count(self.x.n());
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < self.c * p {
                *gj += self.lambda / n * w[j];
            }
        }
        g
    }
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Fits from zero parameters. See [`fit_from`].
pub fn fit<T: Scalar>(
    x: &Design<'_, T>,
    y: &[usize],
    covariates: &[String],
    params: &FitParams,
) -> Result<MultinomialLogit<T>, ModelError> {
    fit_from(x, y, covariates, params, Init::Zeros)
}

/// Minimizes mean cross-entropy plus `(λ / 2N)·‖W‖²` (intercepts are not
/// penalized) by full-batch gradient descent. Each step starts from the
/// Barzilai–Borwein length and backtracks until the Armijo condition holds,
/// so the loss never increases. A model that hits `max_iter` is still
/// returned, with `converged = false` in its fit record.
pub fn fit_from<T: Scalar>(
    x: &Design<'_, T>,
    y: &[usize],
    covariates: &[String],
    params: &FitParams,
    init: Init<T>,
) -> Result<MultinomialLogit<T>, ModelError> {
    if covariates.len() != x.p() {
        return Err(ModelError::DimensionMismatch {
            expected: x.p(),
            found: covariates.len(),
        });
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(ModelError::Invalid(format!(
            "lambda must be finite and ≥ 0, got {}",
            params.lambda
        )));
    }
    if !x.data.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("covariates"));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ModelError::SingleClass);
    }
    let problem = Problem::new(x, y, &classes, params.lambda)?;
    let dim = problem.dim();
    let mut theta = match init {
        Init::Zeros => vec![T::zero(); dim],
        Init::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..dim).map(|_| T::lit(StandardNormal.sample(&mut rng))).collect()
        }
        Init::Given(v) => {
            if v.len() != dim {
                return Err(ModelError::LengthMismatch(v.len(), dim));
            }
            v
        }
    };

    let tol = T::lit(params.tol);
    let armijo = T::lit(1e-4);
    let mut loss = problem.loss(&theta);
    let mut grad = problem.gradient(&theta);
    let mut step = T::one();
    let mut iterations = 0;
    let mut converged = inf_norm(&grad) < tol;
    while !converged && iterations < params.max_iter {
        iterations += 1;
        let gg = dot(&grad, &grad);
        let mut t = step;
        let (next, next_loss) = loop {
            let cand: Vec<T> = theta.iter().zip(&grad).map(|(&a, &g)| a - t * g).collect();
            let l = problem.loss(&cand);
            if l <= loss - armijo * t * gg {
                break (Some(cand), l);
            }
            t *= T::lit(0.5);
            if t < T::epsilon() * T::epsilon() {
                break (None, loss);
            }
        };
        let Some(next) = next else {
            // no descent possible at working precision
            break;
        };
        let next_grad = problem.gradient(&next);
        let s: Vec<T> = next.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let d: Vec<T> = next_grad.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        let sd = dot(&s, &d);
        step = if sd > T::zero() { dot(&s, &s) / sd } else { T::one() };
        theta = next;
        loss = next_loss;
        grad = next_grad;
        converged = inf_norm(&grad) < tol;
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("fitted parameters"));
    }

    let (p, c) = (x.p(), classes.len());
    let (w, b) = theta.split_at(c * p);
    let mut weights = w.to_vec();
    let mut intercepts = b.to_vec();
    center_classes(&mut weights, &mut intercepts, c, p);
    Ok(MultinomialLogit {
        classes,
        covariates: covariates.to_vec(),
        lambda: params.lambda,
        weights,
        intercepts,
        fit: Some(FitRecord {
            iterations,
            converged,
            loss: loss.as_f64(),
            grad_norm: inf_norm(&grad).as_f64(),
            standardized: false,
        }),
    })
}

/// Sum-to-zero constraint: subtracts the across-class mean of every
/// covariate weight and of the intercepts.
fn center_classes<T: Scalar>(weights: &mut [T], intercepts: &mut [T], c: usize, p: usize) {
    let cf = T::from_count(c);
    for j in 0..p {
        let col: Vec<T> = (0..c).map(|k| weights[k * p + j]).collect();
        let mean = ordered_sum(&col) / cf;
        for k in 0..c {
            weights[k * p + j] -= mean;
        }
    }
    let mean = ordered_sum(intercepts) / cf;
    intercepts.iter_mut().for_each(|b| *b -= mean);
}

/// Fits on a feature table; the fit record notes whether it was standardized.
pub fn fit_features<T: Scalar>(
    table: &FeatureTable<T>,
    y: &[usize],
    params: &FitParams,
) -> Result<MultinomialLogit<T>, ModelError> {
    let x = Design::new(table.values(), crate::features::N_COVARIATES)?;
    let mut model = fit(&x, y, &FeatureTable::<T>::covariate_names(), params)?;
    if let Some(rec) = model.fit.as_mut() {
        rec.standardized = table.standardized;
    }
    Ok(model)
}

/// Largest discrepancy between the analytic gradient of the penalized loss
/// and central finite differences with step `h`, at the model's parameters.
///
/// Each coordinate's error is `|a − f| / max(1, |a|, |f|)`: relative for
/// large components, absolute for components near zero.
pub fn gradient_check<T: Scalar>(
    model: &MultinomialLogit<T>,
    x: &Design<'_, T>,
    y: &[usize],
    h: f64,
) -> Result<f64, ModelError> {
    let problem = Problem::new(x, y, &model.classes, model.lambda)?;
    let theta = model.flat();
    let analytic = problem.gradient(&theta);
    let h = T::lit(h);
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let fd = ((problem.loss(&plus) - problem.loss(&minus)) / (T::lit(2.0) * h)).as_f64();
        let a = analytic[j].as_f64();
        let err = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Seeded split of `0..n` into sorted `(train, test)` index lists with
/// `round(fraction · n)` test rows, at least one row on each side.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ModelError::Invalid(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(ModelError::Invalid(format!("cannot split {n} rows")));
    }
    let n_test = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
