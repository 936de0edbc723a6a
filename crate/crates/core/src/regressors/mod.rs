//! Predictors used by the probe: multi-output ridge regression for the
//! alignment loop, CART forests for the final importances, and encodings
//! for categorical targets.

mod encoding;
mod forest;
mod linalg;
mod ridge;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoding::{encode_targets, EncodingStrategy, Provenance, TargetEncoding};
pub use forest::{
    fit_forests, forest_fit, forest_importances, ForestParams, ForestSet, Node, RandomForest,
    RegressionTree,
};
pub use ridge::{ridge_fit, RidgeModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressorError {
    #[error("ridge strength must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input contains NaN or infinite values")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("normal equations are singular; use a positive ridge strength")]
    Singular,
    #[error("categorical targets with {0} classes are unsupported (only 2 or 3)")]
    UnsupportedEncoding(usize),
    #[error("class index {index} out of range for {n_classes} classes")]
    UnknownClass { index: usize, n_classes: usize },
}

/// Anything that maps a feature row to a vector of outputs.
pub trait Predictor: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict_into(&self, x: &[f64], out: &mut [f64]);

    /// `(W, b)` such that `predict(x) = Wᵀx + b`, when the model is affine.
    fn affine(&self) -> Option<(&Array2<f64>, &Array1<f64>)> {
        None
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_outputs()));
        let mut buf = vec![0.0; self.n_outputs()];
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let row = row.to_vec();
            self.predict_into(&row, &mut buf);
            dst.assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        out
    }
}

/// Per-column centering and scaling. Constant columns keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of the given rows of `data`.
    pub fn fit_rows(data: ArrayView2<'_, f64>, rows: &[usize]) -> Standardizer {
        let d = data.ncols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                mean[j] += data[(r, j)];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                var[j] += (data[(r, j)] - mean[j]).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn fit(data: ArrayView2<'_, f64>) -> Standardizer {
        let rows: Vec<usize> = (0..data.nrows()).collect();
        Self::fit_rows(data, &rows)
    }

    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

pub(crate) fn check_finite(data: ArrayView2<'_, f64>) -> Result<(), RegressorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RegressorError::NonFinite)
    }
}
