//! Scalar encodings for categorical targets.
//!
//! Two classes map to `{-1, +1}`; three classes to a bijection onto
//! `{-1, 0, +1}`. With [`EncodingStrategy::MinimizeError`] every bijection
//! is scored by the validation error of a ridge model and the best one is
//! kept (first in enumeration order on ties).

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ridge_fit, Predictor, RegressorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Fixed,
    ErrorMinimizing {
        /// Validation MSE of each candidate, in enumeration order.
        candidate_errors: Vec<f64>,
        chosen: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoding {
    pub classes: Vec<String>,
    /// `values[k]` encodes `classes[k]`.
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Only one class occurs in the data, so the encoded column is constant.
    pub degenerate: bool,
}

impl TargetEncoding {
    pub fn encode(&self, class: usize) -> f64 {
        self.values[class]
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EncodingStrategy<'a> {
    /// Class order: first class gets the smallest value.
    Fixed,
    MinimizeError {
        features: ArrayView2<'a, f64>,
        fit: &'a [usize],
        validation: &'a [usize],
        lambda: f64,
    },
}

fn candidates(n_classes: usize) -> Vec<Vec<f64>> {
    match n_classes {
        2 => vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
        3 => {
            let base = [-1.0, 0.0, 1.0];
            let mut out = Vec::new();
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        if a != b && b != c && a != c {
                            out.push(vec![base[a], base[b], base[c]]);
                        }
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

fn validation_error(
    features: ArrayView2<'_, f64>,
    fit: &[usize],
    validation: &[usize],
    lambda: f64,
    target: &[f64],
) -> Result<f64, RegressorError> {
    let x_fit = features.select(Axis(0), fit);
    let y_fit = Array2::from_shape_fn((fit.len(), 1), |(i, _)| target[fit[i]]);
    let model = ridge_fit(x_fit.view(), y_fit.view(), lambda)?;
    let x_val = features.select(Axis(0), validation);
    let pred = model.predict(x_val.view());
    Ok(validation
        .iter()
        .enumerate()
        .map(|(i, &r)| (pred[(i, 0)] - target[r]).powi(2))
        .sum::<f64>()
        / validation.len().max(1) as f64)
}

/// Encodes a column of class indices into reals.
pub fn encode_targets(
    values: &[usize],
    classes: &[String],
    strategy: EncodingStrategy<'_>,
) -> Result<(Vec<f64>, TargetEncoding), RegressorError> {
    let n_classes = classes.len();
    if !(2..=3).contains(&n_classes) {
        return Err(RegressorError::UnsupportedEncoding(n_classes));
    }
    if let Some(&index) = values.iter().find(|&&v| v >= n_classes) {
        return Err(RegressorError::UnknownClass { index, n_classes });
    }
    let degenerate = values.windows(2).all(|w| w[0] == w[1]);
    let options = candidates(n_classes);
    let apply = |map: &[f64]| -> Vec<f64> { values.iter().map(|&v| map[v]).collect() };

    let (chosen, provenance) = match strategy {
        EncodingStrategy::MinimizeError {
            features,
            fit,
            validation,
            lambda,
        } if !degenerate => {
            if features.nrows() != values.len() {
                return Err(RegressorError::Shape(format!(
                    "{} feature rows vs {} targets",
                    features.nrows(),
                    values.len()
                )));
            }
            let errors = options
                .iter()
                .map(|map| validation_error(features, fit, validation, lambda, &apply(map)))
                .collect::<Result<Vec<f64>, _>>()?;
            let mut best = 0;
            for (i, &e) in errors.iter().enumerate() {
                if e < errors[best] {
                    best = i;
                }
            }
            (
                best,
                Provenance::ErrorMinimizing {
                    candidate_errors: errors,
                    chosen: best,
                },
            )
        }
        _ => (0, Provenance::Fixed),
    };
    let encoded = apply(&options[chosen]);
    Ok((
        encoded,
        TargetEncoding {
            classes: classes.to_vec(),
            values: options[chosen].clone(),
            provenance,
            degenerate,
        },
    ))
}
