use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::cholesky_solve;
use super::{check_finite, Predictor, RegressorError, Standardizer};

/// Multi-output ridge regression fitted on standardized inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub lambda: f64,
    /// Coefficients in standardized space, `d_in × d_out`.
    pub coefficients: Array2<f64>,
    pub input_stats: Standardizer,
    pub target_stats: Standardizer,
    /// Equivalent coefficients on raw inputs and targets.
    weights: Array2<f64>,
    intercept: Array1<f64>,
}

impl RidgeModel {
    /// Raw-space weights `W` with `predict(x) = Wᵀx + b`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> &Array1<f64> {
        &self.intercept
    }
}

/// Minimizes `‖Ỹ - X̃W‖² + λ‖W‖²` where `X̃`, `Ỹ` are the standardized
/// inputs and targets.
pub fn ridge_fit(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<RidgeModel, RegressorError> {
    if !(lambda >= 0.0) {
        return Err(RegressorError::NegativeLambda(lambda));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(RegressorError::TooFewSamples { needed: 1, got: 0 });
    }
    if y.nrows() != n {
        return Err(RegressorError::Shape(format!(
            "{n} input rows vs {} target rows",
            y.nrows()
        )));
    }
    check_finite(x)?;
    check_finite(y)?;
    let (d_in, d_out) = (x.ncols(), y.ncols());

    let input_stats = Standardizer::fit(x);
    let target_stats = Standardizer::fit(y);
    let xs = input_stats.transform(x);
    let ys = target_stats.transform(y);

    let mut gram = xs.t().dot(&xs);
    for i in 0..d_in {
        gram[(i, i)] += lambda;
    }
    let mut coefficients = xs.t().dot(&ys);
    cholesky_solve(gram, &mut coefficients).ok_or(RegressorError::Singular)?;

    let mut weights = coefficients.clone();
    for i in 0..d_in {
        for j in 0..d_out {
            weights[(i, j)] *= target_stats.scale[j] / input_stats.scale[i];
        }
    }
    let mean_x = Array1::from(input_stats.mean.clone());
    let intercept = Array1::from(target_stats.mean.clone()) - weights.t().dot(&mean_x);
    Ok(RidgeModel {
        lambda,
        coefficients,
        input_stats,
        target_stats,
        weights,
        intercept,
    })
}

impl Predictor for RidgeModel {
    fn n_inputs(&self) -> usize {
        self.weights.nrows()
    }

    fn n_outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.intercept[j];
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = self.weights.index_axis(Axis(0), i);
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += w * xi;
            }
        }
    }

    fn affine(&self) -> Option<(&Array2<f64>, &Array1<f64>)> {
        Some((&self.weights, &self.intercept))
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.intercept
    }
}
