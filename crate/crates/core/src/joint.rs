//! The normalized affinity matrix viewed as a joint law over latents × factors.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::HierarchySchema;

/// Sums must match 1 to this absolute tolerance.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error("matrix is {rows}×{cols} but the schema has L={latents} latents and F={factors} factors")]
    Shape {
        rows: usize,
        cols: usize,
        latents: usize,
        factors: usize,
    },
    #[error("entry ({row}, {col}) is negative or not finite: {value}")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("affinity matrix has no mass; cannot normalize")]
    Degenerate,
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
}

/// `P[X = latent, Y = factor]` laid out as an `L × F` matrix in the
/// schema's canonical tuple order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    schema: Arc<HierarchySchema>,
    matrix: Array2<f64>,
}

fn check_entries(matrix: &Array2<f64>) -> Result<f64, JointError> {
    let mut total = 0.0;
    for ((row, col), &value) in matrix.indexed_iter() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(JointError::InvalidEntry { row, col, value });
        }
        total += value;
    }
    Ok(total)
}

fn check_shape(schema: &HierarchySchema, matrix: &Array2<f64>) -> Result<(), JointError> {
    let (rows, cols) = matrix.dim();
    if rows != schema.n_latents() || cols != schema.n_factors() {
        return Err(JointError::Shape {
            rows,
            cols,
            latents: schema.n_latents(),
            factors: schema.n_factors(),
        });
    }
    Ok(())
}

impl JointDistribution {
    /// Wraps an already-normalized matrix.
    pub fn new(schema: Arc<HierarchySchema>, matrix: Array2<f64>) -> Result<Self, JointError> {
        check_shape(&schema, &matrix)?;
        let total = check_entries(&matrix)?;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(JointError::NotNormalized(total));
        }
        Ok(JointDistribution { schema, matrix })
    }

    /// `P = R / ΣR`.
    pub fn normalize(schema: Arc<HierarchySchema>, raw: &Array2<f64>) -> Result<Self, JointError> {
        check_shape(&schema, raw)?;
        let total = check_entries(raw)?;
        if total <= 0.0 {
            return Err(JointError::Degenerate);
        }
        let matrix = raw / total;
        Ok(JointDistribution { schema, matrix })
    }

    pub fn schema(&self) -> &HierarchySchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<HierarchySchema> {
        &self.schema
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// `P[Y = τ]` for every factor.
    pub fn factor_weights(&self) -> Vec<f64> {
        self.matrix.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// `P[X = τ̂]` for every latent dimension.
    pub fn latent_weights(&self) -> Vec<f64> {
        self.matrix.rows().into_iter().map(|r| r.sum()).collect()
    }
}

/// Normalizes a thresholded importance matrix into a joint distribution.
pub fn normalize_joint(
    raw: &Array2<f64>,
    schema: Arc<HierarchySchema>,
) -> Result<JointDistribution, JointError> {
    JointDistribution::normalize(schema, raw)
}
