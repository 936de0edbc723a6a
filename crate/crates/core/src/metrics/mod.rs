//! Projection-based completeness, disentanglement and informativeness.
//!
//! For a projection `ρ` with `U` latent groups and `V` factor groups:
//!
//! * completeness `C(ρ) = 1 - H_U(ρ(X) | ρ(Y))` (projected column entropy),
//! * disentanglement `D(ρ) = 1 - H_V(ρ(Y) | ρ(X))` (projected row entropy),
//!
//! where `(X, Y)` is the latent/factor pair distributed as the normalized
//! affinity matrix. A projection with a single latent (factor) group has
//! nothing to separate and scores `C = 1` (`D = 1`).

pub mod entropy;
mod report;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::joint::{JointDistribution, JointError};
use crate::regressors::Predictor;
use crate::schema::{projected_groups, HierarchySchema, ProjectedGroups, Projection, SchemaError, Side};

pub use report::{
    aggregate_groups, percent, BackgroundInfo, GroupMetrics, InformativenessReport, MetricReport,
    ProjectionScores, Summary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error("log base must be ≥ 1, got {0}")]
    InvalidBase(f64),
    #[error("probability mass must be non-negative and finite, got {0}")]
    InvalidMass(f64),
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("predictor/target shape mismatch: {0}")]
    Shape(String),
    #[error("no groups to aggregate")]
    NoGroups,
}

/// A joint distribution after coupled marginalization by a projection.
#[derive(Clone, Debug)]
pub struct ProjectedJoint {
    /// `U × V` masses.
    pub matrix: Array2<f64>,
    pub latent_groups: ProjectedGroups,
    pub factor_groups: ProjectedGroups,
}

impl ProjectedJoint {
    pub fn n_latent_groups(&self) -> usize {
        self.latent_groups.len()
    }

    pub fn n_factor_groups(&self) -> usize {
        self.factor_groups.len()
    }
}

/// Sums `P` over all tuple pairs that share projected labels.
pub fn marginalize(p: &JointDistribution, projection: &Projection) -> Result<ProjectedJoint, MetricsError> {
    let schema = p.schema();
    let latent_groups = projected_groups(schema, projection, Side::Latents)?;
    let factor_groups = projected_groups(schema, projection, Side::Factors)?;
    let mut matrix = Array2::zeros((latent_groups.len(), factor_groups.len()));
    for ((row, col), &mass) in p.matrix().indexed_iter() {
        matrix[(latent_groups.assignment[row], factor_groups.assignment[col])] += mass;
    }
    Ok(ProjectedJoint {
        matrix,
        latent_groups,
        factor_groups,
    })
}

fn score_from_entropy(joint: ArrayView2<'_, f64>, n_groups: usize) -> Result<f64, MetricsError> {
    if n_groups <= 1 {
        return Ok(1.0);
    }
    Ok(1.0 - entropy::conditional_entropy(joint, n_groups as f64)?)
}

/// `C(ρ)`.
pub fn completeness(p: &JointDistribution, projection: &Projection) -> Result<f64, MetricsError> {
    let pj = marginalize(p, projection)?;
    score_from_entropy(pj.matrix.view(), pj.n_latent_groups())
}

/// `D(ρ)`.
pub fn disentanglement(p: &JointDistribution, projection: &Projection) -> Result<f64, MetricsError> {
    let pj = marginalize(p, projection)?;
    score_from_entropy(pj.matrix.t(), pj.n_factor_groups())
}

/// Both scores from a single marginalization.
pub fn projection_scores(p: &JointDistribution, projection: &Projection) -> Result<(f64, f64), MetricsError> {
    let pj = marginalize(p, projection)?;
    Ok((
        score_from_entropy(pj.matrix.view(), pj.n_latent_groups())?,
        score_from_entropy(pj.matrix.t(), pj.n_factor_groups())?,
    ))
}

/// Per-item scores and their weighted averages in the unstructured
/// (identity-projection) setting.
#[derive(Clone, Debug, PartialEq)]
pub struct DciScores {
    /// `C_τ = 1 - H_L(P̃_{·,τ})`; `None` for factors with no mass.
    pub per_factor: Vec<Option<f64>>,
    /// `P[Y = τ]`.
    pub factor_weights: Vec<f64>,
    /// `Σ_τ P[Y = τ] C_τ`.
    pub completeness: f64,
    /// `D_τ̂ = 1 - H_F(P̃_{τ̂,·})`; `None` for latents with no mass.
    pub per_latent: Vec<Option<f64>>,
    /// `P[X = τ̂]`.
    pub latent_weights: Vec<f64>,
    /// `Σ_τ̂ P[X = τ̂] D_τ̂`.
    pub disentanglement: f64,
}

fn vector_scores(lanes: ndarray::iter::Lanes<'_, f64, ndarray::Ix1>, base: usize) -> Result<(Vec<Option<f64>>, Vec<f64>), MetricsError> {
    let mut scores = Vec::new();
    let mut weights = Vec::new();
    for lane in lanes {
        let mass: f64 = lane.sum();
        weights.push(mass);
        if mass <= 0.0 {
            scores.push(None);
            continue;
        }
        let score = if base <= 1 {
            1.0
        } else {
            let v: Vec<f64> = lane.to_vec();
            1.0 - entropy::entropy(&v, base as f64)?
        };
        scores.push(Some(score));
    }
    Ok((scores, weights))
}

fn weighted(scores: &[Option<f64>], weights: &[f64]) -> f64 {
    scores
        .iter()
        .zip(weights)
        .filter_map(|(s, &w)| s.map(|s| s * w))
        .sum()
}

pub fn dci_scores(p: &JointDistribution) -> Result<DciScores, MetricsError> {
    let m = p.matrix();
    let (l, f) = m.dim();
    let (per_factor, factor_weights) = vector_scores(m.columns(), l)?;
    let (per_latent, latent_weights) = vector_scores(m.rows(), f)?;
    Ok(DciScores {
        completeness: weighted(&per_factor, &factor_weights),
        disentanglement: weighted(&per_latent, &latent_weights),
        per_factor,
        factor_weights,
        per_latent,
        latent_weights,
    })
}

/// Completeness of each individual factor with latents grouped by the
/// projection: `1 - H_U(ρ(X) | Y = τ)`. For the identity projection this
/// is the DCI `C_τ`.
pub fn per_factor_completeness(p: &JointDistribution, projection: &Projection) -> Result<Vec<Option<f64>>, MetricsError> {
    let groups = projected_groups(p.schema(), projection, Side::Latents)?;
    let mut collapsed = Array2::zeros((groups.len(), p.schema().n_factors()));
    for (row, lane) in p.matrix().axis_iter(Axis(0)).enumerate() {
        let mut target = collapsed.row_mut(groups.assignment[row]);
        target += &lane;
    }
    Ok(vector_scores(collapsed.columns(), groups.len())?.0)
}

/// Normalized prediction error per factor and its unweighted mean.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Informativeness {
    /// `‖f_τ(z) - v_τ‖₂ / ‖v_τ‖₂`; `None` when the target has zero norm.
    pub per_factor: Vec<Option<f64>>,
    pub global: Option<f64>,
}

impl Informativeness {
    pub fn from_per_factor(per_factor: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = per_factor.iter().flatten().copied().collect();
        let global = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        Informativeness { per_factor, global }
    }
}

/// Evaluates a fitted predictor on held-out samples.
///
/// `targets` must already be standardized with statistics from the fit
/// split; the predictor is expected to output on the same scale.
pub fn informativeness<P: Predictor + ?Sized>(
    predictor: &P,
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<Informativeness, MetricsError> {
    let (n, d_out) = targets.dim();
    if features.nrows() != n {
        return Err(MetricsError::Shape(format!(
            "{} feature rows vs {} target rows",
            features.nrows(),
            n
        )));
    }
    if predictor.n_outputs() != d_out || predictor.n_inputs() != features.ncols() {
        return Err(MetricsError::Shape(format!(
            "predictor maps {}→{} but data is {}→{}",
            predictor.n_inputs(),
            predictor.n_outputs(),
            features.ncols(),
            d_out
        )));
    }
    let mut err = vec![0.0; d_out];
    let mut norm = vec![0.0; d_out];
    let mut out = vec![0.0; d_out];
    for (x, v) in features.rows().into_iter().zip(targets.rows()) {
        let x = x.to_vec();
        predictor.predict_into(&x, &mut out);
        for j in 0..d_out {
            err[j] += (out[j] - v[j]).powi(2);
            norm[j] += v[j] * v[j];
        }
    }
    let per_factor = err
        .iter()
        .zip(&norm)
        .map(|(&e, &n)| if n > 0.0 { Some((e / n).sqrt()) } else { None })
        .collect();
    Ok(Informativeness::from_per_factor(per_factor))
}

/// An importance matrix with the background slot and background factors
/// removed.
#[derive(Clone, Debug)]
pub struct StrippedProblem {
    pub matrix: Array2<f64>,
    pub schema: Arc<HierarchySchema>,
    /// Canonical indices (in the input schema) of the retained factors.
    pub kept_factors: Vec<usize>,
    /// Canonical indices of the retained latents.
    pub kept_latents: Vec<usize>,
    pub background: Option<BackgroundInfo>,
}

/// Removes background factors and the slot that carries most of their
/// importance. Slots are the groups of the first hierarchy level on the
/// latent side; ties go to the lowest slot.
pub fn strip_background(
    raw: &Array2<f64>,
    schema: &Arc<HierarchySchema>,
    background_factors: &[usize],
) -> Result<StrippedProblem, MetricsError> {
    let all_factors: Vec<usize> = (0..schema.n_factors()).collect();
    let all_latents: Vec<usize> = (0..schema.n_latents()).collect();
    if background_factors.is_empty() {
        return Ok(StrippedProblem {
            matrix: raw.clone(),
            schema: schema.clone(),
            kept_factors: all_factors,
            kept_latents: all_latents,
            background: None,
        });
    }
    let slots = projected_groups(schema, &Projection::single(0), Side::Latents)?;
    let slot_mass: Vec<f64> = slots
        .members
        .iter()
        .map(|rows| {
            rows.iter()
                .map(|&r| background_factors.iter().map(|&c| raw[(r, c)]).sum::<f64>())
                .sum()
        })
        .collect();
    let best = slot_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<usize> = (0..slots.len()).filter(|&s| slot_mass[s] == best).collect();
    let slot = candidates[0];
    let kept_factors: Vec<usize> = all_factors
        .into_iter()
        .filter(|c| !background_factors.contains(c))
        .collect();
    let kept_latents: Vec<usize> = all_latents
        .into_iter()
        .filter(|&r| slots.assignment[r] != slot)
        .collect();
    let reduced = schema.retain(&kept_factors, &kept_latents)?;
    let matrix = raw.select(Axis(0), &kept_latents).select(Axis(1), &kept_factors);
    let label = schema
        .projected_labels(Side::Latents, &[0], &slots.labels[slot])
        .join("|");
    Ok(StrippedProblem {
        matrix,
        schema: Arc::new(reduced),
        kept_factors,
        kept_latents,
        background: Some(BackgroundInfo {
            slot: label,
            slot_mass: best,
            tie: candidates.len() > 1,
        }),
    })
}

/// Scores one group's thresholded importance matrix.
pub fn evaluate_group(
    thresholded: &Array2<f64>,
    schema: &Arc<HierarchySchema>,
    projections: &[Projection],
    background_factors: &[usize],
    informativeness: Option<&Informativeness>,
) -> Result<GroupMetrics, MetricsError> {
    let stripped = strip_background(thresholded, schema, background_factors)?;
    let p = JointDistribution::normalize(stripped.schema.clone(), &stripped.matrix)?;
    let reduced = p.schema();
    let mut metrics = GroupMetrics::default();
    for projection in projections {
        projection.validate(reduced)?;
        let (c, d) = projection_scores(&p, projection)?;
        let name = projection.name(reduced);
        metrics.projections.insert(
            name.clone(),
            ProjectionScores {
                completeness: Some(c),
                disentanglement: Some(d),
            },
        );
        let per_factor = per_factor_completeness(&p, projection)?;
        let table = per_factor
            .into_iter()
            .enumerate()
            .map(|(j, c)| (reduced.tuple_key(Side::Factors, j), c))
            .collect();
        metrics.per_factor_by_projection.insert(name, table);
    }
    let dci = dci_scores(&p)?;
    for (j, (c, w)) in dci.per_factor.iter().zip(&dci.factor_weights).enumerate() {
        let key = reduced.tuple_key(Side::Factors, j);
        metrics.per_factor_completeness.insert(key.clone(), *c);
        metrics.factor_weights.insert(key, *w);
    }
    if let Some(info) = informativeness {
        let mut report = InformativenessReport {
            global: info.global,
            ..Default::default()
        };
        for (j, v) in info.per_factor.iter().enumerate() {
            report.per_factor.insert(schema.tuple_key(Side::Factors, j), *v);
        }
        metrics.informativeness = report;
    }
    metrics.background = stripped.background;
    Ok(metrics)
}
