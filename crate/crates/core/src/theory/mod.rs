//! Numerical checks of the relations between joint and per-level scores:
//! DCI equivalence, the decomposition lower bound, the upper bound with
//! interaction terms and the exact two-part identity.

mod info;
mod verify;

use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;
use thiserror::Error;

use crate::joint::{JointDistribution, JointError};
use crate::metrics::{completeness, dci_scores, disentanglement, MetricsError};
use crate::schema::{check_decomposition, projected_groups, HierarchySchema, Projection, SchemaError, Side};

pub use info::{check_lemmas, conditional_mutual_information, mutual_information, DiscreteJoint, LemmaCheck};
pub use verify::{
    verify_case, verify_lemmas, CaseReport, LemmaReport, EQUIVALENCE_TOLERANCE, IDENTITY_TOLERANCE, LEMMA_TOLERANCE,
};

/// Slack below which an inequality still counts as satisfied.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("probability mass must be non-negative and finite, got {0}")]
    InvalidMass(f64),
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("variable {index} out of range for {n_vars} variables")]
    UnknownVariable { index: usize, n_vars: usize },
    #[error("expected a three-variable table, got {0} variables")]
    Arity(usize),
    #[error("parts do not decompose the projection")]
    InvalidDecomposition,
    #[error("the joint projection has a single {0} group")]
    SingleGroup(Side),
    #[error("concentration must be positive, got {0}")]
    Concentration(f64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Completeness,
    Disentanglement,
}

/// Per-part quantities entering a bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartComponents {
    pub part: String,
    /// `L^s` (completeness) or `F^s` (disentanglement).
    pub groups: usize,
    pub score: f64,
    /// `log_{L^s} L` (or `log_{F^s} F`).
    pub log_ratio: f64,
    /// `(1 − score) / log_ratio`.
    pub corrected_error: f64,
    /// `A_s` / `B_s`, when the bound uses it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interaction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheckResult {
    pub metric: Metric,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    pub holds: bool,
    pub components: Vec<PartComponents>,
}

impl BoundCheckResult {
    fn new(metric: Metric, lhs: f64, rhs: f64, components: Vec<PartComponents>) -> Self {
        BoundCheckResult {
            metric,
            lhs,
            rhs,
            slack: rhs - lhs,
            holds: lhs <= rhs + BOUND_TOLERANCE,
            components,
        }
    }
}

/// `1 − k + Σ s_i ≤ 1 − Σ (1 − s_i)/log ≤ joint`, as two inequalities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundCheck {
    pub additive: BoundCheckResult,
    pub corrected: BoundCheckResult,
}

impl LowerBoundCheck {
    pub fn holds(&self) -> bool {
        self.additive.holds && self.corrected.holds
    }

    pub fn min_slack(&self) -> f64 {
        self.additive.slack.min(self.corrected.slack)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub metric: Metric,
    /// Score of the joint projection computed directly.
    pub joint: f64,
    /// Right-hand side of the identity.
    pub formula: f64,
    pub residual: f64,
    /// The three conditional mutual informations, in order.
    pub interaction_terms: [f64; 3],
    pub components: Vec<PartComponents>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Both<T> {
    pub completeness: T,
    pub disentanglement: T,
}

/// `P` re-expressed over the per-part group variables
/// `(X_1, …, X_k, Y_1, …, Y_k)`.
struct PartVariables {
    joint: DiscreteJoint,
    k: usize,
    latent_groups: Vec<usize>,
    factor_groups: Vec<usize>,
    n_latent: usize,
    n_factor: usize,
}

impl PartVariables {
    fn build(p: &JointDistribution, projection: &Projection, parts: &[Projection]) -> Result<Self, TheoryError> {
        let schema = p.schema();
        projection.validate(schema)?;
        for part in parts {
            part.validate(schema)?;
        }
        if parts.is_empty() || !check_decomposition(projection, parts) {
            return Err(TheoryError::InvalidDecomposition);
        }
        let k = parts.len();
        let lat: Vec<_> = parts
            .iter()
            .map(|q| projected_groups(schema, q, Side::Latents))
            .collect::<Result<_, _>>()?;
        let fac: Vec<_> = parts
            .iter()
            .map(|q| projected_groups(schema, q, Side::Factors))
            .collect::<Result<_, _>>()?;
        let n_latent = projected_groups(schema, projection, Side::Latents)?.len();
        let n_factor = projected_groups(schema, projection, Side::Factors)?.len();
        if n_latent < 2 {
            return Err(TheoryError::SingleGroup(Side::Latents));
        }
        if n_factor < 2 {
            return Err(TheoryError::SingleGroup(Side::Factors));
        }
        let shape: Vec<usize> = lat.iter().map(|g| g.len()).chain(fac.iter().map(|g| g.len())).collect();
        let mut table = ArrayD::<f64>::zeros(IxDyn(&shape));
        let mut idx = vec![0; 2 * k];
        for ((r, c), &mass) in p.matrix().indexed_iter() {
            if mass == 0.0 {
                continue;
            }
            for s in 0..k {
                idx[s] = lat[s].assignment[r];
                idx[k + s] = fac[s].assignment[c];
            }
            table[IxDyn(&idx)] += mass;
        }
        Ok(PartVariables {
            joint: DiscreteJoint::new(table)?,
            k,
            latent_groups: lat.iter().map(|g| g.len()).collect(),
            factor_groups: fac.iter().map(|g| g.len()).collect(),
            n_latent,
            n_factor,
        })
    }

    fn x(&self, s: usize) -> usize {
        s
    }

    fn y(&self, s: usize) -> usize {
        self.k + s
    }

    /// Variables of the other parts on the given side.
    fn others(&self, s: usize, side: Side) -> Vec<usize> {
        (0..self.k)
            .filter(|&t| t != s)
            .map(|t| match side {
                Side::Latents => self.x(t),
                Side::Factors => self.y(t),
            })
            .collect()
    }
}

fn log_ratio(total: usize, part: usize) -> f64 {
    (total as f64).ln() / (part as f64).ln()
}

fn components(
    p: &JointDistribution,
    parts: &[Projection],
    vars: &PartVariables,
    metric: Metric,
) -> Result<Vec<PartComponents>, TheoryError> {
    let schema = p.schema();
    parts
        .iter()
        .enumerate()
        .map(|(s, part)| {
            let (score, groups, total) = match metric {
                Metric::Completeness => (completeness(p, part)?, vars.latent_groups[s], vars.n_latent),
                Metric::Disentanglement => (disentanglement(p, part)?, vars.factor_groups[s], vars.n_factor),
            };
            let ratio = log_ratio(total, groups);
            // A single group scores 1, so its term vanishes whatever the ratio.
            let corrected_error = if groups < 2 { 0.0 } else { (1.0 - score) / ratio };
            Ok(PartComponents {
                part: part.name(schema),
                groups,
                score,
                log_ratio: ratio,
                corrected_error,
                interaction: None,
            })
        })
        .collect()
}

fn joint_score(p: &JointDistribution, projection: &Projection, metric: Metric) -> Result<f64, TheoryError> {
    Ok(match metric {
        Metric::Completeness => completeness(p, projection)?,
        Metric::Disentanglement => disentanglement(p, projection)?,
    })
}

fn lower_for(
    p: &JointDistribution,
    projection: &Projection,
    parts: &[Projection],
    vars: &PartVariables,
    metric: Metric,
) -> Result<LowerBoundCheck, TheoryError> {
    let comps = components(p, parts, vars, metric)?;
    let k = parts.len() as f64;
    let additive = 1.0 - k + comps.iter().map(|c| c.score).sum::<f64>();
    let corrected = 1.0 - comps.iter().map(|c| c.corrected_error).sum::<f64>();
    let joint = joint_score(p, projection, metric)?;
    Ok(LowerBoundCheck {
        additive: BoundCheckResult::new(metric, additive, corrected, comps.clone()),
        corrected: BoundCheckResult::new(metric, corrected, joint, comps),
    })
}

/// Lower bound chain for completeness and disentanglement.
pub fn check_lower_bound(
    p: &JointDistribution,
    projection: &Projection,
    parts: &[Projection],
) -> Result<Both<LowerBoundCheck>, TheoryError> {
    let vars = PartVariables::build(p, projection, parts)?;
    Ok(Both {
        completeness: lower_for(p, projection, parts, &vars, Metric::Completeness)?,
        disentanglement: lower_for(p, projection, parts, &vars, Metric::Disentanglement)?,
    })
}

fn upper_for(
    p: &JointDistribution,
    projection: &Projection,
    parts: &[Projection],
    vars: &PartVariables,
    metric: Metric,
) -> Result<BoundCheckResult, TheoryError> {
    let mut comps = components(p, parts, vars, metric)?;
    let mut worst = f64::NEG_INFINITY;
    for (s, comp) in comps.iter_mut().enumerate() {
        let interaction = match metric {
            Metric::Completeness => vars.joint.mutual_information(
                &[vars.x(s)],
                &vars.others(s, Side::Factors),
                &[vars.y(s)],
                vars.n_latent as f64,
            )?,
            Metric::Disentanglement => vars.joint.mutual_information(
                &[vars.y(s)],
                &vars.others(s, Side::Latents),
                &[vars.x(s)],
                vars.n_factor as f64,
            )?,
        };
        comp.interaction = Some(interaction);
        worst = worst.max(comp.corrected_error - interaction);
    }
    let joint = joint_score(p, projection, metric)?;
    Ok(BoundCheckResult::new(metric, joint, 1.0 - worst, comps))
}

/// `score(ρ) ≤ 1 − max_s [(1 − score_s)/log_ratio_s − interaction_s]`.
pub fn check_upper_bound(
    p: &JointDistribution,
    projection: &Projection,
    parts: &[Projection],
) -> Result<Both<BoundCheckResult>, TheoryError> {
    let vars = PartVariables::build(p, projection, parts)?;
    Ok(Both {
        completeness: upper_for(p, projection, parts, &vars, Metric::Completeness)?,
        disentanglement: upper_for(p, projection, parts, &vars, Metric::Disentanglement)?,
    })
}

fn identity_for(
    p: &JointDistribution,
    projection: &Projection,
    parts: &[Projection],
    vars: &PartVariables,
    metric: Metric,
) -> Result<IdentityCheck, TheoryError> {
    let comps = components(p, parts, vars, metric)?;
    let j = &vars.joint;
    let (x1, x2, y1, y2) = (vars.x(0), vars.x(1), vars.y(0), vars.y(1));
    let terms = match metric {
        Metric::Completeness => {
            let base = vars.n_latent as f64;
            [
                j.mutual_information(&[x1], &[y2], &[y1], base)?,
                j.mutual_information(&[x2], &[y1], &[y2], base)?,
                j.mutual_information(&[x1], &[x2], &[y1, y2], base)?,
            ]
        }
        Metric::Disentanglement => {
            let base = vars.n_factor as f64;
            [
                j.mutual_information(&[y1], &[x2], &[x1], base)?,
                j.mutual_information(&[y2], &[x1], &[x2], base)?,
                j.mutual_information(&[y1], &[y2], &[x1, x2], base)?,
            ]
        }
    };
    let formula = 1.0 - comps[0].corrected_error - comps[1].corrected_error + terms.iter().sum::<f64>();
    let joint = joint_score(p, projection, metric)?;
    Ok(IdentityCheck {
        metric,
        joint,
        formula,
        residual: joint - formula,
        interaction_terms: terms,
        components: comps,
    })
}

/// Exact two-part decomposition of the joint scores of `p1 ∪ p2`.
pub fn check_k2_identity(
    p: &JointDistribution,
    p1: &Projection,
    p2: &Projection,
) -> Result<Both<IdentityCheck>, TheoryError> {
    let union = p1.union(p2).map_err(|_| TheoryError::InvalidDecomposition)?;
    let parts = [p1.clone(), p2.clone()];
    let vars = PartVariables::build(p, &union, &parts)?;
    Ok(Both {
        completeness: identity_for(p, &union, &parts, &vars, Metric::Completeness)?,
        disentanglement: identity_for(p, &union, &parts, &vars, Metric::Disentanglement)?,
    })
}

/// Gap between the identity-projection scores and the DCI weighted averages.
pub fn check_dci_equivalence(p: &JointDistribution) -> Result<Both<f64>, TheoryError> {
    let id = Projection::identity(p.schema());
    let dci = dci_scores(p)?;
    Ok(Both {
        completeness: (completeness(p, &id)? - dci.completeness).abs(),
        disentanglement: (disentanglement(p, &id)? - dci.disentanglement).abs(),
    })
}

/// Dirichlet(`concentration`) mass over the `L × F` cells.
pub fn random_joint<R: Rng + ?Sized>(
    schema: Arc<HierarchySchema>,
    concentration: f64,
    rng: &mut R,
) -> Result<JointDistribution, TheoryError> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(TheoryError::Concentration(concentration));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|_| TheoryError::Concentration(concentration))?;
    let shape = (schema.n_latents(), schema.n_factors());
    loop {
        let raw = Array2::from_shape_fn(shape, |_| gamma.sample(rng));
        if raw.sum() > 0.0 {
            return Ok(JointDistribution::normalize(schema, &raw)?);
        }
    }
}

/// A schema together with the single-level parts of its identity projection.
#[derive(Clone, Debug)]
pub struct VerificationCase {
    pub name: String,
    pub schema: Arc<HierarchySchema>,
    pub parts: Vec<Projection>,
}

impl VerificationCase {
    pub fn new(name: &str, schema: HierarchySchema) -> Self {
        let parts = (0..schema.n_levels()).map(Projection::single).collect();
        VerificationCase {
            name: name.into(),
            schema: Arc::new(schema),
            parts,
        }
    }

    pub fn identity(&self) -> Projection {
        Projection::identity(&self.schema)
    }
}

/// Toy 2-level, asymmetric 2-level and 3-level schemas.
pub fn verification_cases() -> Vec<VerificationCase> {
    use crate::schema::presets;
    vec![
        VerificationCase::new("toy", presets::toy()),
        VerificationCase::new(
            "asymmetric",
            presets::object_property(3, &["color", "size", "x"], 2, 3),
        ),
        VerificationCase::new("three-level", presets::three_level(2, &["color"], &["x", "y"], 2)),
    ]
}

/// Concentrations cycled through by the Monte Carlo checks.
pub const CONCENTRATIONS: [f64; 3] = [0.1, 1.0, 10.0];
