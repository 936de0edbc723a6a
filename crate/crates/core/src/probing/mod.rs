//! Permutation-invariant probing: alternate a ridge fit with a per-sample
//! search for the slot order that best explains the factors, then fit the
//! final forests on the aligned latents and read off their importances.

mod permutation;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FactorCatalog, FactorKind, Group, GroupedDataset, SlotLayout};
use crate::joint::{JointDistribution, JointError};
use crate::metrics::{informativeness, Informativeness, MetricsError};
use crate::regressors::{
    encode_targets, fit_forests, forest_importances, ridge_fit, EncodingStrategy, ForestParams, ForestSet,
    RegressorError, Standardizer, TargetEncoding,
};
use crate::schema::HierarchySchema;

pub use permutation::{
    apply_slot_permutation, apply_slot_permutation_into, best_permutation, best_permutation_scalar,
    check_permutation, compose_permutations, for_each_permutation, invert_permutation, is_identity,
    AffineSearch, BestPermutation, MAX_FREE_SLOTS,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("permutation moves pinned slot {0}")]
    PinnedSlotMoved(usize),
    #[error("{free_slots} free slots exceed the exhaustive search limit of {MAX_FREE_SLOTS}")]
    Capacity { free_slots: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("group {0} has no latents")]
    MissingLatents(usize),
    #[error("group {group}: non-finite latent at sample {sample}")]
    NonFiniteLatent { group: usize, sample: usize },
    #[error("group {group}: {source}")]
    Regressor {
        group: usize,
        #[source]
        source: RegressorError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Maximum number of EM iterations; 0 skips alignment entirely.
    pub n_iters: usize,
    pub ridge_lambda: f64,
    pub forest: ForestParams,
    pub threshold_fraction: f64,
    /// Stop after an E step that changes no permutation.
    pub early_stop: bool,
    /// Slots kept in place in addition to the layout's pinned slots.
    pub pinned_slots: Vec<usize>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_iters: 100,
            ridge_lambda: 1.0,
            forest: ForestParams::default(),
            threshold_fraction: 0.03,
            early_stop: true,
            pinned_slots: Vec::new(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(0.0..1.0).contains(&self.threshold_fraction) {
            return Err(ProbeError::Config(format!(
                "threshold_fraction {} outside [0, 1)",
                self.threshold_fraction
            )));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(ProbeError::Config(format!("ridge_lambda {} < 0", self.ridge_lambda)));
        }
        if self.forest.n_trees == 0 {
            return Err(ProbeError::Config("forest needs at least one tree".into()));
        }
        Ok(())
    }

    fn layout(&self, layout: &SlotLayout) -> Result<SlotLayout, ProbeError> {
        let mut merged = layout.clone();
        for &s in &self.pinned_slots {
            if !merged.pinned_slots.contains(&s) {
                merged.pinned_slots.push(s);
            }
        }
        merged.pinned_slots.sort_unstable();
        merged
            .validate()
            .map_err(|e| ProbeError::Config(e.to_string()))?;
        Ok(merged)
    }
}

/// Zeroes entries below `fraction` of their column maximum.
pub fn threshold_importances(raw: &Array2<f64>, fraction: f64) -> Array2<f64> {
    let mut out = raw.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.iter().cloned().fold(0.0, f64::max);
        let cut = fraction * max;
        col.mapv_inplace(|v| if v < cut { 0.0 } else { v });
    }
    out
}

/// Per-iteration record of the EM loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    /// Fit samples whose permutation changed in each E step.
    pub changes: Vec<usize>,
    /// `Σ_j ‖v_j − f(z_j)‖₂` before each E step (current alignment).
    pub residual_before: Vec<f64>,
    /// Same sum after each E step, with the same `f`.
    pub residual_after: Vec<f64>,
    pub stopped_early: bool,
    /// E steps whose residual went up.
    pub violations: usize,
}

impl ProbeTrace {
    pub fn total_changes(&self) -> usize {
        self.changes.iter().sum()
    }

    /// Share of all changes made in the first quarter of an iteration
    /// budget of `n_iters`.
    pub fn early_change_fraction(&self, n_iters: usize) -> Option<f64> {
        let total = self.total_changes();
        if total == 0 {
            return None;
        }
        let quarter = n_iters.div_ceil(4).min(self.changes.len());
        Some(self.changes[..quarter].iter().sum::<usize>() as f64 / total as f64)
    }
}

/// Probing output for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupProbe {
    pub group_id: usize,
    /// `permutations[j]` maps the input latent of sample `j` to its aligned form.
    pub permutations: Vec<Vec<usize>>,
    /// Encodings used for categorical factors in the final fit.
    pub encodings: Vec<Option<TargetEncoding>>,
    /// `L × F`, column `τ` holds the importances of factor `τ`'s forest.
    pub raw_importances: Array2<f64>,
    pub thresholded: Array2<f64>,
    pub trace: ProbeTrace,
    /// Evaluation-split error of the final forests.
    pub informativeness: Informativeness,
    #[serde(skip)]
    pub aligned_latents: Option<Array2<f64>>,
    #[serde(skip)]
    pub forests: Option<ForestSet>,
}

impl GroupProbe {
    pub fn joint(&self, schema: std::sync::Arc<HierarchySchema>) -> Result<JointDistribution, JointError> {
        JointDistribution::normalize(schema, &self.thresholded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub config: ProbeConfig,
    pub groups: Vec<GroupProbe>,
}

fn encode_column(
    catalog: &FactorCatalog,
    factors: ArrayView2<'_, f64>,
    f: usize,
    strategy: EncodingStrategy<'_>,
    group: usize,
) -> Result<(Vec<f64>, Option<TargetEncoding>), ProbeError> {
    let raw = factors.column(f);
    match &catalog.entries[f].spec.kind {
        FactorKind::Categorical { classes } if classes.len() >= 2 => {
            let idx: Vec<usize> = raw.iter().map(|&v| v as usize).collect();
            let (col, enc) = encode_targets(&idx, classes, strategy)
                .map_err(|source| ProbeError::Regressor { group, source })?;
            Ok((col, Some(enc)))
        }
        _ => Ok((raw.to_vec(), None)),
    }
}

fn standardized(values: &Array2<f64>, fit: &[usize]) -> Array2<f64> {
    Standardizer::fit_rows(values.view(), fit).transform(values.view())
}

/// Algorithm 1 on the fit split, followed by the final forests.
pub fn run_probing(
    group: &Group,
    catalog: &FactorCatalog,
    layout: &SlotLayout,
    config: &ProbeConfig,
) -> Result<GroupProbe, ProbeError> {
    config.validate()?;
    let layout = config.layout(layout)?;
    let gid = group.id;
    let z = group.latents.as_ref().ok_or(ProbeError::MissingLatents(gid))?;
    let (n, n_lat) = z.dim();
    if n_lat != layout.latent_len() {
        return Err(ProbeError::Shape(format!(
            "group {gid}: latents have {n_lat} dims, layout expects {}",
            layout.latent_len()
        )));
    }
    if let Some(sample) = z.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ProbeError::NonFiniteLatent { group: gid, sample });
    }
    let fit = &group.splits.fit;
    if fit.len() < 2 {
        return Err(ProbeError::Regressor {
            group: gid,
            source: RegressorError::TooFewSamples {
                needed: 2,
                got: fit.len(),
            },
        });
    }
    let n_factors = group.factors.ncols();
    let regressor = |source| ProbeError::Regressor { group: gid, source };

    // EM targets: categorical classes in declared order.
    let mut targets = Array2::zeros((n, n_factors));
    for f in 0..n_factors {
        let (col, _) = encode_column(catalog, group.factors.view(), f, EncodingStrategy::Fixed, gid)?;
        targets.column_mut(f).assign(&ndarray::Array1::from(col));
    }
    let mut v = standardized(&targets, fit);

    let mut aligned = z.clone();
    let mut perms: Vec<Vec<usize>> = vec![(0..layout.n_slots).collect(); n];
    let mut trace = ProbeTrace::default();
    for _ in 0..config.n_iters {
        let x_fit = aligned.select(Axis(0), fit);
        let v_fit = v.select(Axis(0), fit);
        let model = ridge_fit(x_fit.view(), v_fit.view(), config.ridge_lambda).map_err(regressor)?;
        let search = AffineSearch::new(model.weights(), model.intercept(), &layout)?;
        let steps: Vec<BestPermutation> = fit
            .par_iter()
            .map(|&j| {
                let zj = aligned.row(j);
                let vj = v.row(j);
                search.search(zj.as_slice().expect("row-major"), vj.as_slice().expect("row-major"))
            })
            .collect();
        let before: f64 = steps.iter().map(|s| s.identity_squared_residual.sqrt()).sum();
        let after: f64 = steps.iter().map(|s| s.squared_residual.sqrt()).sum();
        let mut changed = 0;
        let mut buf = vec![0.0; n_lat];
        for (&j, step) in fit.iter().zip(&steps) {
            if is_identity(&step.perm) {
                continue;
            }
            changed += 1;
            let row = aligned.row(j).to_vec();
            apply_slot_permutation_into(&row, &step.perm, layout.dims_per_slot, &mut buf);
            aligned.row_mut(j).assign(&ndarray::ArrayView1::from(&buf));
            perms[j] = compose_permutations(&perms[j], &step.perm);
        }
        if after > before {
            trace.violations += 1;
        }
        trace.changes.push(changed);
        trace.residual_before.push(before);
        trace.residual_after.push(after);
        if changed == 0 && config.early_stop {
            trace.stopped_early = true;
            break;
        }
    }

    // Final encodings are chosen on the aligned fit split, holding out its tail.
    let cut = (fit.len() * 4 / 5).clamp(1, fit.len() - 1);
    let (head, tail) = fit.split_at(cut);
    let mut encodings = vec![None; n_factors];
    for f in 0..n_factors {
        let strategy = EncodingStrategy::MinimizeError {
            features: aligned.view(),
            fit: head,
            validation: tail,
            lambda: config.ridge_lambda,
        };
        let (col, enc) = encode_column(catalog, group.factors.view(), f, strategy, gid)?;
        if enc.is_some() {
            targets.column_mut(f).assign(&ndarray::Array1::from(col));
        }
        encodings[f] = enc;
    }
    v = standardized(&targets, fit);

    let mut params = config.forest.clone();
    params.seed = config.seed.wrapping_add((gid as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let x_fit = aligned.select(Axis(0), fit);
    let v_fit = v.select(Axis(0), fit);
    let forests = fit_forests(x_fit.view(), v_fit.view(), &params).map_err(regressor)?;

    // Validation and evaluation samples are aligned once with the final forests.
    let held_out: Vec<usize> = group
        .splits
        .validation
        .iter()
        .chain(&group.splits.evaluation)
        .copied()
        .collect();
    if config.n_iters > 0 {
        let steps = held_out
            .par_iter()
            .map(|&j| {
                let zj = aligned.row(j).to_vec();
                let vj = v.row(j).to_vec();
                best_permutation(&forests, &zj, &vj, &layout)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut buf = vec![0.0; n_lat];
        for (&j, step) in held_out.iter().zip(&steps) {
            let row = aligned.row(j).to_vec();
            apply_slot_permutation_into(&row, &step.perm, layout.dims_per_slot, &mut buf);
            aligned.row_mut(j).assign(&ndarray::ArrayView1::from(&buf));
            perms[j] = compose_permutations(&perms[j], &step.perm);
        }
    }

    let mut raw_importances = Array2::zeros((n_lat, n_factors));
    for (f, forest) in forests.forests.iter().enumerate() {
        raw_importances
            .column_mut(f)
            .assign(&ndarray::Array1::from(forest_importances(forest)));
    }
    let thresholded = threshold_importances(&raw_importances, config.threshold_fraction);

    let eval = &group.splits.evaluation;
    let info = if eval.is_empty() {
        Informativeness::from_per_factor(vec![None; n_factors])
    } else {
        let x_eval = aligned.select(Axis(0), eval);
        let v_eval = v.select(Axis(0), eval);
        informativeness(&forests, x_eval.view(), v_eval.view())?
    };

    Ok(GroupProbe {
        group_id: gid,
        permutations: perms,
        encodings,
        raw_importances,
        thresholded,
        trace,
        informativeness: info,
        aligned_latents: Some(aligned),
        forests: Some(forests),
    })
}

/// Probes every group in order.
pub fn probe_dataset(ds: &GroupedDataset, config: &ProbeConfig) -> Result<ProbeResult, ProbeError> {
    let groups = ds
        .groups
        .iter()
        .map(|g| run_probing(g, &ds.catalog, &ds.layout, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeResult {
        config: config.clone(),
        groups,
    })
}
