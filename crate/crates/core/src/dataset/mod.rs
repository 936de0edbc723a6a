//! Grouped evaluation datasets: generation with local factor sampling, a
//! synthetic slot encoder standing in for trained models, and the on-disk
//! format.

mod generate;
mod io;
mod synth;

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Attribute, HierarchySchema, SchemaError};

pub use generate::{generate_eval_dataset, GenerationConfig};
pub use io::{load_dataset, save_dataset};
pub(crate) use io::{read_json, write_json};
pub use synth::{synth_encode, synth_encode_traced, MixingSpec};

/// Name of the background object in generated schemas.
pub const BACKGROUND: &str = "background";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid factor spec `{name}`: {reason}")]
    Spec { name: String, reason: String },
    #[error("invalid slot layout: {0}")]
    Layout(String),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}: schema mismatch: {reason}")]
    SchemaMismatch { file: String, reason: String },
    #[error("{file}: malformed CSV at line {line}: {reason}")]
    MalformedCsv {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}: duplicate sample id {id}")]
    DuplicateSampleId { file: String, id: String },
    #[error("group {group}: splits overlap at sample {index}")]
    SplitOverlap { group: usize, index: usize },
    #[error("group {group}: splits must cover samples 0..{n} exactly: {reason}")]
    SplitCoverage {
        group: usize,
        n: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn spec_error(name: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Spec {
        name: name.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FactorKind {
    /// Closed interval `[lo, hi]`.
    Continuous { range: [f64; 2] },
    /// Ordered list of admissible values.
    Ordinal { values: Vec<f64> },
    /// Unordered classes; stored as class indices.
    Categorical { classes: Vec<String> },
}

/// Neighbourhood of the group's initial value from which samples are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    /// Whole domain.
    Full,
    /// Only the initial value.
    Same,
    /// Ordinal: `±w` positions around the initial index, clipped to the ends.
    Window(usize),
    /// Continuous: `[x - δ, x + δ] ∩ range`.
    Delta(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorKind,
    pub locality: Locality,
    /// Free-form tag such as `intrinsic` / `extrinsic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let name = &self.name;
        match &self.kind {
            FactorKind::Continuous { range: [lo, hi] } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(spec_error(name, format!("bad range [{lo}, {hi}]")));
                }
            }
            FactorKind::Ordinal { values } => {
                if values.is_empty() {
                    return Err(spec_error(name, "no values"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(spec_error(name, "non-finite value"));
                }
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(spec_error(name, "repeated value"));
                }
            }
            FactorKind::Categorical { classes } => {
                if classes.is_empty() {
                    return Err(spec_error(name, "no classes"));
                }
                let mut sorted = classes.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != classes.len() {
                    return Err(spec_error(name, "repeated class"));
                }
            }
        }
        match (&self.kind, &self.locality) {
            (_, Locality::Full | Locality::Same) => Ok(()),
            (FactorKind::Ordinal { .. }, Locality::Window(_)) => Ok(()),
            (FactorKind::Continuous { .. }, Locality::Delta(d)) if *d >= 0.0 && d.is_finite() => Ok(()),
            (_, locality) => Err(spec_error(
                name,
                format!("locality {locality:?} does not apply to this factor kind"),
            )),
        }
    }

    /// Maps a raw value to `[-1, 1]` using the declared domain.
    pub fn normalize(&self, value: f64) -> f64 {
        let (lo, hi) = match &self.kind {
            FactorKind::Continuous { range } => (range[0], range[1]),
            FactorKind::Ordinal { values } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            FactorKind::Categorical { classes } => (0.0, (classes.len() - 1) as f64),
        };
        if hi > lo {
            2.0 * (value - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }
}

/// Everything the generator needs to know about the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_objects: usize,
    /// Factors every object carries.
    pub properties: Vec<FactorSpec>,
    /// Factors of an optional background object with its own slot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub background: Vec<FactorSpec>,
    pub dims_per_slot: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pinned_slots: Vec<usize>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_objects == 0 {
            return Err(DatasetError::Config("n_objects must be positive".into()));
        }
        if self.properties.is_empty() {
            return Err(DatasetError::Config("at least one property is required".into()));
        }
        for spec in self.properties.iter().chain(&self.background) {
            spec.validate()?;
        }
        let width = self.properties.len().max(self.background.len());
        if self.dims_per_slot < width {
            return Err(DatasetError::Config(format!(
                "dims_per_slot ({}) must be at least the number of factors per object ({width})",
                self.dims_per_slot
            )));
        }
        self.layout().validate()?;
        Ok(())
    }

    pub fn has_background(&self) -> bool {
        !self.background.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.n_objects + usize::from(self.has_background())
    }

    pub fn layout(&self) -> SlotLayout {
        SlotLayout {
            n_slots: self.n_slots(),
            dims_per_slot: self.dims_per_slot,
            pinned_slots: self.pinned_slots.clone(),
        }
    }

    /// `object × property` factors against `slot × dim` latents.
    pub fn schema(&self) -> Result<HierarchySchema, DatasetError> {
        let mut objects: Vec<String> = (1..=self.n_objects).map(|i| format!("object {i}")).collect();
        if self.has_background() {
            objects.push(BACKGROUND.to_string());
        }
        let slots: Vec<String> = (1..=self.n_slots()).map(|i| format!("slot {i}")).collect();
        let mut properties: Vec<String> = self.properties.iter().map(|p| p.name.clone()).collect();
        for p in &self.background {
            if !properties.contains(&p.name) {
                properties.push(p.name.clone());
            }
        }
        let dims: Vec<String> = (1..=self.dims_per_slot).map(|i| format!("dim {i}")).collect();
        let mut factor_tuples = Vec::new();
        for o in objects.iter().take(self.n_objects) {
            for p in &self.properties {
                factor_tuples.push(vec![o.clone(), p.name.clone()]);
            }
        }
        for p in &self.background {
            factor_tuples.push(vec![BACKGROUND.to_string(), p.name.clone()]);
        }
        let latent_tuples = slots
            .iter()
            .flat_map(|s| dims.iter().map(move |d| vec![s.clone(), d.clone()]))
            .collect();
        Ok(HierarchySchema::new(
            vec![
                Attribute::new("object", objects, slots),
                Attribute::new("property", properties, dims),
            ],
            factor_tuples,
            latent_tuples,
        )?)
    }

    /// Per-factor metadata in the schema's canonical factor order.
    pub fn catalog(&self) -> Result<FactorCatalog, DatasetError> {
        let schema = self.schema()?;
        let mut entries = Vec::with_capacity(schema.n_factors());
        for t in schema.factor_tuples() {
            let labels = schema.labels(crate::schema::Side::Factors, t);
            let background = labels[0] == BACKGROUND;
            let pool = if background { &self.background } else { &self.properties };
            let spec = pool
                .iter()
                .find(|p| p.name == labels[1])
                .expect("schema built from these specs");
            let object = if background { None } else { Some(t[0]) };
            entries.push(FactorMeta {
                key: labels.join("|"),
                spec: spec.clone(),
                object,
                background,
            });
        }
        Ok(FactorCatalog { entries })
    }
}

/// Metadata for one factor tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMeta {
    pub key: String,
    pub spec: FactorSpec,
    /// Object index (slot it is generated into); `None` for background.
    pub object: Option<usize>,
    pub background: bool,
}

/// Factor kinds and tags, keyed by canonical factor index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCatalog {
    pub entries: Vec<FactorMeta>,
}

impl FactorCatalog {
    pub fn background_factors(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].background)
            .collect()
    }

    /// Catalog with every factor treated as continuous and untagged.
    pub fn continuous(schema: &HierarchySchema) -> FactorCatalog {
        let entries = schema
            .tuple_keys(crate::schema::Side::Factors)
            .into_iter()
            .map(|key| FactorMeta {
                spec: FactorSpec {
                    name: key.clone(),
                    kind: FactorKind::Continuous {
                        range: [f64::MIN, f64::MAX],
                    },
                    locality: Locality::Full,
                    tag: None,
                },
                key,
                object: None,
                background: false,
            })
            .collect();
        FactorCatalog { entries }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub n_slots: usize,
    pub dims_per_slot: usize,
    /// Slots that are never permuted.
    #[serde(default)]
    pub pinned_slots: Vec<usize>,
}

impl SlotLayout {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_slots == 0 || self.dims_per_slot == 0 {
            return Err(DatasetError::Layout(
                "n_slots and dims_per_slot must be positive".into(),
            ));
        }
        if let Some(&p) = self.pinned_slots.iter().find(|&&p| p >= self.n_slots) {
            return Err(DatasetError::Layout(format!(
                "pinned slot {p} out of range for {} slots",
                self.n_slots
            )));
        }
        let mut sorted = self.pinned_slots.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.pinned_slots.len() {
            return Err(DatasetError::Layout("pinned slot listed twice".into()));
        }
        Ok(())
    }

    pub fn latent_len(&self) -> usize {
        self.n_slots * self.dims_per_slot
    }

    pub fn is_pinned(&self, slot: usize) -> bool {
        self.pinned_slots.contains(&slot)
    }

    /// Slots that take part in permutations, ascending.
    pub fn free_slots(&self) -> Vec<usize> {
        (0..self.n_slots).filter(|&s| !self.is_pinned(s)).collect()
    }
}

/// Fit / validation / evaluation sample indices of one group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub fit: Vec<usize>,
    pub validation: Vec<usize>,
    pub evaluation: Vec<usize>,
}

impl Splits {
    pub fn contiguous(sizes: [usize; 3]) -> Splits {
        let [a, b, c] = sizes;
        Splits {
            fit: (0..a).collect(),
            validation: (a..a + b).collect(),
            evaluation: (a + b..a + b + c).collect(),
        }
    }

    /// Disjoint and covering `0..n`.
    pub fn check(&self, group: usize, n: usize) -> Result<(), DatasetError> {
        let mut seen = vec![false; n];
        for &i in self.fit.iter().chain(&self.validation).chain(&self.evaluation) {
            if i >= n {
                return Err(DatasetError::SplitCoverage {
                    group,
                    n,
                    reason: format!("index {i} out of range"),
                });
            }
            if seen[i] {
                return Err(DatasetError::SplitOverlap { group, index: i });
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DatasetError::SplitCoverage {
                group,
                n,
                reason: format!("sample {missing} is in no split"),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub id: usize,
    /// `n × F` raw factor values in canonical factor order.
    pub factors: Array2<f64>,
    /// `n × L` latents in slot-major order, once encoded.
    pub latents: Option<Array2<f64>>,
    pub splits: Splits,
}

impl Group {
    pub fn n_samples(&self) -> usize {
        self.factors.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    pub schema: Arc<HierarchySchema>,
    pub catalog: FactorCatalog,
    pub layout: SlotLayout,
    pub groups: Vec<Group>,
}

impl GroupedDataset {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.layout.validate()?;
        if self.layout.latent_len() != self.schema.n_latents() {
            return Err(DatasetError::Dimension(format!(
                "layout has {} latent dims but schema has {}",
                self.layout.latent_len(),
                self.schema.n_latents()
            )));
        }
        if self.catalog.entries.len() != self.schema.n_factors() {
            return Err(DatasetError::Dimension(format!(
                "catalog has {} factors but schema has {}",
                self.catalog.entries.len(),
                self.schema.n_factors()
            )));
        }
        for g in &self.groups {
            if g.factors.ncols() != self.schema.n_factors() {
                return Err(DatasetError::Dimension(format!(
                    "group {}: {} factor columns, expected {}",
                    g.id,
                    g.factors.ncols(),
                    self.schema.n_factors()
                )));
            }
            if let Some(z) = &g.latents {
                if z.dim() != (g.n_samples(), self.layout.latent_len()) {
                    return Err(DatasetError::Dimension(format!(
                        "group {}: latents are {:?}, expected ({}, {})",
                        g.id,
                        z.dim(),
                        g.n_samples(),
                        self.layout.latent_len()
                    )));
                }
            }
            g.splits.check(g.id, g.n_samples())?;
        }
        Ok(())
    }
}

/// Factor specs matching the Multi-dSprites-style domains.
pub mod presets {
    use super::*;

    fn ordinal(name: &str, values: Vec<f64>, window: usize, tag: &str) -> FactorSpec {
        FactorSpec {
            name: name.into(),
            kind: FactorKind::Ordinal { values },
            locality: Locality::Window(window),
            tag: Some(tag.into()),
        }
    }

    fn range(n: usize) -> Vec<f64> {
        (0..n).map(|v| v as f64).collect()
    }

    /// Eight per-object factors: RGB, shape, scale, orientation, x, y.
    pub fn multi_dsprites_properties() -> Vec<FactorSpec> {
        let color = vec![0.0, 63.0, 127.0, 191.0, 255.0];
        vec![
            ordinal("r", color.clone(), 1, "intrinsic"),
            ordinal("g", color.clone(), 1, "intrinsic"),
            ordinal("b", color, 1, "intrinsic"),
            FactorSpec {
                name: "shape".into(),
                kind: FactorKind::Categorical {
                    classes: vec!["circle".into(), "square".into(), "heart".into()],
                },
                locality: Locality::Full,
                tag: Some("intrinsic".into()),
            },
            ordinal("scale", range(6), 1, "intrinsic"),
            ordinal("orientation", range(40), 3, "extrinsic"),
            ordinal("x", range(32), 2, "extrinsic"),
            ordinal("y", range(32), 2, "extrinsic"),
        ]
    }

    pub fn multi_dsprites(n_objects: usize, dims_per_slot: usize, background: bool) -> DatasetSpec {
        let color = vec![0.0, 63.0, 127.0, 191.0, 255.0];
        DatasetSpec {
            n_objects,
            properties: multi_dsprites_properties(),
            background: if background {
                vec![
                    ordinal("bg r", color.clone(), 1, "intrinsic"),
                    ordinal("bg g", color.clone(), 1, "intrinsic"),
                    ordinal("bg b", color, 1, "intrinsic"),
                ]
            } else {
                Vec::new()
            },
            dims_per_slot,
            pinned_slots: Vec::new(),
        }
    }
}
