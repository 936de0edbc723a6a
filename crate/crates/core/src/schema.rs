//! Hierarchy attributes, tuple index spaces and projections.
//!
//! Factors and latent dimensions are both indexed by tuples with one element
//! per hierarchy level (e.g. `(object 2, color)` and `(slot 1, dim 3)`). The
//! tuple sets are explicit subsets of the product of the per-level domains,
//! so a schema can leave out combinations that do not exist.
//!
//! Tuples are stored as domain indices and kept in canonical order:
//! lexicographic by attribute, then by domain position.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A tuple of per-level domain indices.
pub type Tuple = Vec<usize>;

/// Separator used when a tuple is written as a single string (CSV headers).
pub const TUPLE_SEPARATOR: char = '|';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Factors,
    Latents,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Factors => f.write_str("factor"),
            Side::Latents => f.write_str("latent"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema needs at least one attribute")]
    NoAttributes,
    #[error("duplicate attribute name `{0}`")]
    DuplicateAttribute(String),
    #[error("attribute `{attribute}` has an empty {side} domain")]
    EmptyDomain { attribute: String, side: Side },
    #[error("attribute `{attribute}` repeats label `{label}` in its {side} domain")]
    DuplicateLabel {
        attribute: String,
        side: Side,
        label: String,
    },
    #[error("label `{0}` contains a reserved character (`|`, `,`, `+`, quote or newline)")]
    ReservedCharacter(String),
    #[error("{0} tuple set is empty")]
    EmptyTupleSet(Side),
    #[error("{side} tuple {tuple:?} has arity {found}, expected {expected}")]
    Arity {
        side: Side,
        tuple: Vec<String>,
        found: usize,
        expected: usize,
    },
    #[error("{side} tuple {tuple:?}: `{label}` is not in the {side} domain of `{attribute}`")]
    UnknownLabel {
        side: Side,
        tuple: Vec<String>,
        label: String,
        attribute: String,
    },
    #[error("duplicate {side} tuple {tuple:?}")]
    DuplicateTuple { side: Side, tuple: Vec<String> },
    #[error("projection needs at least one level")]
    EmptyProjection,
    #[error("projection levels must be strictly increasing, got {0:?}")]
    UnorderedProjection(Vec<usize>),
    #[error("level {level} out of range for {n_levels} hierarchy levels")]
    LevelOutOfRange { level: usize, n_levels: usize },
    #[error("unknown projection `{name}`; valid names: {valid}")]
    UnknownProjection { name: String, valid: String },
}

/// One hierarchy level with its factor and latent domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub factor_domain: Vec<String>,
    pub latent_domain: Vec<String>,
}

impl Attribute {
    pub fn new<S: Into<String>>(
        name: S,
        factor_domain: impl IntoIterator<Item = impl Into<String>>,
        latent_domain: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Attribute {
            name: name.into(),
            factor_domain: factor_domain.into_iter().map(Into::into).collect(),
            latent_domain: latent_domain.into_iter().map(Into::into).collect(),
        }
    }

    pub fn domain(&self, side: Side) -> &[String] {
        match side {
            Side::Factors => &self.factor_domain,
            Side::Latents => &self.latent_domain,
        }
    }
}

/// Serialized form of a schema: tuples as arrays of labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub attributes: Vec<Attribute>,
    pub factor_tuples: Vec<Vec<String>>,
    pub latent_tuples: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct HierarchySchema {
    attributes: Vec<Attribute>,
    factor_tuples: Vec<Tuple>,
    latent_tuples: Vec<Tuple>,
}

fn has_reserved(label: &str) -> bool {
    label
        .chars()
        .any(|c| matches!(c, '|' | ',' | '+' | '"' | '\n' | '\r'))
}

impl HierarchySchema {
    /// Validates the attributes and tuple sets and puts both tuple sets
    /// into canonical order.
    pub fn new(
        attributes: Vec<Attribute>,
        factor_tuples: Vec<Vec<String>>,
        latent_tuples: Vec<Vec<String>>,
    ) -> Result<Self, SchemaError> {
        validate_attributes(&attributes)?;
        let factor_tuples = resolve_tuples(&attributes, Side::Factors, factor_tuples)?;
        let latent_tuples = resolve_tuples(&attributes, Side::Latents, latent_tuples)?;
        Ok(HierarchySchema {
            attributes,
            factor_tuples,
            latent_tuples,
        })
    }

    /// Schema whose tuple sets are the full products of the domains.
    pub fn full_product(attributes: Vec<Attribute>) -> Result<Self, SchemaError> {
        validate_attributes(&attributes)?;
        let factor = product(&attributes, Side::Factors);
        let latent = product(&attributes, Side::Latents);
        Ok(HierarchySchema {
            attributes,
            factor_tuples: factor,
            latent_tuples: latent,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn n_levels(&self) -> usize {
        self.attributes.len()
    }

    pub fn tuples(&self, side: Side) -> &[Tuple] {
        match side {
            Side::Factors => &self.factor_tuples,
            Side::Latents => &self.latent_tuples,
        }
    }

    pub fn factor_tuples(&self) -> &[Tuple] {
        &self.factor_tuples
    }

    pub fn latent_tuples(&self) -> &[Tuple] {
        &self.latent_tuples
    }

    /// Number of factors, `F`.
    pub fn n_factors(&self) -> usize {
        self.factor_tuples.len()
    }

    /// Number of latent dimensions, `L`.
    pub fn n_latents(&self) -> usize {
        self.latent_tuples.len()
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Position of a tuple in the canonical ordering.
    pub fn index_of(&self, side: Side, tuple: &[usize]) -> Option<usize> {
        self.tuples(side)
            .binary_search_by(|t| t.as_slice().cmp(tuple))
            .ok()
    }

    pub fn labels(&self, side: Side, tuple: &[usize]) -> Vec<&str> {
        tuple
            .iter()
            .zip(&self.attributes)
            .map(|(&i, a)| a.domain(side)[i].as_str())
            .collect()
    }

    /// Labels of a (possibly projected) tuple whose elements belong to `levels`.
    pub fn projected_labels(&self, side: Side, levels: &[usize], tuple: &[usize]) -> Vec<&str> {
        tuple
            .iter()
            .zip(levels)
            .map(|(&i, &l)| self.attributes[l].domain(side)[i].as_str())
            .collect()
    }

    /// `object 1|color` style key used in CSV headers.
    pub fn tuple_key(&self, side: Side, index: usize) -> String {
        self.labels(side, &self.tuples(side)[index])
            .join(&TUPLE_SEPARATOR.to_string())
    }

    pub fn tuple_keys(&self, side: Side) -> Vec<String> {
        (0..self.tuples(side).len())
            .map(|i| self.tuple_key(side, i))
            .collect()
    }

    pub fn parse_tuple_key(&self, side: Side, key: &str) -> Option<usize> {
        let parts: Vec<&str> = key.split(TUPLE_SEPARATOR).collect();
        if parts.len() != self.n_levels() {
            return None;
        }
        let tuple = parts
            .iter()
            .zip(&self.attributes)
            .map(|(p, a)| a.domain(side).iter().position(|l| l == p))
            .collect::<Option<Vec<_>>>()?;
        self.index_of(side, &tuple)
    }

    /// Restricts the schema to a subset of its tuples (by canonical index).
    pub fn retain(&self, keep_factors: &[usize], keep_latents: &[usize]) -> Result<Self, SchemaError> {
        let pick = |side: Side, keep: &[usize]| -> Vec<Tuple> {
            let mut out: Vec<Tuple> = keep.iter().map(|&i| self.tuples(side)[i].clone()).collect();
            out.sort();
            out.dedup();
            out
        };
        let factor_tuples = pick(Side::Factors, keep_factors);
        let latent_tuples = pick(Side::Latents, keep_latents);
        if factor_tuples.is_empty() {
            return Err(SchemaError::EmptyTupleSet(Side::Factors));
        }
        if latent_tuples.is_empty() {
            return Err(SchemaError::EmptyTupleSet(Side::Latents));
        }
        Ok(HierarchySchema {
            attributes: self.attributes.clone(),
            factor_tuples,
            latent_tuples,
        })
    }

    pub fn to_doc(&self) -> SchemaDoc {
        let strings = |side: Side| -> Vec<Vec<String>> {
            self.tuples(side)
                .iter()
                .map(|t| self.labels(side, t).into_iter().map(String::from).collect())
                .collect()
        };
        SchemaDoc {
            attributes: self.attributes.clone(),
            factor_tuples: strings(Side::Factors),
            latent_tuples: strings(Side::Latents),
        }
    }
}

impl TryFrom<SchemaDoc> for HierarchySchema {
    type Error = SchemaError;

    fn try_from(doc: SchemaDoc) -> Result<Self, Self::Error> {
        HierarchySchema::new(doc.attributes, doc.factor_tuples, doc.latent_tuples)
    }
}

impl From<HierarchySchema> for SchemaDoc {
    fn from(schema: HierarchySchema) -> Self {
        schema.to_doc()
    }
}

/// Canonical orderings of the factor space and the latent space.
///
/// Schemas are canonicalized on construction, so this only hands back the
/// two tuple lists; it exists so callers can treat a schema document and a
/// validated schema uniformly.
pub fn build_index_spaces(doc: SchemaDoc) -> Result<(Vec<Tuple>, Vec<Tuple>), SchemaError> {
    let schema = HierarchySchema::try_from(doc)?;
    Ok((schema.factor_tuples, schema.latent_tuples))
}

fn validate_attributes(attributes: &[Attribute]) -> Result<(), SchemaError> {
    if attributes.is_empty() {
        return Err(SchemaError::NoAttributes);
    }
    let mut names = std::collections::BTreeSet::new();
    for attr in attributes {
        if has_reserved(&attr.name) {
            return Err(SchemaError::ReservedCharacter(attr.name.clone()));
        }
        if !names.insert(attr.name.as_str()) {
            return Err(SchemaError::DuplicateAttribute(attr.name.clone()));
        }
        for side in [Side::Factors, Side::Latents] {
            let domain = attr.domain(side);
            if domain.is_empty() {
                return Err(SchemaError::EmptyDomain {
                    attribute: attr.name.clone(),
                    side,
                });
            }
            let mut seen = std::collections::BTreeSet::new();
            for label in domain {
                if has_reserved(label) {
                    return Err(SchemaError::ReservedCharacter(label.clone()));
                }
                if !seen.insert(label.as_str()) {
                    return Err(SchemaError::DuplicateLabel {
                        attribute: attr.name.clone(),
                        side,
                        label: label.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

fn resolve_tuples(
    attributes: &[Attribute],
    side: Side,
    tuples: Vec<Vec<String>>,
) -> Result<Vec<Tuple>, SchemaError> {
    if tuples.is_empty() {
        return Err(SchemaError::EmptyTupleSet(side));
    }
    let lookups: Vec<BTreeMap<&str, usize>> = attributes
        .iter()
        .map(|a| {
            a.domain(side)
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect()
        })
        .collect();
    let mut resolved = Vec::with_capacity(tuples.len());
    for tuple in &tuples {
        if tuple.len() != attributes.len() {
            return Err(SchemaError::Arity {
                side,
                tuple: tuple.clone(),
                found: tuple.len(),
                expected: attributes.len(),
            });
        }
        let mut idx = Vec::with_capacity(tuple.len());
        for ((label, lookup), attr) in tuple.iter().zip(&lookups).zip(attributes) {
            match lookup.get(label.as_str()) {
                Some(&i) => idx.push(i),
                None => {
                    return Err(SchemaError::UnknownLabel {
                        side,
                        tuple: tuple.clone(),
                        label: label.clone(),
                        attribute: attr.name.clone(),
                    })
                }
            }
        }
        resolved.push(idx);
    }
    resolved.sort();
    if let Some(w) = resolved.windows(2).find(|w| w[0] == w[1]) {
        let tuple = w[0]
            .iter()
            .zip(attributes)
            .map(|(&i, a)| a.domain(side)[i].clone())
            .collect();
        return Err(SchemaError::DuplicateTuple { side, tuple });
    }
    Ok(resolved)
}

fn product(attributes: &[Attribute], side: Side) -> Vec<Tuple> {
    let mut out: Vec<Tuple> = vec![Vec::new()];
    for attr in attributes {
        let n = attr.domain(side).len();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut t = prefix.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

/// An ordered, non-empty subset of hierarchy levels (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Projection {
    levels: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Projection {
    type Error = SchemaError;

    fn try_from(levels: Vec<usize>) -> Result<Self, Self::Error> {
        Projection::new(levels)
    }
}

impl From<Projection> for Vec<usize> {
    fn from(p: Projection) -> Self {
        p.levels
    }
}

impl Projection {
    pub fn new(levels: Vec<usize>) -> Result<Self, SchemaError> {
        if levels.is_empty() {
            return Err(SchemaError::EmptyProjection);
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SchemaError::UnorderedProjection(levels));
        }
        Ok(Projection { levels })
    }

    pub fn single(level: usize) -> Self {
        Projection {
            levels: vec![level],
        }
    }

    /// Keeps every level of the schema.
    pub fn identity(schema: &HierarchySchema) -> Self {
        Projection {
            levels: (0..schema.n_levels()).collect(),
        }
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn is_identity_for(&self, schema: &HierarchySchema) -> bool {
        self.levels.len() == schema.n_levels()
    }

    pub fn validate(&self, schema: &HierarchySchema) -> Result<(), SchemaError> {
        let n_levels = schema.n_levels();
        match self.levels.iter().find(|&&l| l >= n_levels) {
            Some(&level) => Err(SchemaError::LevelOutOfRange { level, n_levels }),
            None => Ok(()),
        }
    }

    /// Parses `identity`, an attribute name, or attribute names joined by `+`.
    pub fn parse(schema: &HierarchySchema, name: &str) -> Result<Self, SchemaError> {
        let name = name.trim();
        if name == "identity" {
            return Ok(Projection::identity(schema));
        }
        let mut levels = Vec::new();
        for part in name.split('+') {
            match schema.level_index(part.trim()) {
                Some(l) => levels.push(l),
                None => {
                    return Err(SchemaError::UnknownProjection {
                        name: name.to_string(),
                        valid: valid_projection_names(schema).join(", "),
                    })
                }
            }
        }
        levels.sort_unstable();
        levels.dedup();
        Projection::new(levels)
    }

    pub fn name(&self, schema: &HierarchySchema) -> String {
        if self.is_identity_for(schema) {
            return "identity".to_string();
        }
        self.levels
            .iter()
            .map(|&l| schema.attributes()[l].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Union of two disjoint projections.
    pub fn union(&self, other: &Projection) -> Result<Projection, SchemaError> {
        let mut levels: Vec<usize> = self.levels.iter().chain(&other.levels).copied().collect();
        levels.sort_unstable();
        Projection::new(levels)
    }

    /// Levels of the schema not selected by this projection.
    pub fn complement(&self, n_levels: usize) -> Option<Projection> {
        let rest: Vec<usize> = (0..n_levels).filter(|l| !self.levels.contains(l)).collect();
        Projection::new(rest).ok()
    }
}

/// Single-level projections plus `identity`.
pub fn valid_projection_names(schema: &HierarchySchema) -> Vec<String> {
    let mut names: Vec<String> = schema.attributes().iter().map(|a| a.name.clone()).collect();
    names.push("identity".to_string());
    names
}

/// Sub-tuple of `tuple` at the projection's levels, in level order.
pub fn project_tuple(p: &Projection, tuple: &[usize]) -> Result<Tuple, SchemaError> {
    p.levels
        .iter()
        .map(|&l| {
            tuple.get(l).copied().ok_or(SchemaError::LevelOutOfRange {
                level: l,
                n_levels: tuple.len(),
            })
        })
        .collect()
}

/// Partition of a tuple set by projected label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectedGroups {
    pub side: Side,
    /// Distinct projected labels in canonical order.
    pub labels: Vec<Tuple>,
    /// Tuple index → group index.
    pub assignment: Vec<usize>,
    /// Group index → member tuple indices (ascending).
    pub members: Vec<Vec<usize>>,
}

impl ProjectedGroups {
    /// Number of groups (`U` for latents, `V` for factors).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn projected_groups(
    schema: &HierarchySchema,
    p: &Projection,
    side: Side,
) -> Result<ProjectedGroups, SchemaError> {
    p.validate(schema)?;
    let tuples = schema.tuples(side);
    let projected: Vec<Tuple> = tuples
        .iter()
        .map(|t| project_tuple(p, t))
        .collect::<Result<_, _>>()?;
    let mut labels = projected.clone();
    labels.sort();
    labels.dedup();
    let mut members = vec![Vec::new(); labels.len()];
    let assignment: Vec<usize> = projected
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let g = labels.binary_search(label).expect("label collected above");
            members[g].push(i);
            g
        })
        .collect();
    Ok(ProjectedGroups {
        side,
        labels,
        assignment,
        members,
    })
}

/// True iff `parts` are pairwise disjoint and together select exactly the
/// levels of `p`.
pub fn check_decomposition(p: &Projection, parts: &[Projection]) -> bool {
    let mut all: Vec<usize> = parts.iter().flat_map(|q| q.levels.iter().copied()).collect();
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    all.len() == total && all == p.levels
}

/// Ready-made schemas.
pub mod presets {
    use super::*;

    /// Two objects with `color`/`size` against two slots with two dims each.
    pub fn toy() -> HierarchySchema {
        object_property(2, &["color", "size"], 2, 2)
    }

    /// `object × property` factors against `slot × dim` latents, full product.
    pub fn object_property(
        n_objects: usize,
        properties: &[&str],
        n_slots: usize,
        dims_per_slot: usize,
    ) -> HierarchySchema {
        let objects = (1..=n_objects).map(|i| format!("object {i}"));
        let slots = (1..=n_slots).map(|i| format!("slot {i}"));
        let dims = (1..=dims_per_slot).map(|i| format!("dim {i}"));
        HierarchySchema::full_product(vec![
            Attribute::new("object", objects, slots),
            Attribute::new("property", properties.iter().copied(), dims),
        ])
        .expect("preset schema is valid")
    }

    /// Three levels: `object × kind × property` factors, where intrinsic and
    /// extrinsic kinds own disjoint properties, against
    /// `slot × {mask, component} × dim` latents.
    pub fn three_level(
        n_objects: usize,
        intrinsic: &[&str],
        extrinsic: &[&str],
        dims_per_part: usize,
    ) -> HierarchySchema {
        let objects: Vec<String> = (1..=n_objects).map(|i| format!("object {i}")).collect();
        let slots: Vec<String> = (1..=n_objects).map(|i| format!("slot {i}")).collect();
        let properties: Vec<&str> = intrinsic.iter().chain(extrinsic).copied().collect();
        let dims: Vec<String> = (1..=dims_per_part).map(|i| format!("dim {i}")).collect();
        let attributes = vec![
            Attribute::new("object", objects.clone(), slots.clone()),
            Attribute::new("kind", ["intrinsic", "extrinsic"], ["mask", "component"]),
            Attribute::new("property", properties.iter().copied(), dims.clone()),
        ];
        let mut factor_tuples = Vec::new();
        for o in &objects {
            for p in intrinsic {
                factor_tuples.push(vec![o.clone(), "intrinsic".into(), p.to_string()]);
            }
            for p in extrinsic {
                factor_tuples.push(vec![o.clone(), "extrinsic".into(), p.to_string()]);
            }
        }
        let mut latent_tuples = Vec::new();
        for s in &slots {
            for kind in ["mask", "component"] {
                for d in &dims {
                    latent_tuples.push(vec![s.clone(), kind.to_string(), d.clone()]);
                }
            }
        }
        HierarchySchema::new(attributes, factor_tuples, latent_tuples).expect("preset schema is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn toy_spaces_match_enumeration() {
        let schema = presets::toy();
        assert_eq!(schema.n_factors(), 4);
        assert_eq!(schema.n_latents(), 4);
        let keys = schema.tuple_keys(Side::Factors);
        assert_eq!(
            keys,
            ["object 1|color", "object 1|size", "object 2|color", "object 2|size"]
        );
        let keys = schema.tuple_keys(Side::Latents);
        assert_eq!(keys, ["slot 1|dim 1", "slot 1|dim 2", "slot 2|dim 1", "slot 2|dim 2"]);
    }

    #[test]
    fn degenerate_single_label_schema() {
        let schema =
            HierarchySchema::full_product(vec![Attribute::new("only", ["f"], ["l"])]).unwrap();
        assert_eq!((schema.n_factors(), schema.n_latents()), (1, 1));
    }

    #[test]
    fn three_level_sizes_are_products_of_chosen_domains() {
        let schema = presets::three_level(3, &["color", "shape"], &["x", "y", "rotation"], 4);
        // 3 objects × (2 intrinsic + 3 extrinsic); 3 slots × 2 kinds × 4 dims.
        assert_eq!(schema.n_factors(), 3 * (2 + 3));
        assert_eq!(schema.n_latents(), 3 * 2 * 4);
        let full = 3 * 2 * 5;
        assert!(schema.n_factors() < full);
    }

    #[test]
    fn canonical_order_uses_domain_position_not_string_order() {
        let attrs = vec![Attribute::new(
            "slot",
            ["a"],
            (1..=10).map(|i| format!("slot {i}")),
        )];
        let latents: Vec<Vec<String>> = (1..=10).rev().map(|i| vec![format!("slot {i}")]).collect();
        let schema = HierarchySchema::new(attrs, vec![strings(&["a"])], latents).unwrap();
        assert_eq!(schema.tuple_key(Side::Latents, 1), "slot 2");
        assert_eq!(schema.tuple_key(Side::Latents, 9), "slot 10");
    }

    #[test]
    fn duplicate_tuples_are_rejected() {
        let attrs = vec![Attribute::new("object", ["o1"], ["s1"])];
        let err = HierarchySchema::new(
            attrs,
            vec![strings(&["o1"]), strings(&["o1"])],
            vec![strings(&["s1"])],
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateTuple { side: Side::Factors, .. }));
    }

    #[test]
    fn unknown_labels_and_arity_are_rejected() {
        let attrs = vec![
            Attribute::new("object", ["o1"], ["s1"]),
            Attribute::new("property", ["p"], ["d"]),
        ];
        let err = HierarchySchema::new(
            attrs.clone(),
            vec![strings(&["o1", "q"])],
            vec![strings(&["s1", "d"])],
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::UnknownLabel { .. }));
        let err =
            HierarchySchema::new(attrs, vec![strings(&["o1"])], vec![strings(&["s1", "d"])])
                .unwrap_err();
        assert!(matches!(err, SchemaError::Arity { found: 1, expected: 2, .. }));
    }

    #[test]
    fn domains_must_be_nonempty_and_unique() {
        let err = HierarchySchema::full_product(vec![Attribute::new(
            "a",
            Vec::<String>::new(),
            ["x"],
        )])
        .unwrap_err();
        assert!(matches!(err, SchemaError::EmptyDomain { .. }));
        let err =
            HierarchySchema::full_product(vec![Attribute::new("a", ["x", "x"], ["x"])]).unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateLabel { .. }));
    }

    #[test]
    fn project_tuple_examples() {
        let schema = presets::toy();
        let object_color = &schema.factor_tuples()[0];
        let p_obj = Projection::single(0);
        assert_eq!(schema.projected_labels(Side::Factors, p_obj.levels(), &project_tuple(&p_obj, object_color).unwrap()), ["object 1"]);
        let slot2_dim1 = &schema.latent_tuples()[2];
        let id = Projection::identity(&schema);
        assert_eq!(&project_tuple(&id, slot2_dim1).unwrap(), slot2_dim1);
        let object2_size = &schema.factor_tuples()[3];
        let p_prop = Projection::single(1);
        assert_eq!(schema.projected_labels(Side::Factors, p_prop.levels(), &project_tuple(&p_prop, object2_size).unwrap()), ["size"]);
        let out_of_range = Projection::single(5);
        assert!(project_tuple(&out_of_range, object2_size).is_err());
    }

    #[test]
    fn projected_group_examples() {
        let schema = presets::toy();
        let g = projected_groups(&schema, &Projection::single(0), Side::Latents).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.members, vec![vec![0, 1], vec![2, 3]]);
        let g = projected_groups(&schema, &Projection::identity(&schema), Side::Latents).unwrap();
        assert_eq!(g.len(), schema.n_latents());
        let g = projected_groups(&schema, &Projection::single(1), Side::Factors).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.members, vec![vec![0, 2], vec![1, 3]]);
        assert!(projected_groups(&schema, &Projection::single(2), Side::Factors).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let id = Projection::new(vec![0, 1]).unwrap();
        assert!(check_decomposition(&id, &[Projection::single(0), Projection::single(1)]));
        assert!(!check_decomposition(&id, &[Projection::single(0), Projection::single(0)]));
        let three = Projection::new(vec![0, 1, 2]).unwrap();
        assert!(check_decomposition(
            &three,
            &[Projection::new(vec![0, 2]).unwrap(), Projection::single(1)]
        ));
        assert!(!check_decomposition(&three, &[Projection::single(1)]));
    }

    #[test]
    fn projection_parsing() {
        let schema = presets::toy();
        assert_eq!(Projection::parse(&schema, "identity").unwrap(), Projection::identity(&schema));
        assert_eq!(Projection::parse(&schema, "property+object").unwrap(), Projection::identity(&schema));
        assert_eq!(Projection::parse(&schema, "object").unwrap().name(&schema), "object");
        let err = Projection::parse(&schema, "colour").unwrap_err();
        assert_eq!(
            err.to_string(),
            "unknown projection `colour`; valid names: object, property, identity"
        );
        assert!(Projection::new(vec![1, 0]).is_err());
        assert!(Projection::new(vec![]).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let schema = presets::three_level(2, &["color"], &["x"], 2);
        let json = serde_json::to_string(&schema).unwrap();
        let back: HierarchySchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
        for side in [Side::Factors, Side::Latents] {
            for (i, key) in schema.tuple_keys(side).iter().enumerate() {
                assert_eq!(schema.parse_tuple_key(side, key), Some(i));
            }
        }
    }

    fn arb_schema() -> impl Strategy<Value = HierarchySchema> {
        prop::collection::vec((1usize..4, 1usize..4), 1..4).prop_map(|sizes| {
            let attrs = sizes
                .iter()
                .enumerate()
                .map(|(i, &(f, l))| {
                    Attribute::new(
                        format!("a{i}"),
                        (0..f).map(|j| format!("f{j}")),
                        (0..l).map(|j| format!("l{j}")),
                    )
                })
                .collect();
            HierarchySchema::full_product(attrs).unwrap()
        })
    }

    fn arb_projection(n: usize) -> impl Strategy<Value = Projection> {
        prop::collection::btree_set(0..n, 1..=n)
            .prop_map(|s| Projection::new(s.into_iter().collect()).unwrap())
    }

    proptest! {
        #[test]
        fn groups_partition_and_projection_is_constant_on_groups(
            (schema, p) in arb_schema().prop_flat_map(|s| { let n = s.n_levels(); (Just(s), arb_projection(n)) })
        ) {
            for side in [Side::Factors, Side::Latents] {
                let groups = projected_groups(&schema, &p, side).unwrap();
                let mut covered: Vec<usize> = groups.members.iter().flatten().copied().collect();
                covered.sort_unstable();
                prop_assert_eq!(covered, (0..schema.tuples(side).len()).collect::<Vec<_>>());
                for (g, members) in groups.members.iter().enumerate() {
                    for &m in members {
                        let proj = project_tuple(&p, &schema.tuples(side)[m]).unwrap();
                        prop_assert_eq!(&proj, &groups.labels[g]);
                    }
                }
            }
            let id = Projection::identity(&schema);
            for t in schema.factor_tuples() {
                prop_assert_eq!(&project_tuple(&id, t).unwrap(), t);
            }
        }

        #[test]
        fn decomposition_reflexive_and_order_invariant(
            parts in prop::collection::vec(prop::collection::btree_set(0usize..6, 1..3), 1..4)
        ) {
            let parts: Vec<Projection> = parts.into_iter().map(|s| Projection::new(s.into_iter().collect()).unwrap()).collect();
            for p in &parts {
                prop_assert!(check_decomposition(p, std::slice::from_ref(p)));
            }
            let mut union: Vec<usize> = parts.iter().flat_map(|p| p.levels().to_vec()).collect();
            union.sort_unstable();
            union.dedup();
            let whole = Projection::new(union).unwrap();
            let mut reversed = parts.clone();
            reversed.reverse();
            prop_assert_eq!(check_decomposition(&whole, &parts), check_decomposition(&whole, &reversed));
        }
    }
}
