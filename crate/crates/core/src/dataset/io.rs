//! Directory layout:
//!
//! ```text
//! schema.json         attributes and tuple sets
//! layout.json         slot layout
//! splits.json         per-group fit / validation / evaluation rows
//! factor_specs.json   factor kinds and tags (optional)
//! factors_{g}.csv     sample_id + one column per factor tuple
//! latents_{g}.csv     sample_id + one column per latent tuple (optional)
//! ```
//!
//! Floats are written with 17 significant digits, so a save/load round trip
//! is exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DatasetError, FactorCatalog, Group, GroupedDataset, SlotLayout, Splits};
use crate::schema::{HierarchySchema, SchemaDoc, Side};

const SAMPLE_ID: &str = "sample_id";

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    groups: Vec<GroupSplits>,
}

#[derive(Serialize, Deserialize)]
struct GroupSplits {
    group_id: usize,
    #[serde(flatten)]
    splits: Splits,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Formats a float with 17 significant digits.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(path: &Path, keys: &[String], values: &Array2<f64>) -> Result<(), DatasetError> {
    let mut text = String::with_capacity(values.len() * 24);
    text.push_str(SAMPLE_ID);
    for k in keys {
        text.push(',');
        text.push_str(k);
    }
    text.push('\n');
    for (i, row) in values.rows().into_iter().enumerate() {
        let _ = write!(text, "{i}");
        for &v in row {
            text.push(',');
            text.push_str(&format_float(v));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Reads a sample matrix, reordering columns to `keys`.
fn read_matrix(path: &Path, keys: &[String]) -> Result<(Vec<String>, Array2<f64>), DatasetError> {
    let file = path.display().to_string();
    let malformed = |line: usize, reason: String| DatasetError::MalformedCsv {
        file: file.clone(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DatasetError::Io {
                path: file.clone(),
                source,
            },
            other => malformed(1, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some(SAMPLE_ID) {
        return Err(DatasetError::MissingColumn {
            file: file.clone(),
            column: SAMPLE_ID.into(),
        });
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(DatasetError::SchemaMismatch {
                file: file.clone(),
                reason: format!("column `{h}` appears twice"),
            });
        }
    }
    let mut position = Vec::with_capacity(keys.len());
    for k in keys {
        match header.iter().position(|h| h == k) {
            Some(p) => position.push(p),
            None => {
                return Err(DatasetError::MissingColumn {
                    file: file.clone(),
                    column: k.clone(),
                })
            }
        }
    }
    if header.len() != keys.len() + 1 {
        let known: HashSet<&String> = keys.iter().collect();
        let extra = header[1..].iter().find(|h| !known.contains(h)).expect("extra column");
        return Err(DatasetError::SchemaMismatch {
            file: file.clone(),
            reason: format!("unknown column `{extra}`"),
        });
    }
    let mut ids = Vec::new();
    let mut id_set = HashSet::new();
    let mut data = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(malformed(
                line,
                format!("{} fields, expected {}", record.len(), header.len()),
            ));
        }
        let id = record[0].to_string();
        if !id_set.insert(id.clone()) {
            return Err(DatasetError::DuplicateSampleId { file: file.clone(), id });
        }
        ids.push(id);
        for &p in &position {
            let field = &record[p];
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
    }
    let n = ids.len();
    let values = Array2::from_shape_vec((n, keys.len()), data).expect("row-major fill");
    Ok((ids, values))
}

pub fn save_dataset(ds: &GroupedDataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    ds.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("schema.json"), &ds.schema.to_doc())?;
    write_json(&dir.join("layout.json"), &ds.layout)?;
    write_json(&dir.join("factor_specs.json"), &ds.catalog)?;
    let splits = SplitsFile {
        groups: ds
            .groups
            .iter()
            .map(|g| GroupSplits {
                group_id: g.id,
                splits: g.splits.clone(),
            })
            .collect(),
    };
    write_json(&dir.join("splits.json"), &splits)?;
    let factor_keys = ds.schema.tuple_keys(Side::Factors);
    let latent_keys = ds.schema.tuple_keys(Side::Latents);
    for g in &ds.groups {
        write_matrix(&dir.join(format!("factors_{}.csv", g.id)), &factor_keys, &g.factors)?;
        let latents = dir.join(format!("latents_{}.csv", g.id));
        match &g.latents {
            Some(z) => write_matrix(&latents, &latent_keys, z)?,
            None if latents.exists() => fs::remove_file(&latents).map_err(io_err(&latents))?,
            None => {}
        }
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GroupedDataset, DatasetError> {
    let dir = dir.as_ref();
    let doc: SchemaDoc = read_json(&dir.join("schema.json"))?;
    let schema = Arc::new(HierarchySchema::try_from(doc)?);
    let layout: SlotLayout = read_json(&dir.join("layout.json"))?;
    layout.validate()?;
    if layout.latent_len() != schema.n_latents() {
        return Err(DatasetError::SchemaMismatch {
            file: dir.join("layout.json").display().to_string(),
            reason: format!(
                "{} slots × {} dims does not match {} latent tuples",
                layout.n_slots,
                layout.dims_per_slot,
                schema.n_latents()
            ),
        });
    }
    let catalog_path = dir.join("factor_specs.json");
    let factor_keys = schema.tuple_keys(Side::Factors);
    let catalog: FactorCatalog = if catalog_path.exists() {
        let catalog: FactorCatalog = read_json(&catalog_path)?;
        let keys: Vec<&String> = catalog.entries.iter().map(|e| &e.key).collect();
        if keys != factor_keys.iter().collect::<Vec<_>>() {
            return Err(DatasetError::SchemaMismatch {
                file: catalog_path.display().to_string(),
                reason: "factor keys differ from the schema's factor tuples".into(),
            });
        }
        for e in &catalog.entries {
            e.spec.validate()?;
        }
        catalog
    } else {
        FactorCatalog::continuous(&schema)
    };
    let splits: SplitsFile = read_json(&dir.join("splits.json"))?;
    let latent_keys = schema.tuple_keys(Side::Latents);
    let mut groups = Vec::with_capacity(splits.groups.len());
    let mut group_ids = HashSet::new();
    for entry in splits.groups {
        let id = entry.group_id;
        if !group_ids.insert(id) {
            return Err(DatasetError::Config(format!("group {id} listed twice in splits.json")));
        }
        let factor_path = dir.join(format!("factors_{id}.csv"));
        let (ids, factors) = read_matrix(&factor_path, &factor_keys)?;
        let latent_path = dir.join(format!("latents_{id}.csv"));
        let latents = if latent_path.exists() {
            let (latent_ids, z) = read_matrix(&latent_path, &latent_keys)?;
            if latent_ids != ids {
                return Err(DatasetError::SchemaMismatch {
                    file: latent_path.display().to_string(),
                    reason: format!("sample ids differ from {}", factor_path.display()),
                });
            }
            Some(z)
        } else {
            None
        };
        entry.splits.check(id, ids.len())?;
        groups.push(Group {
            id,
            factors,
            latents,
            splits: entry.splits,
        });
    }
    Ok(GroupedDataset {
        schema,
        catalog,
        layout,
        groups,
    })
}
