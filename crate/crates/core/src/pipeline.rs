//! End-to-end runs: generate factors, encode them, probe, score. Also the
//! on-disk form of probe results and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    generate_eval_dataset, read_json, save_dataset, synth_encode, write_json, DatasetError, DatasetSpec,
    FactorCatalog, GenerationConfig, GroupedDataset, MixingSpec, SlotLayout,
};
use crate::metrics::{aggregate_groups, evaluate_group, MetricReport, MetricsError};
use crate::probing::{probe_dataset, GroupProbe, ProbeConfig, ProbeError, ProbeResult};
use crate::schema::{HierarchySchema, Projection, SchemaDoc, SchemaError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Offset between the generation seed and the encoder seed, so the two
/// never draw from the same stream.
const MIXING_SEED_OFFSET: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{0}")]
    Input(String),
}

/// What produced an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn finish(mut self, started: Instant) -> RunManifest {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        self
    }

    /// Writes `manifest.json`, listing every other file in `dir` as output.
    pub fn write(mut self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.outputs = list_files(dir)?
            .into_iter()
            .filter(|f| f != MANIFEST_FILE)
            .collect();
        write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<RunManifest, PipelineError> {
        Ok(read_json(&dir.as_ref().join(MANIFEST_FILE))?)
    }
}

/// Relative paths of all files below `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<String>, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        };
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if let Ok(rel) = path.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: DatasetSpec,
    pub generation: GenerationConfig,
    /// `None` leaves the dataset without latents.
    pub mixing: Option<MixingSpec>,
    pub probe: ProbeConfig,
    pub projections: Vec<String>,
}

impl ExperimentConfig {
    /// Shuffled, noiseless block-diagonal oracle on the multi-object preset,
    /// with an 80/10/10 split.
    pub fn oracle(n_objects: usize, n_groups: usize, n_samples: usize, seed: u64) -> ExperimentConfig {
        let fit = n_samples * 8 / 10;
        let val = n_samples / 10;
        let spec = crate::dataset::presets::multi_dsprites(n_objects, 8, false);
        ExperimentConfig {
            spec,
            generation: GenerationConfig {
                splits: [fit, val, n_samples - fit - val],
                ..GenerationConfig::new(n_groups, n_samples, seed)
            },
            mixing: Some(MixingSpec::default()),
            probe: ProbeConfig {
                seed,
                ..ProbeConfig::default()
            },
            projections: vec!["object".into(), "property".into(), "identity".into()],
        }
    }
}

/// Generates the factors and, when a mixing is given, the latents.
pub fn build_dataset(
    spec: &DatasetSpec,
    generation: &GenerationConfig,
    mixing: Option<&MixingSpec>,
) -> Result<GroupedDataset, PipelineError> {
    let ds = generate_eval_dataset(spec, generation)?;
    Ok(match mixing {
        Some(mix) => synth_encode(&ds, mix, generation.seed.wrapping_add(MIXING_SEED_OFFSET))?,
        None => ds,
    })
}

pub fn parse_projections(schema: &HierarchySchema, names: &[String]) -> Result<Vec<Projection>, PipelineError> {
    Ok(names
        .iter()
        .map(|n| Projection::parse(schema, n))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Scores every probed group and averages.
pub fn compute_metrics(
    groups: &[GroupProbe],
    schema: &Arc<HierarchySchema>,
    catalog: &FactorCatalog,
    projections: &[Projection],
) -> Result<MetricReport, PipelineError> {
    compute_metrics_with_background(groups, schema, &catalog.background_factors(), projections)
}

/// Same as [`compute_metrics`] with an explicit set of background factors.
pub fn compute_metrics_with_background(
    groups: &[GroupProbe],
    schema: &Arc<HierarchySchema>,
    background: &[usize],
    projections: &[Projection],
) -> Result<MetricReport, PipelineError> {
    let per_group = groups
        .iter()
        .map(|g| evaluate_group(&g.thresholded, schema, projections, background, Some(&g.informativeness)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_groups(per_group)?)
}

pub struct ExperimentOutput {
    pub dataset: GroupedDataset,
    pub probe: ProbeResult,
    pub report: MetricReport,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, PipelineError> {
    if config.mixing.is_none() {
        return Err(PipelineError::Input("an experiment needs a mixing to produce latents".into()));
    }
    let dataset = build_dataset(&config.spec, &config.generation, config.mixing.as_ref())?;
    let probe = probe_dataset(&dataset, &config.probe)?;
    let projections = parse_projections(&dataset.schema, &config.projections)?;
    let report = compute_metrics(&probe.groups, &dataset.schema, &dataset.catalog, &projections)?;
    Ok(ExperimentOutput { dataset, probe, report })
}

/// Writes `dataset/`, `probe/` and `metrics/` below `dir`.
pub fn save_experiment(output: &ExperimentOutput, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    save_dataset(&output.dataset, dir.join("dataset"))?;
    save_probe(&output.probe, &output.dataset, dir.join("probe"))?;
    save_metrics(&output.report, dir.join("metrics"))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProbeIndex {
    config: ProbeConfig,
    group_ids: Vec<usize>,
}

/// Group-averaged importances, keyed by tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledImportances {
    pub latent_keys: Vec<String>,
    pub factor_keys: Vec<String>,
    pub raw: Array2<f64>,
    pub thresholded: Array2<f64>,
}

impl PooledImportances {
    pub fn of(groups: &[GroupProbe], schema: &HierarchySchema) -> Option<PooledImportances> {
        let first = groups.first()?;
        let n = groups.len() as f64;
        let mut raw = Array2::zeros(first.raw_importances.dim());
        let mut thresholded = Array2::zeros(first.thresholded.dim());
        for g in groups {
            raw += &g.raw_importances;
            thresholded += &g.thresholded;
        }
        Some(PooledImportances {
            latent_keys: schema.tuple_keys(crate::schema::Side::Latents),
            factor_keys: schema.tuple_keys(crate::schema::Side::Factors),
            raw: raw / n,
            thresholded: thresholded / n,
        })
    }
}

/// Probe results as loaded back from disk.
pub struct ProbeBundle {
    pub schema: Arc<HierarchySchema>,
    pub catalog: FactorCatalog,
    pub layout: SlotLayout,
    pub result: ProbeResult,
}

/// Directory layout: `probe.json` (config and group ids), `group_{g}.json`,
/// `importances.json` (group means) and copies of the dataset's schema,
/// layout and factor specs.
pub fn save_probe(result: &ProbeResult, ds: &GroupedDataset, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_json(&dir.join("schema.json"), &ds.schema.to_doc())?;
    write_json(&dir.join("layout.json"), &ds.layout)?;
    write_json(&dir.join("factor_specs.json"), &ds.catalog)?;
    let index = ProbeIndex {
        config: result.config.clone(),
        group_ids: result.groups.iter().map(|g| g.group_id).collect(),
    };
    write_json(&dir.join("probe.json"), &index)?;
    for g in &result.groups {
        write_json(&dir.join(format!("group_{}.json", g.group_id)), g)?;
    }
    if let Some(pooled) = PooledImportances::of(&result.groups, &ds.schema) {
        write_json(&dir.join("importances.json"), &pooled)?;
    }
    Ok(())
}

pub fn load_probe(dir: impl AsRef<Path>) -> Result<ProbeBundle, PipelineError> {
    let dir = dir.as_ref();
    let doc: SchemaDoc = read_json(&dir.join("schema.json"))?;
    let schema = Arc::new(HierarchySchema::try_from(doc)?);
    let layout: SlotLayout = read_json(&dir.join("layout.json"))?;
    let catalog: FactorCatalog = read_json(&dir.join("factor_specs.json"))?;
    let index: ProbeIndex = read_json(&dir.join("probe.json"))?;
    let mut groups = Vec::with_capacity(index.group_ids.len());
    for id in index.group_ids {
        let g: GroupProbe = read_json(&dir.join(format!("group_{id}.json")))?;
        let want = (schema.n_latents(), schema.n_factors());
        if g.thresholded.dim() != want || g.raw_importances.dim() != want {
            return Err(PipelineError::Input(format!(
                "group {id}: importances are {:?}, schema needs {want:?}",
                g.thresholded.dim()
            )));
        }
        groups.push(g);
    }
    Ok(ProbeBundle {
        schema,
        catalog,
        layout,
        result: ProbeResult {
            config: index.config,
            groups,
        },
    })
}

pub fn save_metrics(report: &MetricReport, dir: impl AsRef<Path>) -> Result<PathBuf, PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join("metrics.json");
    write_json(&path, report)?;
    Ok(path)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<MetricReport, PipelineError> {
    Ok(read_json(path.as_ref())?)
}

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Permutation alignment on.
    pub alignment: bool,
    /// Local groups on; off means one globally sampled group.
    pub local_groups: bool,
    pub report: MetricReport,
}

/// Runs the `{±alignment} × {±local groups}` grid on the same mixing.
pub fn run_ablation(config: &ExperimentConfig) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::with_capacity(4);
    for local_groups in [true, false] {
        let mut cfg = config.clone();
        if !local_groups {
            let gen = &config.generation;
            cfg.generation = GenerationConfig {
                n_groups: 1,
                n_samples: gen.n_samples * gen.n_groups,
                splits: gen.splits.map(|s| s * gen.n_groups),
                seed: gen.seed,
                local: false,
            };
        }
        let dataset = build_dataset(&cfg.spec, &cfg.generation, cfg.mixing.as_ref())?;
        let projections = parse_projections(&dataset.schema, &cfg.projections)?;
        for alignment in [true, false] {
            let probe_cfg = ProbeConfig {
                n_iters: if alignment { cfg.probe.n_iters } else { 0 },
                ..cfg.probe.clone()
            };
            let probe = probe_dataset(&dataset, &probe_cfg)?;
            let report = compute_metrics(&probe.groups, &dataset.schema, &dataset.catalog, &projections)?;
            rows.push(AblationRow {
                alignment,
                local_groups,
                report,
            });
        }
    }
    Ok(rows)
}
