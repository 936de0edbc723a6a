use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionScores {
    #[serde(rename = "C")]
    pub completeness: Option<f64>,
    #[serde(rename = "D")]
    pub disentanglement: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InformativenessReport {
    pub global: Option<f64>,
    pub per_factor: BTreeMap<String, Option<f64>>,
}

/// Which slot was dropped as background, and whether the choice was a tie.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundInfo {
    pub slot: String,
    pub slot_mass: f64,
    pub tie: bool,
}

/// Scores for one local group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub projections: BTreeMap<String, ProjectionScores>,
    pub informativeness: InformativenessReport,
    pub per_factor_completeness: BTreeMap<String, Option<f64>>,
    /// Per-factor completeness with latents grouped by each projection.
    pub per_factor_by_projection: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    #[serde(rename = "weights")]
    pub factor_weights: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundInfo>,
}

/// Mean and standard error over groups, ignoring missing values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
        let values: Vec<f64> = values.into_iter().flatten().collect();
        let n = values.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Summary {
            mean: Some(mean),
            stderr,
            n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    #[serde(rename = "C")]
    pub completeness: Summary,
    #[serde(rename = "D")]
    pub disentanglement: Summary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InformativenessSummary {
    pub global: Summary,
    pub per_factor: BTreeMap<String, Summary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub projections: BTreeMap<String, ProjectionSummary>,
    pub informativeness: InformativenessSummary,
    pub per_factor_completeness: BTreeMap<String, Summary>,
    pub per_factor_by_projection: BTreeMap<String, BTreeMap<String, Summary>>,
    pub weights: BTreeMap<String, Summary>,
}

/// Group-averaged report. The top-level fields hold the group means; the
/// `aggregate` block adds standard errors and counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub projections: BTreeMap<String, ProjectionScores>,
    pub informativeness: InformativenessReport,
    pub per_factor_completeness: BTreeMap<String, Option<f64>>,
    pub weights: BTreeMap<String, f64>,
    pub groups: Vec<GroupMetrics>,
    pub aggregate: AggregateMetrics,
}

fn keys<'a, V: 'a>(maps: impl Iterator<Item = &'a BTreeMap<String, V>>) -> Vec<String> {
    let mut out: Vec<String> = maps.flat_map(|m| m.keys().cloned()).collect();
    out.sort();
    out.dedup();
    out
}

fn summarize_map<'a>(
    groups: &'a [GroupMetrics],
    get: impl Fn(&'a GroupMetrics) -> &'a BTreeMap<String, Option<f64>>,
) -> BTreeMap<String, Summary> {
    keys(groups.iter().map(&get))
        .into_iter()
        .map(|k| {
            let s = Summary::of(groups.iter().map(|g| get(g).get(&k).copied().flatten()));
            (k, s)
        })
        .collect()
}

fn means(map: &BTreeMap<String, Summary>) -> BTreeMap<String, Option<f64>> {
    map.iter().map(|(k, s)| (k.clone(), s.mean)).collect()
}

/// Unweighted average of every metric across groups.
pub fn aggregate_groups(groups: Vec<GroupMetrics>) -> Result<MetricReport, MetricsError> {
    if groups.is_empty() {
        return Err(MetricsError::NoGroups);
    }
    let mut agg = AggregateMetrics::default();
    for name in keys(groups.iter().map(|g| &g.projections)) {
        let get = |f: fn(&ProjectionScores) -> Option<f64>| {
            Summary::of(groups.iter().map(|g| g.projections.get(&name).and_then(f)))
        };
        agg.projections.insert(
            name.clone(),
            ProjectionSummary {
                completeness: get(|s| s.completeness),
                disentanglement: get(|s| s.disentanglement),
            },
        );
    }
    agg.informativeness.global = Summary::of(groups.iter().map(|g| g.informativeness.global));
    agg.informativeness.per_factor = summarize_map(&groups, |g| &g.informativeness.per_factor);
    agg.per_factor_completeness = summarize_map(&groups, |g| &g.per_factor_completeness);
    for name in keys(groups.iter().map(|g| &g.per_factor_by_projection)) {
        let empty = BTreeMap::new();
        let table = summarize_map(&groups, |g| g.per_factor_by_projection.get(&name).unwrap_or(&empty));
        agg.per_factor_by_projection.insert(name, table);
    }
    for key in keys(groups.iter().map(|g| &g.factor_weights)) {
        let s = Summary::of(groups.iter().map(|g| g.factor_weights.get(&key).copied()));
        agg.weights.insert(key, s);
    }

    let projections = agg
        .projections
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                ProjectionScores {
                    completeness: s.completeness.mean,
                    disentanglement: s.disentanglement.mean,
                },
            )
        })
        .collect();
    let informativeness = InformativenessReport {
        global: agg.informativeness.global.mean,
        per_factor: means(&agg.informativeness.per_factor),
    };
    Ok(MetricReport {
        projections,
        informativeness,
        per_factor_completeness: means(&agg.per_factor_completeness),
        weights: agg
            .weights
            .iter()
            .map(|(k, s)| (k.clone(), s.mean.unwrap_or(0.0)))
            .collect(),
        groups,
        aggregate: agg,
    })
}

/// Presentation helper: a score in percent, rounded to one decimal.
pub fn percent(value: f64) -> f64 {
    (value * 1000.0).round() / 10.0
}
