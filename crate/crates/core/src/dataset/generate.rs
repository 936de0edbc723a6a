use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSpec, FactorKind, FactorSpec, Group, GroupedDataset, Locality, Splits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_groups: usize,
    pub n_samples: usize,
    /// Fit / validation / evaluation sizes; must add up to `n_samples`.
    pub splits: [usize; 3],
    pub seed: u64,
    /// Sample around a per-group initial value. When false every factor is
    /// drawn from its full domain.
    #[serde(default = "default_local")]
    pub local: bool,
}

fn default_local() -> bool {
    true
}

impl GenerationConfig {
    pub fn new(n_groups: usize, n_samples: usize, seed: u64) -> GenerationConfig {
        let fit = n_samples * 6 / 10;
        let validation = n_samples * 2 / 10;
        GenerationConfig {
            n_groups,
            n_samples,
            splits: [fit, validation, n_samples - fit - validation],
            seed,
            local: true,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.n_groups == 0 || self.n_samples == 0 {
            return Err(DatasetError::Config(
                "n_groups and n_samples must be positive".into(),
            ));
        }
        if self.splits.iter().sum::<usize>() != self.n_samples {
            return Err(DatasetError::Config(format!(
                "split sizes {:?} do not add up to {} samples",
                self.splits, self.n_samples
            )));
        }
        if self.splits[0] < 2 {
            return Err(DatasetError::Config("the fit split needs at least 2 samples".into()));
        }
        Ok(())
    }
}

/// Per-group starting point of one factor.
#[derive(Clone, Copy, Debug)]
enum Initial {
    Index(usize),
    Value(f64),
}

fn draw_initial(spec: &FactorSpec, rng: &mut ChaCha8Rng) -> Initial {
    match &spec.kind {
        FactorKind::Continuous { range: [lo, hi] } => Initial::Value(uniform(*lo, *hi, rng)),
        FactorKind::Ordinal { values } => Initial::Index(rng.random_range(0..values.len())),
        FactorKind::Categorical { classes } => Initial::Index(rng.random_range(0..classes.len())),
    }
}

fn uniform(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn draw_local(spec: &FactorSpec, initial: Initial, local: bool, rng: &mut ChaCha8Rng) -> f64 {
    let locality = if local { &spec.locality } else { &Locality::Full };
    match (&spec.kind, initial) {
        (FactorKind::Continuous { range: [lo, hi] }, Initial::Value(x)) => match locality {
            Locality::Delta(d) => uniform((x - d).max(*lo), (x + d).min(*hi), rng),
            Locality::Same => x,
            _ => uniform(*lo, *hi, rng),
        },
        (FactorKind::Ordinal { values }, Initial::Index(i)) => {
            let n = values.len();
            let index = match locality {
                Locality::Window(w) => rng.random_range(i.saturating_sub(*w)..=(i + w).min(n - 1)),
                Locality::Same => i,
                _ => rng.random_range(0..n),
            };
            values[index]
        }
        (FactorKind::Categorical { classes }, Initial::Index(i)) => match locality {
            Locality::Same => i as f64,
            _ => rng.random_range(0..classes.len()) as f64,
        },
        _ => unreachable!("initial value drawn for the same kind"),
    }
}

fn generate_group(
    id: usize,
    specs: &[FactorSpec],
    config: &GenerationConfig,
) -> Group {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(id as u64);
    let initial: Vec<Initial> = specs.iter().map(|s| draw_initial(s, &mut rng)).collect();
    let mut factors = Array2::zeros((config.n_samples, specs.len()));
    for mut row in factors.rows_mut() {
        for (f, spec) in specs.iter().enumerate() {
            row[f] = draw_local(spec, initial[f], config.local, &mut rng);
        }
    }
    Group {
        id,
        factors,
        latents: None,
        splits: Splits::contiguous(config.splits),
    }
}

/// Draws `n_groups` groups. Within a group every factor of every object
/// stays in the locality window of a group-specific initial value, so
/// pooled statistics are dominated by within-group structure. Group `g`
/// uses ChaCha8 stream `g` of `seed`; the output does not depend on the
/// thread count.
pub fn generate_eval_dataset(
    spec: &DatasetSpec,
    config: &GenerationConfig,
) -> Result<GroupedDataset, DatasetError> {
    spec.validate()?;
    config.validate()?;
    let schema = Arc::new(spec.schema()?);
    let catalog = spec.catalog()?;
    let specs: Vec<FactorSpec> = catalog.entries.iter().map(|e| e.spec.clone()).collect();
    let groups = (0..config.n_groups)
        .into_par_iter()
        .map(|g| generate_group(g, &specs, config))
        .collect();
    Ok(GroupedDataset {
        schema,
        catalog,
        layout: spec.layout(),
        groups,
    })
}
