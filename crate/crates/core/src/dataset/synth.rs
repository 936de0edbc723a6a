use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, GroupedDataset};
use crate::probing::apply_slot_permutation_into;

/// Synthetic encoder. Slot `s` embeds the normalized factors of object `s`
/// through `M_s`, the identity embedding into the first dims or, with
/// `rotate`, that embedding followed by a random orthogonal rotation of the
/// slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingSpec {
    /// `z_s = (1 - leak) M_s v_s + leak · mean_o M_s v_o`, the mean running
    /// over every slot whose object has as many factors as object `s`.
    pub leak: f64,
    pub rotate: bool,
    pub noise_std: f64,
    pub shuffle_slots: bool,
}

impl Default for MixingSpec {
    fn default() -> Self {
        MixingSpec {
            leak: 0.0,
            rotate: false,
            noise_std: 0.0,
            shuffle_slots: true,
        }
    }
}

impl MixingSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(DatasetError::Config(format!("leak {} outside [0, 1]", self.leak)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DatasetError::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }
}

/// Random orthogonal matrix: Gram-Schmidt on a gaussian matrix.
fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::from_shape_fn((d, d), |_| StandardNormal.sample(rng));
        let mut ok = true;
        for j in 0..d {
            for k in 0..j {
                let dot = q.column(j).dot(&q.column(k));
                let prev = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-dot, &prev);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

struct Plan {
    /// Factor indices feeding each slot.
    slot_factors: Vec<Vec<usize>>,
    /// `dims × |slot_factors[s]|` embedding per slot.
    maps: Vec<Array2<f64>>,
}

fn plan(ds: &GroupedDataset, mix: &MixingSpec, seed: u64) -> Result<Plan, DatasetError> {
    let layout = &ds.layout;
    let n_slots = layout.n_slots;
    let d = layout.dims_per_slot;
    let mut slot_factors = vec![Vec::new(); n_slots];
    for (i, entry) in ds.catalog.entries.iter().enumerate() {
        let slot = match (entry.object, entry.background) {
            (_, true) => n_slots - 1,
            (Some(o), false) => o,
            (None, false) => {
                return Err(DatasetError::Dimension(format!(
                    "factor `{}` is not assigned to an object",
                    entry.key
                )))
            }
        };
        if slot >= n_slots {
            return Err(DatasetError::Dimension(format!(
                "factor `{}` belongs to object {slot} but the layout has {n_slots} slots",
                entry.key
            )));
        }
        slot_factors[slot].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = Vec::with_capacity(n_slots);
    for factors in &slot_factors {
        let m = factors.len();
        if m > d {
            return Err(DatasetError::Dimension(format!(
                "{m} factors do not fit into {d} dims per slot"
            )));
        }
        let embed = Array2::from_shape_fn((d, m), |(r, c)| if r == c { 1.0 } else { 0.0 });
        maps.push(if mix.rotate {
            random_rotation(d, &mut rng).dot(&embed)
        } else {
            embed
        });
    }
    Ok(Plan { slot_factors, maps })
}

fn encode_group(
    ds: &GroupedDataset,
    plan: &Plan,
    mix: &MixingSpec,
    seed: u64,
    g: usize,
) -> (Array2<f64>, Vec<Vec<usize>>) {
    let layout = &ds.layout;
    let group = &ds.groups[g];
    let (n_slots, d) = (layout.n_slots, layout.dims_per_slot);
    let free = layout.free_slots();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group.id as u64 + 1);
    let noise = Normal::new(0.0, mix.noise_std).expect("validated");
    let n = group.n_samples();
    let mut z = Array2::zeros((n, layout.latent_len()));
    let mut perms = Vec::with_capacity(n);
    let mut raw = vec![0.0; layout.latent_len()];
    let mut out = vec![0.0; layout.latent_len()];
    for i in 0..n {
        let row = group.factors.row(i);
        let v: Vec<Array1<f64>> = plan
            .slot_factors
            .iter()
            .map(|fs| {
                fs.iter()
                    .map(|&f| ds.catalog.entries[f].spec.normalize(row[f]))
                    .collect()
            })
            .collect();
        for s in 0..n_slots {
            let own = plan.maps[s].dot(&v[s]);
            let block = &mut raw[s * d..(s + 1) * d];
            if mix.leak > 0.0 {
                let peers: Vec<usize> = (0..n_slots).filter(|&o| v[o].len() == v[s].len()).collect();
                let mut mean = Array1::<f64>::zeros(d);
                for &o in &peers {
                    mean += &plan.maps[s].dot(&v[o]);
                }
                mean /= peers.len() as f64;
                for k in 0..d {
                    block[k] = (1.0 - mix.leak) * own[k] + mix.leak * mean[k];
                }
            } else {
                block.copy_from_slice(own.as_slice().expect("contiguous"));
            }
        }
        if mix.noise_std > 0.0 {
            for x in raw.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        let mut perm: Vec<usize> = (0..n_slots).collect();
        if mix.shuffle_slots {
            let mut shuffled = free.clone();
            shuffled.shuffle(&mut rng);
            for (&slot, &src) in free.iter().zip(&shuffled) {
                perm[slot] = src;
            }
        }
        apply_slot_permutation_into(&raw, &perm, d, &mut out);
        z.row_mut(i).assign(&ndarray::ArrayView1::from(&out));
        perms.push(perm);
    }
    (z, perms)
}

/// `perms[g][i][s]`: object shown at slot `s` of sample `i` in group `g`.
pub type SlotPermutations = Vec<Vec<Vec<usize>>>;

/// Fills in latents. Returns the per-group, per-sample slot permutations
/// (`perm[s]` = object slot shown at position `s`) alongside.
pub fn synth_encode_traced(
    ds: &GroupedDataset,
    mix: &MixingSpec,
    seed: u64,
) -> Result<(GroupedDataset, SlotPermutations), DatasetError> {
    mix.validate()?;
    ds.validate()?;
    let plan = plan(ds, mix, seed)?;
    let encoded: Vec<(Array2<f64>, Vec<Vec<usize>>)> = (0..ds.groups.len())
        .into_par_iter()
        .map(|g| encode_group(ds, &plan, mix, seed, g))
        .collect();
    let mut out = ds.clone();
    let mut traces = Vec::with_capacity(encoded.len());
    for (group, (z, perms)) in out.groups.iter_mut().zip(encoded) {
        group.latents = Some(z);
        traces.push(perms);
    }
    Ok((out, traces))
}

pub fn synth_encode(
    ds: &GroupedDataset,
    mix: &MixingSpec,
    seed: u64,
) -> Result<GroupedDataset, DatasetError> {
    synth_encode_traced(ds, mix, seed).map(|(d, _)| d)
}
