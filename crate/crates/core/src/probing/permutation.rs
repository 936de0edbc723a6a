//! Slot permutations. A permutation `perm` maps output slot `s` to source
//! slot `perm[s]`: applying it to `z` puts block `perm[s]` of `z` at
//! position `s`.

use ndarray::{Array1, Array2};

use super::ProbeError;
use crate::dataset::SlotLayout;
use crate::regressors::Predictor;

/// Largest number of free slots searched exhaustively.
pub const MAX_FREE_SLOTS: usize = 9;

/// Unchecked block reordering; `out` must have the length of `z`.
pub fn apply_slot_permutation_into(z: &[f64], perm: &[usize], dims: usize, out: &mut [f64]) {
    for (s, &src) in perm.iter().enumerate() {
        out[s * dims..(s + 1) * dims].copy_from_slice(&z[src * dims..(src + 1) * dims]);
    }
}

pub fn check_permutation(layout: &SlotLayout, perm: &[usize]) -> Result<(), ProbeError> {
    if perm.len() != layout.n_slots {
        return Err(ProbeError::InvalidPermutation(format!(
            "{} entries for {} slots",
            perm.len(),
            layout.n_slots
        )));
    }
    let mut seen = vec![false; layout.n_slots];
    for (s, &p) in perm.iter().enumerate() {
        if p >= layout.n_slots || seen[p] {
            return Err(ProbeError::InvalidPermutation(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
        if (layout.is_pinned(s) || layout.is_pinned(p)) && s != p {
            return Err(ProbeError::PinnedSlotMoved(if layout.is_pinned(s) { s } else { p }));
        }
    }
    Ok(())
}

pub fn apply_slot_permutation(
    z: &[f64],
    layout: &SlotLayout,
    perm: &[usize],
) -> Result<Vec<f64>, ProbeError> {
    if z.len() != layout.latent_len() {
        return Err(ProbeError::Shape(format!(
            "latent of length {} for layout of {}",
            z.len(),
            layout.latent_len()
        )));
    }
    check_permutation(layout, perm)?;
    let mut out = vec![0.0; z.len()];
    apply_slot_permutation_into(z, perm, layout.dims_per_slot, &mut out);
    Ok(out)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (s, &p) in perm.iter().enumerate() {
        inv[p] = s;
    }
    inv
}

/// Applying `compose(a, b)` equals applying `a` and then `b`.
pub fn compose_permutations(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&s| a[s]).collect()
}

pub fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(s, &p)| s == p)
}

/// Calls `visit` on every permutation of the free slots in lexicographic
/// order of the full permutation vector.
pub fn for_each_permutation(layout: &SlotLayout, mut visit: impl FnMut(&[usize])) {
    let free = layout.free_slots();
    let mut perm: Vec<usize> = (0..layout.n_slots).collect();
    let mut used = vec![false; free.len()];
    fn rec(
        depth: usize,
        free: &[usize],
        used: &mut [bool],
        perm: &mut [usize],
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if depth == free.len() {
            visit(perm);
            return;
        }
        for c in 0..free.len() {
            if !used[c] {
                used[c] = true;
                perm[free[depth]] = free[c];
                rec(depth + 1, free, used, perm, visit);
                used[c] = false;
            }
        }
    }
    rec(0, &free, &mut used, &mut perm, &mut visit);
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestPermutation {
    pub perm: Vec<usize>,
    /// `‖v − f(π(z))‖²` at the optimum.
    pub squared_residual: f64,
    /// Same quantity for the identity permutation.
    pub identity_squared_residual: f64,
}

fn check_capacity(layout: &SlotLayout) -> Result<(), ProbeError> {
    let k = layout.free_slots().len();
    if k > MAX_FREE_SLOTS {
        return Err(ProbeError::Capacity { free_slots: k });
    }
    Ok(())
}

/// Exhaustive search by predicting every permuted latent. Ties go to
/// the lexicographically smallest permutation.
pub fn best_permutation_scalar<P: Predictor + ?Sized>(
    f: &P,
    z: &[f64],
    v: &[f64],
    layout: &SlotLayout,
) -> Result<BestPermutation, ProbeError> {
    check_capacity(layout)?;
    let d = layout.dims_per_slot;
    let mut permuted = vec![0.0; z.len()];
    let mut pred = vec![0.0; v.len()];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut identity = f64::NAN;
    for_each_permutation(layout, |perm| {
        apply_slot_permutation_into(z, perm, d, &mut permuted);
        f.predict_into(&permuted, &mut pred);
        let r: f64 = v.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        if is_identity(perm) {
            identity = r;
        }
        if best.as_ref().is_none_or(|(_, b)| r < *b) {
            best = Some((perm.to_vec(), r));
        }
    });
    let (perm, squared_residual) = best.expect("at least the identity");
    Ok(BestPermutation {
        perm,
        squared_residual,
        identity_squared_residual: identity,
    })
}

/// Per-sample search for affine predictors `f(x) = Wᵀx + b`. The
/// contribution `W_sᵀ z_r` of every (position, source) pair is computed once
/// and permutations are explored depth-first over partial sums.
pub struct AffineSearch<'a> {
    weights: &'a Array2<f64>,
    intercept: &'a Array1<f64>,
    layout: &'a SlotLayout,
    free: Vec<usize>,
}

impl<'a> AffineSearch<'a> {
    pub fn new(
        weights: &'a Array2<f64>,
        intercept: &'a Array1<f64>,
        layout: &'a SlotLayout,
    ) -> Result<Self, ProbeError> {
        check_capacity(layout)?;
        if weights.nrows() != layout.latent_len() || intercept.len() != weights.ncols() {
            return Err(ProbeError::Shape(format!(
                "affine map {:?} does not match layout of {} dims",
                weights.dim(),
                layout.latent_len()
            )));
        }
        Ok(AffineSearch {
            weights,
            intercept,
            layout,
            free: layout.free_slots(),
        })
    }

    pub fn search(&self, z: &[f64], v: &[f64]) -> BestPermutation {
        let n_slots = self.layout.n_slots;
        let d = self.layout.dims_per_slot;
        let m = v.len();
        // contrib[s][r] = W_sᵀ z_r
        let mut contrib = vec![vec![0.0; m]; n_slots * n_slots];
        for s in 0..n_slots {
            for r in 0..n_slots {
                if (self.layout.is_pinned(s) || self.layout.is_pinned(r)) && s != r {
                    continue;
                }
                let c = &mut contrib[s * n_slots + r];
                for k in 0..d {
                    let x = z[r * d + k];
                    if x == 0.0 {
                        continue;
                    }
                    let row = self.weights.row(s * d + k);
                    for (cj, w) in c.iter_mut().zip(row.iter()) {
                        *cj += w * x;
                    }
                }
            }
        }
        let mut base: Vec<f64> = v.iter().zip(self.intercept.iter()).map(|(a, b)| a - b).collect();
        let free_set: Vec<bool> = (0..n_slots).map(|s| !self.layout.is_pinned(s)).collect();
        for s in (0..n_slots).filter(|&s| !free_set[s]) {
            for (b, c) in base.iter_mut().zip(&contrib[s * n_slots + s]) {
                *b -= c;
            }
        }

        let k = self.free.len();
        let mut state = Dfs {
            contrib: &contrib,
            n_slots,
            free: &self.free,
            used: vec![false; k],
            perm: (0..n_slots).collect(),
            partial: vec![base; k + 1],
            best: None,
            identity: f64::NAN,
        };
        state.rec(0);
        let (perm, squared_residual) = state.best.expect("at least the identity");
        BestPermutation {
            perm,
            squared_residual,
            identity_squared_residual: state.identity,
        }
    }
}

struct Dfs<'c> {
    contrib: &'c [Vec<f64>],
    n_slots: usize,
    free: &'c [usize],
    used: Vec<bool>,
    perm: Vec<usize>,
    /// `partial[t]` is `v − b − Σ` of the first `t` free positions' contributions.
    partial: Vec<Vec<f64>>,
    best: Option<(Vec<usize>, f64)>,
    identity: f64,
}

impl Dfs<'_> {
    fn rec(&mut self, depth: usize) {
        if depth == self.free.len() {
            let r: f64 = self.partial[depth].iter().map(|x| x * x).sum();
            if is_identity(&self.perm) {
                self.identity = r;
            }
            if self.best.as_ref().is_none_or(|(_, b)| r < *b) {
                self.best = Some((self.perm.clone(), r));
            }
            return;
        }
        let s = self.free[depth];
        for c in 0..self.free.len() {
            if self.used[c] {
                continue;
            }
            let src = self.free[c];
            self.used[c] = true;
            self.perm[s] = src;
            let (head, tail) = self.partial.split_at_mut(depth + 1);
            let contrib = &self.contrib[s * self.n_slots + src];
            for ((t, h), c) in tail[0].iter_mut().zip(&head[depth]).zip(contrib) {
                *t = h - c;
            }
            self.rec(depth + 1);
            self.used[c] = false;
        }
        self.perm[s] = s;
    }
}

/// `argmin_π ‖v − f(π(z))‖₂` over all permutations of the free slots.
/// Affine predictors take the partial-sum route; others are evaluated
/// permutation by permutation.
pub fn best_permutation<P: Predictor + ?Sized>(
    f: &P,
    z: &[f64],
    v: &[f64],
    layout: &SlotLayout,
) -> Result<BestPermutation, ProbeError> {
    if z.len() != layout.latent_len() || f.n_inputs() != z.len() || f.n_outputs() != v.len() {
        return Err(ProbeError::Shape(format!(
            "latent {} / target {} vs predictor {}→{}",
            z.len(),
            v.len(),
            f.n_inputs(),
            f.n_outputs()
        )));
    }
    match f.affine() {
        Some((w, b)) => Ok(AffineSearch::new(w, b, layout)?.search(z, v)),
        None => best_permutation_scalar(f, z, v, layout),
    }
}
