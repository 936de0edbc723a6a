//! Entropies and mutual informations of finite multivariate distributions.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView2, ArrayView3};

use super::TheoryError;
use crate::metrics::entropy::rebase;

/// A probability table over several discrete variables, one axis each.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    probs: ArrayD<f64>,
}

type Marginal = BTreeMap<Vec<usize>, f64>;

impl DiscreteJoint {
    /// Normalizes a non-negative table.
    pub fn new(table: ArrayD<f64>) -> Result<Self, TheoryError> {
        if let Some(&bad) = table.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(TheoryError::InvalidMass(bad));
        }
        let total: f64 = table.sum();
        if total <= 0.0 {
            return Err(TheoryError::ZeroMass);
        }
        Ok(DiscreteJoint {
            probs: table.mapv(|v| v / total),
        })
    }

    pub fn from_2d(table: ArrayView2<'_, f64>) -> Result<Self, TheoryError> {
        Self::new(table.to_owned().into_dyn())
    }

    pub fn from_3d(table: ArrayView3<'_, f64>) -> Result<Self, TheoryError> {
        Self::new(table.to_owned().into_dyn())
    }

    pub fn n_vars(&self) -> usize {
        self.probs.ndim()
    }

    pub fn probs(&self) -> &ArrayD<f64> {
        &self.probs
    }

    fn check_vars(&self, vars: &[usize]) -> Result<(), TheoryError> {
        match vars.iter().find(|&&v| v >= self.n_vars()) {
            Some(&v) => Err(TheoryError::UnknownVariable {
                index: v,
                n_vars: self.n_vars(),
            }),
            None => Ok(()),
        }
    }

    /// Marginal over `vars`, with zero-mass outcomes omitted.
    fn marginal(&self, vars: &[usize]) -> Marginal {
        let mut out = Marginal::new();
        for (idx, &p) in self.probs.indexed_iter() {
            if p > 0.0 {
                let key: Vec<usize> = vars.iter().map(|&v| idx[v]).collect();
                *out.entry(key).or_insert(0.0) += p;
            }
        }
        out
    }

    /// `H(vars | given)` in nats.
    pub fn conditional_entropy_nats(&self, vars: &[usize], given: &[usize]) -> Result<f64, TheoryError> {
        self.check_vars(vars)?;
        self.check_vars(given)?;
        let both: Vec<usize> = given.iter().chain(vars).copied().collect();
        let joint = self.marginal(&both);
        let cond = self.marginal(given);
        let mut h = 0.0;
        for (key, &p) in &joint {
            let pg = cond[&key[..given.len()]];
            h -= p * (p / pg).ln();
        }
        Ok(h.max(0.0))
    }

    pub fn entropy_nats(&self, vars: &[usize]) -> Result<f64, TheoryError> {
        self.conditional_entropy_nats(vars, &[])
    }

    /// `I(a; b | given)` in nats, summed term by term from its definition.
    pub fn mutual_information_nats(&self, a: &[usize], b: &[usize], given: &[usize]) -> Result<f64, TheoryError> {
        self.check_vars(a)?;
        self.check_vars(b)?;
        self.check_vars(given)?;
        let (na, nb) = (a.len(), b.len());
        let abg: Vec<usize> = a.iter().chain(b).chain(given).copied().collect();
        let ag: Vec<usize> = a.iter().chain(given).copied().collect();
        let bg: Vec<usize> = b.iter().chain(given).copied().collect();
        let p_abg = self.marginal(&abg);
        let p_ag = self.marginal(&ag);
        let p_bg = self.marginal(&bg);
        let p_g = self.marginal(given);
        let mut total = 0.0;
        let mut key_ag = Vec::with_capacity(ag.len());
        let mut key_bg = Vec::with_capacity(bg.len());
        for (key, &p) in &p_abg {
            let (ka, rest) = key.split_at(na);
            let (kb, kg) = rest.split_at(nb);
            key_ag.clear();
            key_ag.extend_from_slice(ka);
            key_ag.extend_from_slice(kg);
            key_bg.clear();
            key_bg.extend_from_slice(kb);
            key_bg.extend_from_slice(kg);
            total += p * (p * p_g[kg] / (p_ag[&key_ag] * p_bg[&key_bg])).ln();
        }
        Ok(total)
    }

    pub fn conditional_entropy(&self, vars: &[usize], given: &[usize], base: f64) -> Result<f64, TheoryError> {
        Ok(rebase(self.conditional_entropy_nats(vars, given)?, base)?)
    }

    pub fn mutual_information(&self, a: &[usize], b: &[usize], given: &[usize], base: f64) -> Result<f64, TheoryError> {
        let nats = self.mutual_information_nats(a, b, given)?;
        if base == 1.0 {
            // Only a constant variable lives in base 1; it carries no information.
            return Ok(if nats.abs() <= 1e-15 { 0.0 } else { f64::INFINITY.copysign(nats) });
        }
        Ok(rebase(nats, base)?)
    }
}

/// `I_K(A; B)` for a table over `A × B`.
pub fn mutual_information(joint: ArrayView2<'_, f64>, base: f64) -> Result<f64, TheoryError> {
    DiscreteJoint::from_2d(joint)?.mutual_information(&[0], &[1], &[], base)
}

/// `I_K(A; B | C)` for a table over `A × B × C`.
pub fn conditional_mutual_information(joint: ArrayView3<'_, f64>, base: f64) -> Result<f64, TheoryError> {
    DiscreteJoint::from_3d(joint)?.mutual_information(&[0], &[1], &[2], base)
}

/// Worst-case numbers from the standard information inequalities on a
/// three-variable table `(A, B, C)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LemmaCheck {
    /// `|H_{K'}(A) − H_K(A) · log_{K'} K|` and the conditional analogue.
    pub change_of_base: f64,
    /// `H(A|C) + H(B|C) − H(A,B|C)` (should be ≥ 0).
    pub subadditivity: f64,
    /// Smallest of `I(A;B)`, `I(A;B|C)` and friends (should be ≥ 0).
    pub mi_min: f64,
    /// `H(A,B|C) − max(H(A|C), H(B|C))` (should be ≥ 0).
    pub joint_vs_marginal: f64,
    /// `|H(A|C) − H(A|B,C) − I(A;B|C)|`.
    pub mi_identity: f64,
    /// `|H(A,B|C) − H(A|C) − H(B|C) + I(A;B|C)|`.
    pub chain_rule: f64,
}

impl LemmaCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.change_of_base <= tol
            && self.subadditivity >= -tol
            && self.mi_min >= -tol
            && self.joint_vs_marginal >= -tol
            && self.mi_identity <= tol
            && self.chain_rule <= tol
    }
}

pub fn check_lemmas(joint: &DiscreteJoint, base: f64, other_base: f64) -> Result<LemmaCheck, TheoryError> {
    if joint.n_vars() != 3 {
        return Err(TheoryError::Arity(joint.n_vars()));
    }
    let (a, b, c) = (&[0usize][..], &[1usize][..], &[2usize][..]);
    let ab = &[0usize, 1][..];
    let bc = &[1usize, 2][..];
    let h = |v: &[usize], g: &[usize]| joint.conditional_entropy(v, g, base);
    let log_ratio = base.ln() / other_base.ln();
    let change_of_base = (joint.conditional_entropy(a, &[], other_base)? - h(a, &[])? * log_ratio)
        .abs()
        .max((joint.conditional_entropy(a, c, other_base)? - h(a, c)? * log_ratio).abs());
    let h_ab_c = h(ab, c)?;
    let h_a_c = h(a, c)?;
    let h_b_c = h(b, c)?;
    let i_ab_c = joint.mutual_information(a, b, c, base)?;
    let mis = [
        joint.mutual_information(a, b, &[], base)?,
        i_ab_c,
        joint.mutual_information(a, c, b, base)?,
        joint.mutual_information(b, c, a, base)?,
        joint.mutual_information(a, bc, &[], base)?,
    ];
    Ok(LemmaCheck {
        change_of_base,
        subadditivity: h_a_c + h_b_c - h_ab_c,
        mi_min: mis.iter().cloned().fold(f64::INFINITY, f64::min),
        joint_vs_marginal: h_ab_c - h_a_c.max(h_b_c),
        mi_identity: (h_a_c - h(a, &[1, 2])? - i_ab_c).abs(),
        chain_rule: (h_ab_c - h_a_c - h_b_c + i_ab_c).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn independent_variables_share_nothing() {
        let a = [0.2, 0.8];
        let b = [0.1, 0.3, 0.6];
        let joint = ndarray::Array2::from_shape_fn((2, 3), |(i, j)| a[i] * b[j]);
        assert!(mutual_information(joint.view(), 2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn copy_of_uniform_variable_has_unit_information_in_its_base() {
        for k in 2..6 {
            let joint = ndarray::Array2::from_shape_fn((k, k), |(i, j)| if i == j { 1.0 } else { 0.0 });
            let i = mutual_information(joint.view(), k as f64).unwrap();
            assert!((i - 1.0).abs() < 1e-14, "{k}: {i}");
        }
    }

    #[test]
    fn conditional_mi_matches_entropy_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t = Array3::from_shape_fn((3, 2, 4), |_| rng.random_range(0.0..1.0));
            let j = DiscreteJoint::from_3d(t.view()).unwrap();
            let by_def = conditional_mutual_information(t.view(), 3.0).unwrap();
            let by_h = j.conditional_entropy(&[0], &[2], 3.0).unwrap() - j.conditional_entropy(&[0], &[1, 2], 3.0).unwrap();
            assert!((by_def - by_h).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_cells_contribute_nothing() {
        let t = array![[0.5, 0.0], [0.0, 0.5]];
        let j = DiscreteJoint::from_2d(t.view()).unwrap();
        assert_eq!(j.conditional_entropy_nats(&[0], &[1]).unwrap(), 0.0);
        assert!((j.entropy_nats(&[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_mass_and_unknown_axes() {
        assert!(matches!(
            mutual_information(array![[0.5, -0.1], [0.3, 0.3]].view(), 2.0),
            Err(TheoryError::InvalidMass(_))
        ));
        let j = DiscreteJoint::from_2d(array![[1.0]].view()).unwrap();
        assert!(j.entropy_nats(&[2]).is_err());
    }

    #[test]
    fn lemma_check_passes_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = Array3::from_shape_fn((2, 3, 3), |_| rng.random_range(0.0..1.0f64).powi(3));
            let j = DiscreteJoint::from_3d(t.view()).unwrap();
            let check = check_lemmas(&j, 4.0, 2.5).unwrap();
            assert!(check.passes(1e-10), "{check:?}");
        }
    }
}
