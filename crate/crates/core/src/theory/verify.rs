//! Monte Carlo verification of the score relations over random joints.

use ndarray::{Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    check_dci_equivalence, check_k2_identity, check_lemmas, check_lower_bound, check_upper_bound, random_joint,
    Both, DiscreteJoint, LemmaCheck, TheoryError, VerificationCase, BOUND_TOLERANCE, CONCENTRATIONS,
};
use crate::schema::Projection;

/// Largest allowed gap between identity-projection scores and DCI.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-12;
/// Largest allowed residual of the two-part identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Tolerance for the information-inequality suite.
pub const LEMMA_TOLERANCE: f64 = 1e-10;

/// Worst values seen over all draws of one schema.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub draws: usize,
    /// Largest |score(identity) − DCI|.
    pub equivalence_gap: Both<f64>,
    /// Smallest slack of either link of the lower-bound chain.
    pub lower_slack: Both<f64>,
    pub upper_slack: Both<f64>,
    /// Largest |residual| of the identity for `level 0` vs the other levels.
    pub identity_residual: Both<f64>,
}

impl CaseReport {
    pub fn equivalence_holds(&self) -> bool {
        self.equivalence_gap.completeness <= EQUIVALENCE_TOLERANCE
            && self.equivalence_gap.disentanglement <= EQUIVALENCE_TOLERANCE
    }

    pub fn lower_holds(&self) -> bool {
        self.lower_slack.completeness >= -BOUND_TOLERANCE && self.lower_slack.disentanglement >= -BOUND_TOLERANCE
    }

    pub fn upper_holds(&self) -> bool {
        self.upper_slack.completeness >= -BOUND_TOLERANCE && self.upper_slack.disentanglement >= -BOUND_TOLERANCE
    }

    pub fn identity_holds(&self) -> bool {
        self.identity_residual.completeness <= IDENTITY_TOLERANCE
            && self.identity_residual.disentanglement <= IDENTITY_TOLERANCE
    }

    pub fn passes(&self) -> bool {
        self.equivalence_holds() && self.lower_holds() && self.upper_holds() && self.identity_holds()
    }
}

#[derive(Clone, Copy)]
struct Draw {
    eq: [f64; 2],
    lower: [f64; 2],
    upper: [f64; 2],
    identity: [f64; 2],
}

impl Draw {
    fn merge(self, o: Draw) -> Draw {
        let max = |a: [f64; 2], b: [f64; 2]| [a[0].max(b[0]), a[1].max(b[1])];
        let min = |a: [f64; 2], b: [f64; 2]| [a[0].min(b[0]), a[1].min(b[1])];
        Draw {
            eq: max(self.eq, o.eq),
            lower: min(self.lower, o.lower),
            upper: min(self.upper, o.upper),
            identity: max(self.identity, o.identity),
        }
    }

    const NEUTRAL: Draw = Draw {
        eq: [0.0; 2],
        lower: [f64::INFINITY; 2],
        upper: [f64::INFINITY; 2],
        identity: [0.0; 2],
    };
}

fn both(v: [f64; 2]) -> Both<f64> {
    Both {
        completeness: v[0],
        disentanglement: v[1],
    }
}

/// RNG for draw `i`: one stream per draw, so results do not depend on how
/// draws are spread over threads.
fn draw_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Checks every relation on `draws` Dirichlet joints, cycling through
/// [`CONCENTRATIONS`].
pub fn verify_case(case: &VerificationCase, draws: usize, seed: u64) -> Result<CaseReport, TheoryError> {
    let id = case.identity();
    let first = case.parts[0].clone();
    let rest = Projection::new(case.parts[1..].iter().flat_map(|p| p.levels().to_vec()).collect())?;
    let worst = (0..draws)
        .into_par_iter()
        .map(|i| -> Result<Draw, TheoryError> {
            let mut rng = draw_rng(seed, i);
            let alpha = CONCENTRATIONS[i % CONCENTRATIONS.len()];
            let p = random_joint(case.schema.clone(), alpha, &mut rng)?;
            let eq = check_dci_equivalence(&p)?;
            let lower = check_lower_bound(&p, &id, &case.parts)?;
            let upper = check_upper_bound(&p, &id, &case.parts)?;
            let identity = check_k2_identity(&p, &first, &rest)?;
            Ok(Draw {
                eq: [eq.completeness, eq.disentanglement],
                lower: [lower.completeness.min_slack(), lower.disentanglement.min_slack()],
                upper: [upper.completeness.slack, upper.disentanglement.slack],
                identity: [
                    identity.completeness.residual.abs(),
                    identity.disentanglement.residual.abs(),
                ],
            })
        })
        .try_reduce(|| Draw::NEUTRAL, |a, b| Ok(a.merge(b)))?;
    Ok(CaseReport {
        case: case.name.clone(),
        draws,
        equivalence_gap: both(worst.eq),
        lower_slack: both(worst.lower),
        upper_slack: both(worst.upper),
        identity_residual: both(worst.identity),
    })
}

/// Worst-case [`LemmaCheck`] fields over random three-variable tables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub draws: usize,
    pub worst: LemmaCheck,
}

impl LemmaReport {
    pub fn passes(&self) -> bool {
        self.worst.passes(LEMMA_TOLERANCE)
    }
}

fn lemma_merge(a: LemmaCheck, b: LemmaCheck) -> LemmaCheck {
    LemmaCheck {
        change_of_base: a.change_of_base.max(b.change_of_base),
        subadditivity: a.subadditivity.min(b.subadditivity),
        mi_min: a.mi_min.min(b.mi_min),
        joint_vs_marginal: a.joint_vs_marginal.min(b.joint_vs_marginal),
        mi_identity: a.mi_identity.max(b.mi_identity),
        chain_rule: a.chain_rule.max(b.chain_rule),
    }
}

/// Tables of 2 to 4 outcomes per variable, Dirichlet cells. Entropies use
/// the first variable's cardinality as base and base 10 for the
/// change-of-base comparison.
pub fn verify_lemmas(draws: usize, seed: u64) -> Result<LemmaReport, TheoryError> {
    let neutral = LemmaCheck {
        change_of_base: 0.0,
        subadditivity: f64::INFINITY,
        mi_min: f64::INFINITY,
        joint_vs_marginal: f64::INFINITY,
        mi_identity: 0.0,
        chain_rule: 0.0,
    };
    let worst = (0..draws)
        .into_par_iter()
        .map(|i| -> Result<LemmaCheck, TheoryError> {
            let mut rng = draw_rng(seed, i);
            let alpha = CONCENTRATIONS[i % CONCENTRATIONS.len()];
            let gamma = Gamma::new(alpha, 1.0).map_err(|_| TheoryError::Concentration(alpha))?;
            let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(2..=4));
            let table = loop {
                let t = Array3::from_shape_fn(dims, |_| gamma.sample(&mut rng));
                if t.sum() > 0.0 {
                    break t;
                }
            };
            let joint = DiscreteJoint::new(table.into_dyn().into_shape_with_order(IxDyn(&dims)).expect("same size"))?;
            check_lemmas(&joint, dims[0] as f64, 10.0)
        })
        .try_reduce(|| neutral.clone(), |a, b| Ok(lemma_merge(a, b)))?;
    Ok(LemmaReport { draws, worst })
}
