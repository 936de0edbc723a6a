//! Shannon entropies with an arbitrary log base.
//!
//! Everything is accumulated in nats and rebased once at the end. Base 1 is
//! allowed: a point mass has entropy 0 and anything else is `+∞`.

use ndarray::ArrayView2;

use super::MetricsError;

/// `ln K`, or `None` for the base-1 convention.
fn log_base(base: f64) -> Result<Option<f64>, MetricsError> {
    if !(base >= 1.0) || !base.is_finite() {
        return Err(MetricsError::InvalidBase(base));
    }
    Ok(if base == 1.0 { None } else { Some(base.ln()) })
}

/// Converts an entropy in nats to base `K`.
pub fn rebase(nats: f64, base: f64) -> Result<f64, MetricsError> {
    Ok(match log_base(base)? {
        Some(ln_k) => nats / ln_k,
        None if nats <= 0.0 => 0.0,
        None => f64::INFINITY,
    })
}

fn check_mass(p: f64) -> Result<(), MetricsError> {
    if p >= 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(MetricsError::InvalidMass(p))
    }
}

/// `-Σ p ln p` over a (not necessarily normalized) weight vector, with
/// `0 ln 0 = 0`. The vector is normalized by its own sum first.
pub fn entropy_nats(weights: &[f64]) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for &w in weights {
        check_mass(w)?;
        total += w;
    }
    if total <= 0.0 {
        return Err(MetricsError::ZeroMass);
    }
    Ok(weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum())
}

/// `H_K` of a marginal distribution.
pub fn entropy(marginal: &[f64], base: f64) -> Result<f64, MetricsError> {
    rebase(entropy_nats(marginal)?, base)
}

/// `H(A | B)` in nats where rows index `A` and columns index `B`.
pub fn conditional_entropy_nats(joint: ArrayView2<'_, f64>) -> Result<f64, MetricsError> {
    let mut h = 0.0;
    for col in joint.columns() {
        let mut mass = 0.0;
        for &p in col {
            check_mass(p)?;
            mass += p;
        }
        if mass <= 0.0 {
            continue;
        }
        for &p in col {
            if p > 0.0 {
                h -= p * (p / mass).ln();
            }
        }
    }
    Ok(h.max(0.0))
}

/// `H_K(A | B) = -Σ P(a,b) log_K P(a|b)` for a joint laid out with `A` on
/// rows and `B` on columns.
pub fn conditional_entropy(joint: ArrayView2<'_, f64>, base: f64) -> Result<f64, MetricsError> {
    rebase(conditional_entropy_nats(joint)?, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_over_two_base_two() {
        assert!((entropy(&[0.5, 0.5], 2.0).unwrap() - 1.0).abs() < 1e-15);
        let joint = array![[0.25, 0.25], [0.25, 0.25]];
        assert!((conditional_entropy(joint.view(), 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn each_column_uniform_over_two_of_four_base_four() {
        let joint = array![
            [0.25, 0.0],
            [0.25, 0.0],
            [0.0, 0.25],
            [0.0, 0.25]
        ];
        assert!((conditional_entropy(joint.view(), 4.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_condition_is_zero() {
        let joint = array![[0.3, 0.0], [0.0, 0.7]];
        assert_eq!(conditional_entropy(joint.view(), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn base_one_convention() {
        assert_eq!(entropy(&[1.0], 1.0).unwrap(), 0.0);
        assert_eq!(entropy(&[0.5, 0.5], 1.0).unwrap(), f64::INFINITY);
        let point = array![[0.4, 0.6]];
        assert_eq!(conditional_entropy(point.view(), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_entries_and_bad_bases_are_errors() {
        let joint = array![[0.5, -0.1], [0.3, 0.3]];
        assert!(matches!(
            conditional_entropy(joint.view(), 2.0),
            Err(MetricsError::InvalidMass(_))
        ));
        assert!(matches!(entropy(&[0.5, 0.5], 0.5), Err(MetricsError::InvalidBase(_))));
        assert!(matches!(entropy(&[0.0, 0.0], 2.0), Err(MetricsError::ZeroMass)));
    }
}
