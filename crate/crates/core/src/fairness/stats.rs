use crate::error::{Error, Result};

/// Offset added after shifting a vector so its minimum sits at zero.
pub const SHIFT_EPSILON: f64 = 1e-9;

/// Returns `values` unchanged when none is negative; otherwise shifts the
/// whole vector by `-min + SHIFT_EPSILON`.
pub fn shift_nonnegative(values: &[f64]) -> Vec<f64> {
    shift_if(values, |m| m < 0.0)
}

fn shift_if(values: &[f64], trigger: impl Fn(f64) -> bool) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if trigger(min) {
        values.iter().map(|v| v - min + SHIFT_EPSILON).collect()
    } else {
        values.to_vec()
    }
}

fn non_empty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Validation(format!("{what} of an empty sequence")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} of non-finite input")));
    }
    Ok(())
}

/// Gini index, `sum_ij |x_i - x_j| / (2 n^2 mean)`; 0 for an all-zero input.
pub fn gini(rewards: &[f64]) -> Result<f64> {
    non_empty(rewards, "gini")?;
    let mut xs = shift_nonnegative(rewards);
    let n = xs.len() as f64;
    let total: f64 = xs.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    xs.sort_by(f64::total_cmp);
    // sum_ij |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i) with 1-based ranks
    let weighted: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).clamp(0.0, 1.0))
}

/// Jain's fairness index `(sum x)^2 / (n sum x^2)`; 1 for an all-zero input.
pub fn jfi(rewards: &[f64]) -> Result<f64> {
    non_empty(rewards, "jfi")?;
    let xs = shift_nonnegative(rewards);
    let sum: f64 = xs.iter().sum();
    let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
    if sum_sq == 0.0 {
        return Ok(1.0);
    }
    Ok((sum * sum / (xs.len() as f64 * sum_sq)).min(1.0))
}

/// Normalised Nash social welfare: geometric mean over arithmetic mean.
///
/// A zero entry would pin the geometric mean at 0, so the shift here also
/// fires when the minimum is exactly zero.
pub fn nnsw(rewards: &[f64]) -> Result<f64> {
    non_empty(rewards, "nnsw")?;
    let xs = shift_if(rewards, |m| m <= 0.0);
    let n = xs.len() as f64;
    let arith = xs.iter().sum::<f64>() / n;
    let geo = (xs.iter().map(|x| x.ln()).sum::<f64>() / n).exp();
    Ok((geo / arith).min(1.0))
}

/// Fraction of baseline reward given up by the fair policy.
pub fn price_of_fairness(fair_mean_reward: f64, baseline_mean_reward: f64) -> Result<f64> {
    if baseline_mean_reward == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok((baseline_mean_reward - fair_mean_reward) / baseline_mean_reward.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_relative_eq!(gini(&[0.0, 1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(gini(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.75, epsilon = 1e-15);
        assert_eq!(gini(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(gini(&[]).is_err());
    }

    #[test]
    fn jfi_examples() {
        assert_relative_eq!(jfi(&[3.0, 3.0, 3.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(jfi(&[7.5, 0.0, 0.0, 0.0]).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(jfi(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(jfi(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn nnsw_examples() {
        assert_relative_eq!(nnsw(&[2.0, 2.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(nnsw(&[1.0, 4.0]).unwrap(), 0.8, epsilon = 1e-15);
        assert_relative_eq!(nnsw(&[0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-12);
        let v = nnsw(&[-3.0, 5.0]).unwrap();
        assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn pof_examples() {
        assert_eq!(price_of_fairness(100.0, 100.0).unwrap(), 0.0);
        assert_relative_eq!(price_of_fairness(90.0, 100.0).unwrap(), 0.10, epsilon = 1e-15);
        assert_relative_eq!(price_of_fairness(110.0, 100.0).unwrap(), -0.10, epsilon = 1e-15);
        assert_eq!(price_of_fairness(1.0, 0.0), Err(Error::UndefinedBaseline));
        assert_relative_eq!(price_of_fairness(-12.0, -10.0).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn negative_inputs_are_shifted() {
        assert_eq!(shift_nonnegative(&[1.0, 2.0]), vec![1.0, 2.0]);
        let s = shift_nonnegative(&[-1.0, 2.0]);
        assert_eq!(s, vec![SHIFT_EPSILON, 3.0 + SHIFT_EPSILON]);
        let g = gini(&[-1.0, 1.0]).unwrap();
        assert!((0.0..=1.0).contains(&g));
    }

    proptest! {
        #[test]
        fn scale_invariance(xs in prop::collection::vec(0.0f64..100.0, 1..20), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            let (g1, g2) = (gini(&xs).unwrap(), gini(&scaled).unwrap());
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.abs().max(1e-300) || (g1 - g2).abs() < 1e-14);
            let (j1, j2) = (jfi(&xs).unwrap(), jfi(&scaled).unwrap());
            prop_assert!((j1 - j2).abs() <= 1e-12 * j1);
        }

        #[test]
        fn bounds(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let g = gini(&xs).unwrap();
            let j = jfi(&xs).unwrap();
            let w = nnsw(&xs).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(j > 0.0 && j <= 1.0);
            prop_assert!(w > 0.0 && w <= 1.0);
        }

        #[test]
        fn nnsw_falls_as_spread_grows(mean in 1.0f64..50.0, a in 0.01f64..0.45, b in 0.01f64..0.45) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-3);
            let narrow = nnsw(&[mean * (1.0 - lo), mean * (1.0 + lo)]).unwrap();
            let wide = nnsw(&[mean * (1.0 - hi), mean * (1.0 + hi)]).unwrap();
            prop_assert!(wide < narrow);
        }
    }
}
