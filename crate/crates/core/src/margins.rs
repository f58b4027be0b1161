//! Margin computation and empirical margin-loss queries.
//!
//! A [`MarginProfile`] holds the sorted sample margins of one model on one
//! dataset and answers the loss queries every certificate needs.

use crate::error::{Error, Result};

/// Boundary convention for the empirical margin loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossConvention {
    /// Count margins strictly below the threshold (the empirical default).
    #[default]
    Strict,
    /// Count margins at or below the threshold; always at least the strict
    /// loss, so certificates stay valid under it.
    Conservative,
}

/// Multiclass margin: score of the labelled class minus the best other
/// score. Positive iff the labelled class strictly wins.
pub fn multiclass_margin(scores: &[f64], label: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::domain(format!(
            "multiclass margin needs >= 2 scores, got {}",
            scores.len()
        )));
    }
    if label >= scores.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    let mut best_other = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if i != label && s > best_other {
            best_other = s;
        }
    }
    Ok(scores[label] - best_other)
}

/// Binary margin `y * f(x)` with `y` in {-1, +1}.
pub fn binary_margin(score: f64, label: i8) -> Result<f64> {
    match label {
        1 => Ok(score),
        -1 => Ok(-score),
        _ => Err(Error::domain(format!("binary label must be ±1, got {label}"))),
    }
}

/// Sorted sample margins of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginProfile {
    margins: Vec<f64>,
}

impl MarginProfile {
    /// Builds a profile from (unsorted) per-sample margins.
    pub fn new(mut margins: Vec<f64>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::domain("margin profile needs >= 1 sample".to_string()));
        }
        if margins.iter().any(|m| m.is_nan()) {
            return Err(Error::domain("margin profile has NaN entries".to_string()));
        }
        margins.sort_by(|a, b| a.partial_cmp(b).expect("no NaN after check"));
        Ok(MarginProfile { margins })
    }

    pub fn len(&self) -> usize {
        self.margins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    /// Empirical margin loss at threshold `gamma` under the default strict
    /// convention.
    pub fn empirical_loss(&self, gamma: f64) -> f64 {
        self.empirical_loss_with(gamma, LossConvention::Strict)
    }

    /// Empirical margin loss at `gamma`: the fraction of margins `< gamma`
    /// (strict) or `<= gamma` (conservative).
    pub fn empirical_loss_with(&self, gamma: f64, conv: LossConvention) -> f64 {
        let count = match conv {
            LossConvention::Strict => self.margins.partition_point(|&m| m < gamma),
            LossConvention::Conservative => self.margins.partition_point(|&m| m <= gamma),
        };
        count as f64 / self.margins.len() as f64
    }

    /// The margin achieving a strict empirical loss at most `target`: the
    /// `(floor(target * m) + 1)`-th smallest margin. Errors if that order
    /// statistic is not strictly positive.
    pub fn margin_for_target_loss(&self, target: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::domain(format!(
                "target loss {target} must lie in [0, 1)"
            )));
        }
        let m = self.margins.len();
        let idx = ((target * m as f64).floor() as usize).min(m - 1);
        let gamma = self.margins[idx];
        if gamma <= 0.0 {
            return Err(Error::MarginUnachievable(format!(
                "order statistic {} is {gamma} <= 0; the model misclassifies more than \
                 the target fraction",
                idx + 1
            )));
        }
        Ok(gamma)
    }

    /// Minimum sample margin, defined only when every margin is positive.
    pub fn min_positive_margin(&self) -> Result<f64> {
        let min = self.margins[0];
        if min <= 0.0 {
            return Err(Error::NoHardMargin(format!(
                "smallest sample margin is {min} <= 0"
            )));
        }
        Ok(min)
    }

    /// Profile with every margin scaled by `theta > 0`.
    pub fn scaled(&self, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::domain(format!("scale {theta} must be > 0")));
        }
        Ok(MarginProfile {
            margins: self.margins.iter().map(|m| theta * m).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn multiclass_margin_examples() {
        assert_eq!(multiclass_margin(&[2.0, 0.5, -1.0], 0).unwrap(), 1.5);
        assert_eq!(multiclass_margin(&[1.0, 1.0], 0).unwrap(), 0.0);
        assert!(multiclass_margin(&[1.0, 2.0], 2).is_err());
        assert!(multiclass_margin(&[1.0], 0).is_err());
    }

    #[test]
    fn binary_margin_examples() {
        assert_eq!(binary_margin(0.3, -1).unwrap(), -0.3);
        assert_eq!(binary_margin(0.3, 1).unwrap(), 0.3);
        assert!(binary_margin(0.3, 0).is_err());
    }

    #[test]
    fn empirical_loss_examples() {
        let p = MarginProfile::new(vec![1.0, -0.1, 0.5, 0.2]).unwrap();
        assert_eq!(p.empirical_loss(0.5), 0.5);
        assert_eq!(p.empirical_loss(f64::NEG_INFINITY), 0.0);
        let ties = MarginProfile::new(vec![0.2, 0.2]).unwrap();
        assert_eq!(ties.empirical_loss(0.2), 0.0);
        assert_eq!(
            ties.empirical_loss_with(0.2, LossConvention::Conservative),
            1.0
        );
    }

    #[test]
    fn margin_for_target_loss_examples() {
        let p = MarginProfile::new(vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let g = p.margin_for_target_loss(0.2).unwrap();
        assert_eq!(g, 0.2);
        assert_eq!(p.empirical_loss(g), 0.2);

        let q = MarginProfile::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(q.margin_for_target_loss(0.0).unwrap(), 1.0);

        let bad = MarginProfile::new(vec![-0.5, 1.0, 2.0]).unwrap();
        assert!(matches!(
            bad.margin_for_target_loss(0.0),
            Err(Error::MarginUnachievable(_))
        ));
    }

    #[test]
    fn min_positive_margin_examples() {
        let p = MarginProfile::new(vec![0.9, 0.5, 2.0]).unwrap();
        assert_eq!(p.min_positive_margin().unwrap(), 0.5);
        let bad = MarginProfile::new(vec![0.5, -0.1]).unwrap();
        assert!(matches!(
            bad.min_positive_margin(),
            Err(Error::NoHardMargin(_))
        ));
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(MarginProfile::new(vec![]).is_err());
        assert!(MarginProfile::new(vec![0.1, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn loss_monotone_in_gamma(
            margins in proptest::collection::vec(-10.0..10.0f64, 1..80),
            g1 in -12.0..12.0f64,
            g2 in -12.0..12.0f64,
        ) {
            let p = MarginProfile::new(margins).unwrap();
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(p.empirical_loss(lo) <= p.empirical_loss(hi));
        }

        #[test]
        fn positive_homogeneity_power_of_two(
            margins in proptest::collection::vec(-10.0..10.0f64, 1..80),
            g in -12.0..12.0f64,
            pow in -3i32..6,
        ) {
            let theta = (2.0f64).powi(pow);
            let p = MarginProfile::new(margins).unwrap();
            let scaled = p.scaled(theta).unwrap();
            prop_assert_eq!(scaled.empirical_loss(theta * g), p.empirical_loss(g));
        }

        #[test]
        fn target_loss_consistency(
            margins in proptest::collection::vec(0.01..10.0f64, 1..80),
            target in 0.0..0.9f64,
        ) {
            let p = MarginProfile::new(margins).unwrap();
            let g = p.margin_for_target_loss(target).unwrap();
            prop_assert!(p.empirical_loss(g) <= target + 1e-12);
        }

        #[test]
        fn multiclass_margin_positive_homogeneous(
            scores in proptest::collection::vec(-5.0..5.0f64, 2..6),
            pow in -2i32..5,
        ) {
            let theta = (2.0f64).powi(pow);
            let scaled: Vec<f64> = scores.iter().map(|s| theta * s).collect();
            let m0 = multiclass_margin(&scores, 0).unwrap();
            let m1 = multiclass_margin(&scaled, 0).unwrap();
            prop_assert_eq!(theta * m0, m1);
        }
    }

    #[test]
    fn loss_is_right_continuous_step_function() {
        let p = MarginProfile::new(vec![0.1, 0.3, 0.3, 0.7]).unwrap();
        for &g in p.margins() {
            // Strict-< loss jumps just above each margin value, not at it.
            let at = p.empirical_loss(g);
            let just_above = p.empirical_loss(g + 1e-12);
            let just_below = p.empirical_loss(g - 1e-12);
            assert!(just_below <= at && at < just_above);
        }
    }
}
