//! Certificates for L2- and L1-constrained linear predictors, plus the
//! partially-derandomised variant with a learned random feature map.

use super::{check_delta, check_gamma, check_m, new_certificate, BoundCertificate};
use crate::error::{Error, Result};
use crate::margins::MarginProfile;
use crate::numcore::kl_inverse_upper;

/// KL divergence of a feature-map posterior from its prior, supplied by
/// the caller (the feature map itself lives outside these theorems).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMapKl(f64);

impl FeatureMapKl {
    pub fn new(kl: f64) -> Result<Self> {
        if !(kl >= 0.0) || !kl.is_finite() {
            return Err(Error::domain(format!("feature KL = {kl} must be >= 0")));
        }
        Ok(FeatureMapKl(kl))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::precondition(format!(
            "data bound R = {r} must be positive and finite"
        )));
    }
    Ok(())
}

/// Soft-margin relaxation shared by all the linear certificates:
/// `L_hat + sqrt(L_hat * Delta / m) + (Delta + sqrt(Delta) + 2) / m`.
fn soft_bound(l_hat: f64, delta_big: f64, m: usize) -> f64 {
    let mf = m as f64;
    l_hat + (l_hat * delta_big / mf).sqrt() + (delta_big + delta_big.sqrt() + 2.0) / mf
}

fn soft_certificate(
    theorem: &'static str,
    profile: &MarginProfile,
    delta_big: f64,
    gamma: f64,
    delta: f64,
    m: usize,
) -> BoundCertificate {
    let l_hat = profile.empirical_loss(gamma);
    let mut cert = new_certificate(theorem, gamma, delta, m);
    cert.empirical_loss = l_hat;
    cert.complexity = delta_big;
    cert.epsilon_term = 1.0 / m as f64;
    cert.finish(soft_bound(l_hat, delta_big, m))
}

/// Soft-margin certificate for `|w|_2 <= 1`, `|x|_2 <= R`:
/// `Delta = 2 log(2/delta) + 9 (R/gamma)^2 log m`.
pub fn linear_l2_soft(
    profile: &MarginProfile,
    r: f64,
    gamma: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    check_r(r)?;
    let delta_big = 2.0 * (2.0 / delta).ln() + 9.0 * (r / gamma).powi(2) * (m as f64).ln();
    let mut cert = soft_certificate("linear-l2-soft", profile, delta_big, gamma, delta, m);
    cert.cover_params.insert("r".to_string(), r);
    Ok(cert)
}

/// Small-kl form of the L2 certificate (tighter than the soft
/// relaxation): inverts `kl(L_hat + 1/m : .) <= Delta / 2m` numerically.
pub fn linear_l2_smallkl(
    profile: &MarginProfile,
    r: f64,
    gamma: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    check_r(r)?;
    let mf = m as f64;
    let l_hat = profile.empirical_loss(gamma);
    let delta_big = 2.0 * (2.0 / delta).ln() + 9.0 * (r / gamma).powi(2) * mf.ln();
    let q = (l_hat + 1.0 / mf).min(1.0);
    let budget = delta_big / (2.0 * mf);
    let inverted = kl_inverse_upper(q, budget)?;
    let mut cert = new_certificate("linear-l2-smallkl", gamma, delta, m);
    cert.empirical_loss = l_hat;
    cert.complexity = delta_big;
    cert.epsilon_term = 1.0 / mf;
    cert.cover_params.insert("r".to_string(), r);
    Ok(cert.finish(inverted + 1.0 / mf))
}

/// Hard-margin (interpolating) certificate:
/// `(8 (R/gamma_star)^2 log m + log(1/delta)) / m` with `gamma_star` the
/// minimum sample margin. Errors when no positive hard margin exists.
pub fn linear_l2_hard(
    profile: &MarginProfile,
    r: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_r(r)?;
    let gamma_star = profile.min_positive_margin()?;
    let mf = m as f64;
    let complexity = 8.0 * (r / gamma_star).powi(2) * mf.ln();
    let raw = (complexity + (1.0 / delta).ln()) / mf;
    let mut cert = new_certificate("linear-l2-hard", gamma_star, delta, m);
    cert.empirical_loss = 0.0;
    cert.complexity = complexity;
    cert.epsilon_term = 1.0 / mf;
    cert.cover_params.insert("r".to_string(), r);
    Ok(cert.finish(raw))
}

/// Soft-margin certificate for `|w|_1 <= 1`, `|x|_inf <= R` over `K`
/// features: `Delta = 2 log(2/delta) + 19 (R/gamma)^2 log(2K) log m`.
pub fn linear_l1_soft(
    profile: &MarginProfile,
    r_inf: f64,
    k_features: usize,
    gamma: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    check_r(r_inf)?;
    if k_features == 0 {
        return Err(Error::precondition("feature count must be positive".to_string()));
    }
    let delta_big = 2.0 * (2.0 / delta).ln()
        + 19.0 * (r_inf / gamma).powi(2) * (2.0 * k_features as f64).ln() * (m as f64).ln();
    let mut cert = soft_certificate("linear-l1-soft", profile, delta_big, gamma, delta, m);
    cert.cover_params.insert("r".to_string(), r_inf);
    cert.cover_params.insert("k".to_string(), k_features as f64);
    Ok(cert)
}

/// L2 soft-margin certificate under a learned (possibly randomised)
/// feature map with `|phi|_2 <= 1`: the feature-map KL enters `Delta`
/// additively as `2 KL(Q_Phi, P0_Phi)`. Reduces exactly to
/// [`linear_l2_soft`] at zero KL.
pub fn linear_partial(
    profile: &MarginProfile,
    r: f64,
    gamma: f64,
    delta: f64,
    m: usize,
    feature_kl: FeatureMapKl,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    check_r(r)?;
    let delta_big = 2.0 * (2.0 / delta).ln()
        + 9.0 * (r / gamma).powi(2) * (m as f64).ln()
        + 2.0 * feature_kl.value();
    let mut cert = soft_certificate("linear-partial", profile, delta_big, gamma, delta, m);
    cert.cover_params.insert("r".to_string(), r);
    cert.cover_params
        .insert("feature_kl".to_string(), feature_kl.value());
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_loss_profile() -> MarginProfile {
        MarginProfile::new(vec![10.0; 4]).unwrap()
    }

    #[test]
    fn l2_soft_hand_example() {
        // L_hat = 0, R/gamma = 2, m = 1000, delta = 0.05
        let cert = linear_l2_soft(&zero_loss_profile(), 2.0, 1.0, 0.05, 1000).unwrap();
        let delta_big = 2.0 * (40.0f64).ln() + 36.0 * (1000.0f64).ln();
        assert_abs_diff_eq!(cert.complexity, delta_big, epsilon = 1e-12);
        let expected = (delta_big + delta_big.sqrt() + 2.0) / 1000.0;
        assert_abs_diff_eq!(cert.bound, expected, epsilon = 1e-12);
        assert!(!cert.vacuous);
    }

    #[test]
    fn l2_soft_vacuous_at_full_loss() {
        let lossy = MarginProfile::new(vec![-1.0; 10]).unwrap();
        let cert = linear_l2_soft(&lossy, 1.0, 1.0, 0.05, 1000).unwrap();
        assert!(cert.vacuous);
        assert_eq!(cert.bound, 1.0);
    }

    #[test]
    fn l2_soft_r_gamma_co_scaling_is_exact() {
        let profile = MarginProfile::new(vec![0.5, 0.9, 1.4, 2.0]).unwrap();
        let a = linear_l2_soft(&profile, 2.0, 1.0, 0.05, 1000).unwrap();
        let scaled = profile.scaled(2.0).unwrap();
        let b = linear_l2_soft(&scaled, 4.0, 2.0, 0.05, 1000).unwrap();
        assert_eq!(a.bound, b.bound);
        assert_eq!(a.complexity, b.complexity);
    }

    #[test]
    fn l2_smallkl_zero_budget_limit() {
        // kl_inverse_upper(1/m, 0) + 1/m = 2/m
        let m = 1000usize;
        let p = kl_inverse_upper(1.0 / m as f64, 0.0).unwrap();
        assert_abs_diff_eq!(p + 1.0 / m as f64, 2.0 / m as f64, epsilon = 1e-15);
    }

    #[test]
    fn l2_smallkl_dominated_by_soft() {
        let profile = MarginProfile::new(vec![-0.2, 0.1, 0.4, 0.9, 1.5, 2.0]).unwrap();
        for gamma in [0.05, 0.3, 1.0, 2.5] {
            let soft = linear_l2_soft(&profile, 1.0, gamma, 0.05, 500).unwrap();
            let small = linear_l2_smallkl(&profile, 1.0, gamma, 0.05, 500).unwrap();
            assert!(
                small.bound <= soft.bound + 1e-9,
                "gamma={gamma}: {} > {}",
                small.bound,
                soft.bound
            );
        }
    }

    #[test]
    fn l2_hard_hand_example() {
        let profile = MarginProfile::new(vec![1.0, 1.2, 3.0]).unwrap();
        let cert = linear_l2_hard(&profile, 1.0, 0.01, 1000).unwrap();
        let expected = (8.0 * (1000.0f64).ln() + (100.0f64).ln()) / 1000.0;
        assert_abs_diff_eq!(cert.bound, expected, epsilon = 1e-12);
        assert_eq!(cert.gamma, 1.0);
    }

    #[test]
    fn l2_hard_monotone_in_m_and_margin() {
        let profile = MarginProfile::new(vec![1.0, 2.0]).unwrap();
        let a = linear_l2_hard(&profile, 1.0, 0.01, 1000).unwrap();
        let b = linear_l2_hard(&profile, 1.0, 0.01, 2000).unwrap();
        assert!(b.bound < a.bound);
        let halved = MarginProfile::new(vec![0.5, 2.0]).unwrap();
        let c = linear_l2_hard(&halved, 1.0, 0.01, 1000).unwrap();
        assert_abs_diff_eq!(c.complexity, 4.0 * a.complexity, epsilon = 1e-9);
    }

    #[test]
    fn l2_hard_requires_hard_margin() {
        let profile = MarginProfile::new(vec![-0.5, 1.0]).unwrap();
        assert!(matches!(
            linear_l2_hard(&profile, 1.0, 0.01, 1000),
            Err(Error::NoHardMargin(_))
        ));
    }

    #[test]
    fn l1_soft_hand_example() {
        // R/gamma = 1, K = 1, m = 8, delta = 2/e^2 => Delta = 4 + 19 ln2 ln8
        let delta = 2.0 / std::f64::consts::E.powi(2);
        let cert = linear_l1_soft(&zero_loss_profile(), 1.0, 1, 1.0, delta, 8).unwrap();
        let expected = 4.0 + 19.0 * (2.0f64).ln() * (8.0f64).ln();
        assert_abs_diff_eq!(cert.complexity, expected, epsilon = 1e-12);
    }

    #[test]
    fn l1_soft_k_dependence_is_logarithmic() {
        let base = linear_l1_soft(&zero_loss_profile(), 1.0, 4, 1.0, 0.1, 100).unwrap();
        let wide = linear_l1_soft(&zero_loss_profile(), 1.0, 16, 1.0, 0.1, 100).unwrap();
        let fixed = 2.0 * (2.0f64 / 0.1).ln();
        let ratio = (wide.complexity - fixed) / (base.complexity - fixed);
        assert_abs_diff_eq!(ratio, (32.0f64).ln() / (8.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn partial_reduces_to_soft_at_zero_kl() {
        let profile = MarginProfile::new(vec![0.1, 0.5, 0.9, 2.0]).unwrap();
        let soft = linear_l2_soft(&profile, 2.0, 1.0, 0.05, 1000).unwrap();
        let partial =
            linear_partial(&profile, 2.0, 1.0, 0.05, 1000, FeatureMapKl::new(0.0).unwrap())
                .unwrap();
        assert_eq!(soft.bound, partial.bound);
    }

    #[test]
    fn partial_hand_example_and_monotonicity() {
        let cert = linear_partial(
            &zero_loss_profile(),
            2.0,
            1.0,
            0.05,
            1000,
            FeatureMapKl::new(10.0).unwrap(),
        )
        .unwrap();
        let expected = 2.0 * (40.0f64).ln() + 36.0 * (1000.0f64).ln() + 20.0;
        assert_abs_diff_eq!(cert.complexity, expected, epsilon = 1e-12);
        let smaller = linear_partial(
            &zero_loss_profile(),
            2.0,
            1.0,
            0.05,
            1000,
            FeatureMapKl::new(1.0).unwrap(),
        )
        .unwrap();
        assert!(smaller.bound < cert.bound);
        assert!(FeatureMapKl::new(-1.0).is_err());
    }

    #[test]
    fn preconditions_rejected() {
        let p = zero_loss_profile();
        assert!(linear_l2_soft(&p, 1.0, 1.0, 0.05, 7).is_err());
        assert!(linear_l2_soft(&p, 1.0, 1.0, 0.0, 100).is_err());
        assert!(linear_l2_soft(&p, 1.0, 1.0, 1.0, 100).is_err());
        assert!(linear_l2_soft(&p, 1.0, 0.0, 0.05, 100).is_err());
        assert!(linear_l2_soft(&p, 0.0, 1.0, 0.05, 100).is_err());
    }
}
