//! Certificates and the sweep complexity measure for SHEL networks.

use super::{check_delta, check_gamma, check_m, new_certificate, BoundCertificate};
use crate::error::{Error, Result};
use crate::margins::MarginProfile;
use crate::models::ShelModel;
use crate::numcore::{categorical_entropy, pairwise_sum};

use std::f64::consts::LN_2;

/// The scalar complexity measure tracked against generalisation in
/// sweeps: `sqrt(K)/(gamma sqrt(m)) * (V_inf |U - U0|_F + |V|_F)`.
///
/// Evaluated as `(V_inf sqrt(K su) + sqrt(K sv)) / (gamma sqrt(m))` with
/// `su, sv` the squared norms, which makes the width-doubling and
/// `(V, gamma)` scaling identities exact in floating point.
pub fn shel_complexity(model: &ShelModel, gamma: f64, m: usize) -> Result<f64> {
    check_gamma(gamma)?;
    if m == 0 {
        return Err(Error::precondition("m must be >= 1".to_string()));
    }
    let k = model.width() as f64;
    let su = model.u_drift_sq();
    let sv = model.v_frob_sq();
    let numerator = model.v_inf() * (k * su).sqrt() + (k * sv).sqrt();
    Ok(numerator / (gamma * (m as f64).sqrt()))
}

/// Multiclass SHEL certificate: the covered small-kl display with
/// `alpha = 2` and `m' = m`, inverted through Pinsker's inequality.
///
/// `B = [17 (2 V_inf K / gamma)^2 (|U-U0|_F^2 / 2K + |V|_F^2 log2 / (V_inf^2 K)) log m`
/// `     + log(4 sqrt(m)/delta) + 2 log(log(4 V_inf K/gamma)/log 2)] / m`
///
/// and `bound = L_hat + 1/m + sqrt(B/2) + 1/m`. Vacuous when the margin
/// reaches the network's range (`gamma >= V_inf K`).
pub fn shel_certificate(
    model: &ShelModel,
    profile: &MarginProfile,
    gamma: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    let v_inf = model.v_inf();
    if v_inf <= 0.0 {
        return Err(Error::Degenerate(
            "V_inf = 0: output weights are all zero".to_string(),
        ));
    }
    let k = model.width() as f64;
    let mf = m as f64;
    let theta = gamma / (v_inf * k);
    let l_hat = profile.empirical_loss(gamma);

    let mut cert = new_certificate("shel-multiclass", gamma, delta, m);
    cert.empirical_loss = l_hat;
    cert.epsilon_term = 1.0 / mf;
    cert.cover_params.insert("alpha".to_string(), 2.0);
    cert.cover_params.insert("v_inf".to_string(), v_inf);
    cert.cover_params.insert("k".to_string(), k);
    cert.cover_params.insert("theta".to_string(), theta);

    let loglog_arg = (4.0 / theta).ln() / LN_2;
    if theta >= 1.0 || loglog_arg <= 1.0 {
        return Ok(cert.vacuous_at_one());
    }
    let t_cover = (16.0 / (theta * theta) * mf.ln()).ceil();
    cert.cover_params.insert("t_cover".to_string(), t_cover);

    let su = model.u_drift_sq();
    let sv = model.v_frob_sq();
    let kl_side = su / (2.0 * k) + sv * LN_2 / (v_inf * v_inf * k);
    let lead = 17.0 * (2.0 / theta) * (2.0 / theta);
    let bracket = lead * kl_side * mf.ln() + (4.0 * mf.sqrt() / delta).ln() + 2.0 * loglog_arg.ln();
    let b = bracket / mf;
    cert.complexity = b;
    Ok(cert.finish(l_hat + 1.0 / mf + (b / 2.0).sqrt() + 1.0 / mf))
}

/// Binary SHEL certificate via the signed-mixture route: uses the
/// L1-normalised margin and initialisation distances weighted by relative
/// output weights, inverted through Pinsker's inequality.
pub fn shel_binary_certificate(
    model: &ShelModel,
    profile: &MarginProfile,
    gamma: f64,
    delta: f64,
    m: usize,
) -> Result<BoundCertificate> {
    check_m(m, 8)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    if !model.is_binary() {
        return Err(Error::precondition(format!(
            "binary certificate needs a single output, model has {}",
            model.classes()
        )));
    }
    let v = model.v().row(0);
    let abs_v: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let v_l1 = pairwise_sum(&abs_v);
    if v_l1 <= 0.0 {
        return Err(Error::Degenerate(
            "|v|_1 = 0: output weights are all zero".to_string(),
        ));
    }
    let k = model.width();
    let mf = m as f64;
    let epsilon = gamma / v_l1;
    let l_hat = profile.empirical_loss(gamma);

    let mut cert = new_certificate("shel-binary", gamma, delta, m);
    cert.empirical_loss = l_hat;
    cert.epsilon_term = 1.0 / mf;
    cert.cover_params.insert("v_l1".to_string(), v_l1);
    cert.cover_params.insert("k".to_string(), k as f64);

    // The margin exceeds the predictor's range: vacuously true.
    if epsilon > 1.0 {
        return Ok(cert.vacuous_at_one());
    }
    let t_cover = (32.0 * (v_l1 / gamma).powi(2) * mf.ln()).ceil();
    cert.cover_params.insert("t_cover".to_string(), t_cover);

    // Signed mixture over 2K components: positive weights first.
    let mut p = Vec::with_capacity(2 * k);
    for &vk in v.iter() {
        p.push(vk.max(0.0) / v_l1);
    }
    for &vk in v.iter() {
        p.push((-vk).max(0.0) / v_l1);
    }
    let entropy = categorical_entropy(&p)?;
    let mut drift = 0.0;
    for (kk, &vk) in v.iter().enumerate() {
        let du = &model.u().row(kk) - &model.u0().row(kk);
        drift += (vk.abs() / v_l1) * du.iter().map(|x| x * x).sum::<f64>();
    }
    let kl_mixture = (2.0 * k as f64).ln() - entropy + 0.5 * drift;
    cert.cover_params.insert("kl_mixture".to_string(), kl_mixture);

    let coeff = 32.0 * (v_l1 / gamma).powi(2) * mf.ln() + 1.0;
    let cover = 2.0 * (4.0 * v_l1 / gamma).log2().ln();
    let rhs = (coeff * kl_mixture + (2.0 / delta).ln() + cover) / mf;
    cert.complexity = rhs;
    Ok(cert.finish(l_hat + 1.0 / mf + (rhs / 2.0).sqrt() + 1.0 / mf))
}
