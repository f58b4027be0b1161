//! Certificate for deep feed-forward ReLU networks.

use super::{check_delta, check_gamma, check_m, new_certificate, BoundCertificate};
use crate::error::{Error, Result};
use crate::margins::MarginProfile;
use crate::models::ReluModel;

use std::f64::consts::E;

/// Margin certificate for a ReLU network with per-layer Gaussian
/// derandomisation.
///
/// The per-layer standard deviations sit at equality in the inverse
/// variance constraint
/// `sigma_i^{-2} = 32 h (e R prod_j |W_j|_2 / (theta |W_i|_2))^2 log(mhd)`,
/// the margin/σ covers contribute `2 log log2(4 C_theta / theta)` and
/// `2 log log2(4 C_sigma / sigma_i)` with `C_theta = R prod |W_i|_2` and
/// `C_sigma = 15 h^{-1/2} W_star^2`, and the final bound is
/// `L_hat + 2/m + sqrt((4 sum |W_i - W_i0|_F^2 / sigma_i^2 + log(2(d+1)sqrt(m)/delta) + covers) / 2m)`.
///
/// `w_star` defaults to the largest spectral norm in the model; passing an
/// a-priori cap is the honest usage since the theorem fixes it before
/// seeing data. Vacuous when `theta` reaches the network's output range.
pub fn relu_certificate(
    model: &ReluModel,
    profile: &MarginProfile,
    theta: f64,
    delta: f64,
    m: usize,
    w_star: Option<f64>,
) -> Result<BoundCertificate> {
    check_m(m, 2)?;
    check_delta(delta)?;
    check_gamma(theta)?;
    let spectral = model.spectral_norms()?;
    let computed_cap = spectral.iter().cloned().fold(0.0, f64::max);
    let w_star = match w_star {
        Some(cap) => {
            for (i, s) in spectral.iter().enumerate() {
                if *s > cap * (1.0 + 1e-9) {
                    return Err(Error::precondition(format!(
                        "layer {i} spectral norm {s} exceeds the cap W_star = {cap}"
                    )));
                }
            }
            cap
        }
        None => computed_cap,
    };
    if w_star <= 0.0 {
        return Err(Error::Degenerate("all layers are zero".to_string()));
    }
    let d = model.depth();
    let h = model.max_units() as f64;
    let r = model.input_bound();
    let mf = m as f64;
    let l_hat = profile.empirical_loss(theta);

    let prod: f64 = spectral.iter().product();
    let c_theta = r * prod;
    let c_sigma = 15.0 / h.sqrt() * w_star * w_star;

    let mut cert = new_certificate("relu-deep", theta, delta, m);
    cert.empirical_loss = l_hat;
    cert.epsilon_term = 2.0 / mf;
    cert.cover_params.insert("w_star".to_string(), w_star);
    cert.cover_params.insert("c_theta".to_string(), c_theta);
    cert.cover_params.insert("c_sigma".to_string(), c_sigma);
    cert.cover_params.insert("h".to_string(), h);
    cert.cover_params.insert("d".to_string(), d as f64);

    // Beyond the output range the empirical term is 1 and the bound holds
    // trivially.
    if theta >= c_theta {
        return Ok(cert.vacuous_at_one());
    }

    let log_mhd = (mf * h * d as f64).ln();
    let mut sigmas = Vec::with_capacity(d);
    for (i, s) in spectral.iter().enumerate() {
        let sigma = theta * s / (E * r * prod * (32.0 * h * log_mhd).sqrt());
        cert.cover_params.insert(format!("sigma_{}", i + 1), sigma);
        sigmas.push(sigma);
    }

    let theta_cover = (4.0 * c_theta / theta).log2();
    if theta_cover <= 1.0 {
        return Ok(cert.vacuous_at_one());
    }
    let mut cover_terms = 2.0 * theta_cover.ln();
    for sigma in &sigmas {
        let sc = (4.0 * c_sigma / sigma).log2();
        if sc <= 1.0 {
            return Ok(cert.vacuous_at_one());
        }
        cover_terms += 2.0 * sc.ln();
    }

    let mut kl_term = 0.0;
    for (layer, (prior, sigma)) in model
        .layers()
        .iter()
        .zip(model.priors().iter().zip(&sigmas))
    {
        let drift = crate::numcore::frobenius_sq((layer - prior).view());
        kl_term += drift / (sigma * sigma);
    }
    kl_term *= 4.0;
    cert.complexity = kl_term;

    let inner = kl_term + (2.0 * (d as f64 + 1.0) * mf.sqrt() / delta).ln() + cover_terms;
    Ok(cert.finish(l_hat + 2.0 / mf + (inner / (2.0 * mf)).sqrt()))
}
