//! Generalisation-bound certificates with itemised breakdowns.
//!
//! Each certificate operation evaluates one theorem's final covered
//! display for the supplied model/margin data and returns a
//! [`BoundCertificate`]: the bound value in `[0, 1]`, the empirical term
//! it embeds, the complexity/KL-side quantity, and every cover parameter
//! the display fixes. Certificates clamp to 1 and set `vacuous` instead
//! of erroring, so sweeps never abort on a bad margin.

mod linear;
mod relu;
mod shel;

pub use linear::{
    linear_l1_soft, linear_l2_hard, linear_l2_smallkl, linear_l2_soft, linear_partial,
    FeatureMapKl,
};
pub use relu::relu_certificate;
pub use shel::{shel_binary_certificate, shel_certificate, shel_complexity};

use std::collections::BTreeMap;

use crate::csvutil;
use crate::error::{Error, Result};

/// A bound value plus its breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCertificate {
    /// Which theorem produced the certificate.
    pub theorem: &'static str,
    /// Bound on the population error, clamped to `[0, 1]`.
    pub bound: f64,
    /// Margin the empirical loss was evaluated at.
    pub gamma: f64,
    /// Confidence parameter.
    pub delta: f64,
    /// Sample count the concentration terms use.
    pub m: usize,
    /// Empirical margin loss embedded in the bound.
    pub empirical_loss: f64,
    /// The Delta or KL-side quantity of the theorem.
    pub complexity: f64,
    /// The derandomisation epsilon absorbed into the display.
    pub epsilon_term: f64,
    /// Named cover/auxiliary parameters (alpha, T, sigma_i, ...).
    pub cover_params: BTreeMap<String, f64>,
    /// True when the certificate carries no information (clamped to 1).
    pub vacuous: bool,
}

impl BoundCertificate {
    /// Clamps a raw bound into `[0, 1]`, marking vacuity at the top.
    pub(crate) fn finish(mut self, raw: f64) -> Self {
        if !raw.is_finite() || raw >= 1.0 {
            self.bound = 1.0;
            self.vacuous = true;
        } else {
            self.bound = raw.max(0.0);
        }
        self
    }

    pub(crate) fn vacuous_at_one(mut self) -> Self {
        self.bound = 1.0;
        self.vacuous = true;
        self
    }

    /// CSV header matching [`Self::to_csv_row`]: the fixed fields followed
    /// by every cover parameter in key order.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "theorem".to_string(),
            "bound".to_string(),
            "vacuous".to_string(),
            "gamma".to_string(),
            "delta".to_string(),
            "m".to_string(),
            "empirical_loss".to_string(),
            "complexity".to_string(),
            "epsilon_term".to_string(),
        ];
        cols.extend(self.cover_params.keys().cloned());
        csvutil::write_row(&cols)
    }

    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![
            self.theorem.to_string(),
            csvutil::fmt_f64(self.bound),
            self.vacuous.to_string(),
            csvutil::fmt_f64(self.gamma),
            csvutil::fmt_f64(self.delta),
            self.m.to_string(),
            csvutil::fmt_f64(self.empirical_loss),
            csvutil::fmt_f64(self.complexity),
            csvutil::fmt_f64(self.epsilon_term),
        ];
        fields.extend(self.cover_params.values().map(|v| csvutil::fmt_f64(*v)));
        csvutil::write_row(&fields)
    }
}

pub(crate) fn new_certificate(
    theorem: &'static str,
    gamma: f64,
    delta: f64,
    m: usize,
) -> BoundCertificate {
    BoundCertificate {
        theorem,
        bound: 1.0,
        gamma,
        delta,
        m,
        empirical_loss: 0.0,
        complexity: 0.0,
        epsilon_term: 0.0,
        cover_params: BTreeMap::new(),
        vacuous: false,
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(format!(
            "delta = {delta} must lie in (0, 1)"
        )));
    }
    Ok(())
}

pub(crate) fn check_m(m: usize, min: usize) -> Result<()> {
    if m < min {
        return Err(Error::precondition(format!("m = {m} must be >= {min}")));
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::precondition(format!(
            "margin = {gamma} must be positive and finite"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping_marks_vacuous() {
        let cert = new_certificate("test", 1.0, 0.1, 100).finish(1.5);
        assert_eq!(cert.bound, 1.0);
        assert!(cert.vacuous);
        let ok = new_certificate("test", 1.0, 0.1, 100).finish(0.3);
        assert_eq!(ok.bound, 0.3);
        assert!(!ok.vacuous);
    }

    #[test]
    fn csv_round_trip_preserves_fields() {
        let mut cert = new_certificate("test-theorem", 0.5, 0.05, 1000).finish(0.25);
        cert.empirical_loss = 0.1;
        cert.complexity = 42.5;
        cert.cover_params.insert("alpha".to_string(), 2.0);
        cert.cover_params.insert("t_cover".to_string(), 17.0);
        let header = crate::csvutil::parse_row(&cert.csv_header());
        let row = crate::csvutil::parse_row(&cert.to_csv_row());
        assert_eq!(header.len(), row.len());
        let get = |name: &str| {
            let idx = header.iter().position(|h| h == name).unwrap();
            row[idx].clone()
        };
        assert_eq!(get("theorem"), "test-theorem");
        assert_eq!(crate::csvutil::parse_f64(&get("bound")).unwrap(), 0.25);
        assert_eq!(crate::csvutil::parse_f64(&get("alpha")).unwrap(), 2.0);
        assert_eq!(crate::csvutil::parse_f64(&get("t_cover")).unwrap(), 17.0);
    }
}
