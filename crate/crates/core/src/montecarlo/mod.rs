//! Randomised verification of the probabilistic lemmas the certificates
//! rest on: coupling exceedance (approximate-variation) estimates,
//! sub-Gaussian tail checks, the erf aggregation identity, the Gaussian
//! mixture KL bound, the ReLU perturbation inequality, Gaussian-matrix
//! spectral tails, and the stochastic margin loss of partially
//! derandomised models.
//!
//! Every estimate is a pure function of `(seed, n, parameters)` through
//! the in-repo counter generator, so reports are bit-reproducible.
//! Stochastic checks pass at three standard errors; deterministic
//! inequalities allow zero violations.

use ndarray::{Array1, Array2};
use std::fmt;

use crate::dataset::{LabeledDataset, Labels};
use crate::error::{Error, Result};
use crate::margins::{binary_margin, multiclass_margin, MarginProfile};
use crate::models::{
    relu_forward_with, sample_shel_proxy, PartialShelModel, ReluModel, ShelModel,
};
use crate::numcore::{erf, spectral_norm};
use crate::rng::CounterRng;

/// A Monte-Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyCheck {
    pub check: String,
    /// Ordered `key=value` parameters for the report line.
    pub params: Vec<(String, String)>,
    pub estimate: f64,
    /// The bound (or closed-form target) being checked against.
    pub bound: f64,
    pub std_error: f64,
    pub pass: bool,
    pub seed: u64,
}

impl fmt::Display for VerifyCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "check={}", self.check)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        write!(
            f,
            " estimate={} bound={} std_error={} pass={} seed={}",
            crate::csvutil::fmt_f64(self.estimate),
            crate::csvutil::fmt_f64(self.bound),
            crate::csvutil::fmt_f64(self.std_error),
            self.pass,
            self.seed
        )
    }
}

/// A line-delimited verification report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn merge(&mut self, other: VerifyReport) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        Ok(())
    }
}

/// Label attached to a probe point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLabel {
    Binary(i8),
    Class(usize),
}

/// Finite set of labelled probe points standing in for the data domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub points: Vec<(Array1<f64>, ProbeLabel)>,
}

impl ProbeSet {
    pub fn new(points: Vec<(Array1<f64>, ProbeLabel)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("probe set is empty".to_string()));
        }
        Ok(ProbeSet { points })
    }

    /// Default probe construction: every dataset sample plus `extra`
    /// random unit vectors (labelled cyclically).
    pub fn from_dataset(data: &LabeledDataset, extra: usize, seed: u64) -> Result<Self> {
        let mut points = Vec::with_capacity(data.len() + extra);
        for i in 0..data.len() {
            let label = match &data.labels {
                Labels::Binary(y) => ProbeLabel::Binary(y[i]),
                Labels::Multiclass { y, .. } => ProbeLabel::Class(y[i] as usize),
            };
            points.push((data.sample(i).to_owned(), label));
        }
        let mut rng = CounterRng::from_seed_tag(seed, "probe-set");
        let classes = match &data.labels {
            Labels::Binary(_) => 0,
            Labels::Multiclass { classes, .. } => *classes,
        };
        for j in 0..extra {
            let mut x = Array1::from_shape_fn(data.dim(), |_| rng.next_normal());
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                x.mapv_inplace(|v| v / norm);
            } else {
                x[0] = 1.0;
            }
            let label = if classes == 0 {
                ProbeLabel::Binary(if j % 2 == 0 { 1 } else { -1 })
            } else {
                ProbeLabel::Class(j % classes)
            };
            points.push((x, label));
        }
        ProbeSet::new(points)
    }
}

fn probe_margin(scores: &Array1<f64>, label: ProbeLabel) -> Result<f64> {
    match label {
        ProbeLabel::Binary(y) => binary_margin(scores[0], y),
        ProbeLabel::Class(c) => {
            multiclass_margin(scores.as_slice().expect("contiguous"), c)
        }
    }
}

/// An explicit coupling between a hypothesis distribution `P` and its
/// approximation target `Q`; sampling yields paired score functions.
#[derive(Debug, Clone)]
pub enum CouplingSpec {
    /// Both marginals share one sampled linear predictor (`P = Q`,
    /// coupled identically): margin differences are exactly zero.
    IdentityFeatureMap { w: Array1<f64> },
    /// `f(x) = <u, x>` with `u ~ N(w, I)` against the deterministic mean
    /// predictor `<w, x>`.
    GaussianLinear { w: Array1<f64> },
    /// `T`-draw sign proxy of a SHEL network against the rescaled mean
    /// network `F / (V_inf K)`.
    ShelProxy { model: ShelModel, t: usize },
    /// ReLU network with per-layer Gaussian weight noise against the mean
    /// network.
    ReluGaussianPerturbation { model: ReluModel, sigmas: Vec<f64> },
}

impl CouplingSpec {
    fn tag(&self) -> &'static str {
        match self {
            CouplingSpec::IdentityFeatureMap { .. } => "identity-feature-map",
            CouplingSpec::GaussianLinear { .. } => "gaussian-linear",
            CouplingSpec::ShelProxy { .. } => "shel-proxy",
            CouplingSpec::ReluGaussianPerturbation { .. } => "relu-gaussian-perturbation",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CouplingSpec::IdentityFeatureMap { w } | CouplingSpec::GaussianLinear { w } => {
                if w.is_empty() {
                    return Err(Error::domain("empty weight vector".to_string()));
                }
            }
            CouplingSpec::ShelProxy { model, t } => {
                if *t == 0 {
                    return Err(Error::domain("proxy needs T >= 1".to_string()));
                }
                if model.v_inf() <= 0.0 {
                    return Err(Error::Degenerate("V_inf = 0".to_string()));
                }
            }
            CouplingSpec::ReluGaussianPerturbation { model, sigmas } => {
                if sigmas.len() != model.depth() {
                    return Err(Error::domain(format!(
                        "{} sigmas for {} layers",
                        sigmas.len(),
                        model.depth()
                    )));
                }
                if sigmas.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::domain("negative sigma".to_string()));
                }
            }
        }
        Ok(())
    }

    /// Draws one coupled pair and returns the margin difference
    /// `M(f, z) - M(g, z)` at each probe point.
    fn sample_margin_diffs(
        &self,
        probes: &ProbeSet,
        rng: &mut CounterRng,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.clear();
        match self {
            CouplingSpec::IdentityFeatureMap { w } => {
                // One shared draw; the difference cancels identically.
                for _ in 0..w.len() {
                    rng.next_normal();
                }
                out.extend(std::iter::repeat(0.0).take(probes.points.len()));
            }
            CouplingSpec::GaussianLinear { w } => {
                let u = Array1::from_shape_fn(w.len(), |j| w[j] + rng.next_normal());
                for (x, label) in &probes.points {
                    let f = Array1::from_vec(vec![u.dot(x)]);
                    let g = Array1::from_vec(vec![w.dot(x)]);
                    out.push(probe_margin(&f, *label)? - probe_margin(&g, *label)?);
                }
            }
            CouplingSpec::ShelProxy { model, t } => {
                let proxy = sample_shel_proxy(model, *t, rng)?;
                let scale = 1.0 / (model.v_inf() * model.width() as f64);
                for (x, label) in &probes.points {
                    let f = proxy.eval(x.view());
                    let g = model.forward(x.view())?.mapv(|v| v * scale);
                    out.push(probe_margin(&f, *label)? - probe_margin(&g, *label)?);
                }
            }
            CouplingSpec::ReluGaussianPerturbation { model, sigmas } => {
                let noisy: Vec<Array2<f64>> = model
                    .layers()
                    .iter()
                    .zip(sigmas)
                    .map(|(w, s)| {
                        Array2::from_shape_fn(w.dim(), |idx| w[idx] + s * rng.next_normal())
                    })
                    .collect();
                for (x, label) in &probes.points {
                    let f = relu_forward_with(&noisy, x.view());
                    let g = relu_forward_with(model.layers(), x.view());
                    out.push(probe_margin(&f, *label)? - probe_margin(&g, *label)?);
                }
            }
        }
        Ok(())
    }
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Estimates the coupling-specific exceedance behind the approximate
/// variation: the maximum over probe points of the empirical probability
/// that the paired margins differ by more than `gamma / 2` (two-sided, so
/// it upper-bounds both derandomisation directions).
pub fn estimate_uav(
    coupling: &CouplingSpec,
    probes: &ProbeSet,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    coupling.validate()?;
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("gamma = {gamma} must be > 0")));
    }
    if n < 1000 {
        return Err(Error::domain(format!("n = {n} must be >= 1000")));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "estimate-uav");
    let threshold = gamma / 2.0;
    let mut counts = vec![0usize; probes.points.len()];
    let mut diffs = Vec::with_capacity(probes.points.len());
    for _ in 0..n {
        coupling.sample_margin_diffs(probes, &mut rng, &mut diffs)?;
        for (c, d) in counts.iter_mut().zip(&diffs) {
            if d.abs() > threshold {
                *c += 1;
            }
        }
    }
    let worst = counts.iter().cloned().max().unwrap_or(0);
    let mean = worst as f64 / n as f64;
    Ok(McEstimate {
        mean,
        std_error: binomial_se(mean, n),
        n_samples: n,
        seed,
    })
}

/// Classification mode for the sub-Gaussian tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    Binary,
    Multiclass,
}

/// Source of zero-mean score/margin difference samples for
/// [`verify_subgaussian_av`].
#[derive(Debug, Clone)]
pub enum DiffSampler {
    /// Standard normal differences (1-sub-Gaussian).
    StdNormal,
    /// ±`scale` differences (`scale^2`-sub-Gaussian by Hoeffding).
    ScaledRademacher { scale: f64 },
    /// Margin differences of a coupling at one fixed probe point.
    CouplingAt {
        spec: CouplingSpec,
        x: Array1<f64>,
        label: ProbeLabel,
    },
}

impl DiffSampler {
    fn tag(&self) -> String {
        match self {
            DiffSampler::StdNormal => "std-normal".to_string(),
            DiffSampler::ScaledRademacher { .. } => "rademacher".to_string(),
            DiffSampler::CouplingAt { spec, .. } => spec.tag().to_string(),
        }
    }

    fn sample(&self, rng: &mut CounterRng, scratch: &mut Vec<f64>) -> Result<f64> {
        match self {
            DiffSampler::StdNormal => Ok(rng.next_normal()),
            DiffSampler::ScaledRademacher { scale } => Ok(scale * rng.next_sign_with_mean(0.0)),
            DiffSampler::CouplingAt { spec, x, label } => {
                let probes = ProbeSet {
                    points: vec![(x.clone(), *label)],
                };
                spec.sample_margin_diffs(&probes, rng, scratch)?;
                Ok(scratch[0])
            }
        }
    }
}

/// Checks the sub-Gaussian approximate-variation bound on a grid of
/// margins: the empirical two-sided exceedance at `gamma/2` must not beat
/// `exp(-gamma^2 / 8 sigma^2)` (binary) or `exp(-gamma^2 / 16 sigma^2)`
/// (multiclass) by more than three standard errors.
pub fn verify_subgaussian_av(
    sigma_sq: f64,
    sampler: &DiffSampler,
    gamma_grid: &[f64],
    mode: TailMode,
    n: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if !(sigma_sq > 0.0) {
        return Err(Error::domain(format!("sigma^2 = {sigma_sq} must be > 0")));
    }
    if n < 10_000 {
        return Err(Error::domain(format!("n = {n} must be >= 10000")));
    }
    if gamma_grid.is_empty() {
        return Err(Error::domain("empty gamma grid".to_string()));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "subgaussian-av");
    let mut scratch = Vec::new();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(sampler.sample(&mut rng, &mut scratch)?);
    }
    let denom = match mode {
        TailMode::Binary => 8.0 * sigma_sq,
        TailMode::Multiclass => 16.0 * sigma_sq,
    };
    let mut report = VerifyReport::default();
    for &gamma in gamma_grid {
        let threshold = gamma / 2.0;
        let count = samples.iter().filter(|d| d.abs() > threshold).count();
        let p_hat = count as f64 / n as f64;
        let bound = (-gamma * gamma / denom).exp();
        let se = binomial_se(p_hat, n);
        report.checks.push(VerifyCheck {
            check: "subgaussian-av".to_string(),
            params: vec![
                ("sampler".to_string(), sampler.tag()),
                (
                    "mode".to_string(),
                    match mode {
                        TailMode::Binary => "binary".to_string(),
                        TailMode::Multiclass => "multiclass".to_string(),
                    },
                ),
                ("sigma_sq".to_string(), crate::csvutil::fmt_f64(sigma_sq)),
                ("gamma".to_string(), crate::csvutil::fmt_f64(gamma)),
                ("n".to_string(), n.to_string()),
            ],
            estimate: p_hat,
            bound,
            std_error: se,
            pass: p_hat <= bound + 3.0 * se,
            seed,
        });
    }
    Ok(report)
}

/// Monte-Carlo check of the aggregation identity
/// `E_{w ~ N(u, I)} sign(w . x) = erf(u . x / (sqrt(2) |x|_2))`.
pub fn verify_erf_identity(
    u: &Array1<f64>,
    x: &Array1<f64>,
    n: usize,
    seed: u64,
) -> Result<VerifyCheck> {
    if u.len() != x.len() {
        return Err(Error::domain("dimension mismatch".to_string()));
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x_norm == 0.0 {
        return Err(Error::domain("zero probe vector".to_string()));
    }
    if n < 10_000 {
        return Err(Error::domain(format!("n = {n} must be >= 10000")));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "erf-identity");
    let mut sum = 0.0;
    for _ in 0..n {
        let mut dot = 0.0;
        for j in 0..u.len() {
            dot += (u[j] + rng.next_normal()) * x[j];
        }
        sum += if dot >= 0.0 { 1.0 } else { -1.0 };
    }
    let mean = sum / n as f64;
    let closed = erf(u.dot(x) / (std::f64::consts::SQRT_2 * x_norm));
    // sign^2 = 1, so Var = 1 - mean^2. A saturated sample (mean = ±1) has
    // zero empirical variance, so the null-hypothesis standard error from
    // the closed form keeps the test well-defined near the tails.
    let se_emp = ((1.0 - mean * mean).max(0.0) / n as f64).sqrt();
    let se_null = ((1.0 - closed * closed).max(0.0) / n as f64).sqrt();
    let se = se_emp.max(se_null);
    let pass = (mean - closed).abs() <= 3.0 * se + 1e-9;
    Ok(VerifyCheck {
        check: "erf-identity".to_string(),
        params: vec![
            ("d".to_string(), u.len().to_string()),
            ("n".to_string(), n.to_string()),
        ],
        estimate: mean,
        bound: closed,
        std_error: se,
        pass,
        seed,
    })
}

fn check_mixture(weights: &[f64], means: &Array2<f64>) -> Result<()> {
    if weights.len() != means.nrows() {
        return Err(Error::domain(format!(
            "{} weights for {} component means",
            weights.len(),
            means.nrows()
        )));
    }
    crate::numcore::categorical_entropy(weights).map(|_| ())
}

/// Closed-form upper bound on the KL between two identity-covariance
/// Gaussian mixtures with index-paired components:
/// `KL(p ‖ p0) + (1/2) sum_k p_k |u_k - u0_k|^2`.
pub fn mixture_kl_bound(
    p: &[f64],
    means: &Array2<f64>,
    p0: &[f64],
    means0: &Array2<f64>,
) -> Result<f64> {
    check_mixture(p, means)?;
    check_mixture(p0, means0)?;
    if means.dim() != means0.dim() {
        return Err(Error::domain("mixture shapes differ".to_string()));
    }
    let mut kl_weights = 0.0;
    for (pk, p0k) in p.iter().zip(p0) {
        if *pk > 0.0 {
            if *p0k == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl_weights += pk * (pk / p0k).ln();
        }
    }
    let mut shift = 0.0;
    for k in 0..p.len() {
        let diff = &means.row(k) - &means0.row(k);
        shift += p[k] * diff.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(kl_weights + 0.5 * shift)
}

fn log_mixture_density(x: &Array1<f64>, weights: &[f64], means: &Array2<f64>) -> f64 {
    // Up to the common (d/2) log(2 pi) constant, which cancels in ratios.
    let mut best = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(weights.len());
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let diff = x - &means.row(k);
        let t = w.ln() - 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
        if t > best {
            best = t;
        }
        terms.push(t);
    }
    if terms.is_empty() {
        return f64::NEG_INFINITY;
    }
    best + terms.iter().map(|t| (t - best).exp()).sum::<f64>().ln()
}

/// Monte-Carlo estimate of `KL(mixture(p, means) ‖ mixture(p0, means0))`
/// (identity covariances) via samples from the first mixture and exact
/// log-density evaluation.
pub fn estimate_mixture_kl(
    p: &[f64],
    means: &Array2<f64>,
    p0: &[f64],
    means0: &Array2<f64>,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_mixture(p, means)?;
    check_mixture(p0, means0)?;
    if means.dim() != means0.dim() {
        return Err(Error::domain("mixture shapes differ".to_string()));
    }
    if n < 1000 {
        return Err(Error::domain(format!("n = {n} must be >= 1000")));
    }
    let d = means.ncols();
    let mut rng = CounterRng::from_seed_tag(seed, "mixture-kl");
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut x = Array1::<f64>::zeros(d);
    for _ in 0..n {
        let k = rng.next_categorical(p);
        for j in 0..d {
            x[j] = means[[k, j]] + rng.next_normal();
        }
        let ratio = log_mixture_density(&x, p, means) - log_mixture_density(&x, p0, means0);
        sum += ratio;
        sumsq += ratio * ratio;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n_samples: n,
        seed,
    })
}

/// Checks the deterministic ReLU perturbation inequality on sampled
/// Gaussian perturbations rescaled so every layer sits exactly at
/// `rel_scale` of the spectral precondition `|U_i|_2 <= d^{-1} |W_i|_2`.
/// Any violation at any probe point fails the check.
pub fn verify_perturbation_bound(
    model: &ReluModel,
    rel_scale: f64,
    probes: &[Array1<f64>],
    n: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if !(rel_scale > 0.0 && rel_scale <= 1.0) {
        return Err(Error::domain(format!(
            "relative scale {rel_scale} must lie in (0, 1]"
        )));
    }
    if probes.is_empty() {
        return Err(Error::domain("no probe points".to_string()));
    }
    let r = model.input_bound();
    for (i, x) in probes.iter().enumerate() {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > r * (1.0 + 1e-9) {
            return Err(Error::domain(format!(
                "probe {i} has norm {norm} above the input bound {r}"
            )));
        }
    }
    let d = model.depth();
    let spectral = model.spectral_norms()?;
    let prod: f64 = spectral.iter().product();
    let mut rng = CounterRng::from_seed_tag(seed, "perturbation-bound");
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for _ in 0..n {
        let mut perturbed = Vec::with_capacity(d);
        let mut ratio_sum = 0.0;
        for (w, s) in model.layers().iter().zip(&spectral) {
            let g = Array2::from_shape_fn(w.dim(), |_| rng.next_normal());
            let g_norm = spectral_norm(g.view())?;
            let target = rel_scale * s / d as f64;
            let u = if g_norm > 0.0 && target > 0.0 {
                g.mapv(|v| v * (target / g_norm))
            } else {
                Array2::zeros(w.dim())
            };
            let u_norm = spectral_norm(u.view())?;
            if *s > 0.0 {
                ratio_sum += u_norm / s;
            }
            perturbed.push(w + &u);
        }
        let rhs = std::f64::consts::E * r * prod * ratio_sum;
        for x in probes {
            let f = relu_forward_with(&perturbed, x.view());
            let g = relu_forward_with(model.layers(), x.view());
            let diff = (&f - &g).iter().map(|v| v * v).sum::<f64>().sqrt();
            if rhs > 0.0 {
                worst_ratio = worst_ratio.max(diff / rhs);
            }
            if diff > rhs * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    let total = n * probes.len();
    let check = VerifyCheck {
        check: "relu-perturbation".to_string(),
        params: vec![
            ("d".to_string(), d.to_string()),
            ("h".to_string(), model.max_units().to_string()),
            ("rel_scale".to_string(), crate::csvutil::fmt_f64(rel_scale)),
            ("n".to_string(), n.to_string()),
            ("probes".to_string(), probes.len().to_string()),
            ("violations".to_string(), violations.to_string()),
            ("trials".to_string(), total.to_string()),
        ],
        estimate: worst_ratio,
        bound: 1.0,
        std_error: 0.0,
        pass: violations == 0,
        seed,
    };
    Ok(VerifyReport {
        checks: vec![check],
    })
}

/// Checks the Gaussian-matrix spectral tail `Pr{|U|_2 > t} <= 2h e^{-t^2 / 2h sigma^2}`
/// on a grid of thresholds.
pub fn verify_tropp_tail(
    h: usize,
    sigma: f64,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if h == 0 {
        return Err(Error::domain("h must be >= 1".to_string()));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma = {sigma} must be > 0")));
    }
    if t_grid.is_empty() {
        return Err(Error::domain("empty threshold grid".to_string()));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "tropp-tail");
    let mut norms = Vec::with_capacity(n);
    for _ in 0..n {
        let g = Array2::from_shape_fn((h, h), |_| sigma * rng.next_normal());
        norms.push(spectral_norm(g.view())?);
    }
    let hf = h as f64;
    let mut report = VerifyReport::default();
    for &t in t_grid {
        let count = norms.iter().filter(|&&v| v > t).count();
        let p_hat = count as f64 / n as f64;
        let bound = 2.0 * hf * (-t * t / (2.0 * hf * sigma * sigma)).exp();
        let se = binomial_se(p_hat, n);
        report.checks.push(VerifyCheck {
            check: "tropp-tail".to_string(),
            params: vec![
                ("h".to_string(), h.to_string()),
                ("sigma".to_string(), crate::csvutil::fmt_f64(sigma)),
                ("t".to_string(), crate::csvutil::fmt_f64(t)),
                ("n".to_string(), n.to_string()),
            ],
            estimate: p_hat,
            bound,
            std_error: se,
            pass: p_hat <= bound + 3.0 * se,
            seed,
        });
    }
    Ok(report)
}

/// Per-draw margin profiles of the noisy network on a dataset; the basis
/// for the stochastic margin loss and the stochastic margin search.
pub fn stochastic_margin_profiles(
    model: &PartialShelModel,
    data: &LabeledDataset,
    weight_samples: usize,
    seed: u64,
) -> Result<Vec<MarginProfile>> {
    if weight_samples == 0 {
        return Err(Error::domain("weight_samples must be >= 1".to_string()));
    }
    if model.sigma().is_none() {
        return Err(Error::Uncalibrated(
            "sigma must be calibrated before stochastic evaluation".to_string(),
        ));
    }
    let root = CounterRng::from_seed_tag(seed, "stochastic-margin");
    let mut profiles = Vec::with_capacity(weight_samples);
    for s in 0..weight_samples {
        let mut rng = root.substream(s as u64);
        let noise = model.sample_noise(&mut rng);
        let mut margins = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let scores = model.forward_noisy(data.sample(i), &noise)?;
            margins.push(crate::models::sample_margin(&scores, &data.labels, i)?);
        }
        profiles.push(MarginProfile::new(margins)?);
    }
    Ok(profiles)
}

/// Mean (over weight draws) empirical margin loss of the noisy network,
/// with the standard error across draws.
pub fn stochastic_margin_loss(
    model: &PartialShelModel,
    data: &LabeledDataset,
    gamma: f64,
    weight_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let profiles = stochastic_margin_profiles(model, data, weight_samples, seed)?;
    let losses: Vec<f64> = profiles.iter().map(|p| p.empirical_loss(gamma)).collect();
    let nf = losses.len() as f64;
    // Pairwise: the mean of identical per-draw losses (sigma = 0) stays
    // exactly equal to the deterministic loss for power-of-two counts.
    let mean = crate::numcore::pairwise_sum(&losses) / nf;
    let devs: Vec<f64> = losses.iter().map(|l| (l - mean) * (l - mean)).collect();
    let var = crate::numcore::pairwise_sum(&devs) / nf;
    let std_error = if losses.len() > 1 {
        (var / nf).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error,
        n_samples: weight_samples,
        seed,
    })
}

/// Empirical margin-substitution check over an explicit coupling: the
/// zero-margin loss of the `P` side must not exceed the `gamma/2` loss of
/// the `Q` side plus the coupling exceedance, within three combined
/// standard errors.
pub fn substitution_check(
    coupling: &CouplingSpec,
    probes: &ProbeSet,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<VerifyCheck> {
    coupling.validate()?;
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("gamma = {gamma} must be > 0")));
    }
    if n < 1000 {
        return Err(Error::domain(format!("n = {n} must be >= 1000")));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "substitution");
    let threshold = gamma / 2.0;
    let n_points = probes.points.len();
    let mut exceed_counts = vec![0usize; n_points];
    let mut p_loss = OnlineMean::default();
    let mut q_loss = OnlineMean::default();
    let mut diffs = Vec::with_capacity(n_points);
    let mut q_margins: Vec<f64> = Vec::with_capacity(n_points);
    for _ in 0..n {
        // Margin differences (f - g) plus the g margins reconstruct both
        // sides of the pair.
        coupling.sample_margin_diffs(probes, &mut rng, &mut diffs)?;
        q_margins.clear();
        match coupling {
            CouplingSpec::IdentityFeatureMap { w } | CouplingSpec::GaussianLinear { w } => {
                for (x, label) in &probes.points {
                    let g = Array1::from_vec(vec![w.dot(x)]);
                    q_margins.push(probe_margin(&g, *label)?);
                }
            }
            CouplingSpec::ShelProxy { model, t: _ } => {
                let scale = 1.0 / (model.v_inf() * model.width() as f64);
                for (x, label) in &probes.points {
                    let g = model.forward(x.view())?.mapv(|v| v * scale);
                    q_margins.push(probe_margin(&g, *label)?);
                }
            }
            CouplingSpec::ReluGaussianPerturbation { model, .. } => {
                for (x, label) in &probes.points {
                    let g = relu_forward_with(model.layers(), x.view());
                    q_margins.push(probe_margin(&g, *label)?);
                }
            }
        }
        let mut p_errs = 0usize;
        let mut q_errs = 0usize;
        for ((diff, qm), count) in diffs.iter().zip(&q_margins).zip(exceed_counts.iter_mut()) {
            let f_margin = qm + diff;
            if f_margin <= 0.0 {
                p_errs += 1;
            }
            if *qm <= threshold {
                q_errs += 1;
            }
            if diff.abs() > threshold {
                *count += 1;
            }
        }
        p_loss.push(p_errs as f64 / n_points as f64);
        q_loss.push(q_errs as f64 / n_points as f64);
    }
    let exceed = exceed_counts.iter().cloned().max().unwrap_or(0) as f64 / n as f64;
    let se_combined = (p_loss.se() * p_loss.se()
        + q_loss.se() * q_loss.se()
        + binomial_se(exceed, n) * binomial_se(exceed, n))
    .sqrt();
    let lhs = p_loss.mean();
    let rhs = q_loss.mean() + exceed;
    Ok(VerifyCheck {
        check: "margin-substitution".to_string(),
        params: vec![
            ("coupling".to_string(), coupling.tag().to_string()),
            ("gamma".to_string(), crate::csvutil::fmt_f64(gamma)),
            ("n".to_string(), n.to_string()),
            ("probes".to_string(), n_points.to_string()),
            ("q_loss".to_string(), crate::csvutil::fmt_f64(q_loss.mean())),
            ("exceedance".to_string(), crate::csvutil::fmt_f64(exceed)),
        ],
        estimate: lhs,
        bound: rhs,
        std_error: se_combined,
        pass: lhs <= rhs + 3.0 * se_combined,
        seed,
    })
}

#[derive(Default)]
struct OnlineMean {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl OnlineMean {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    fn se(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = (self.sumsq / self.n as f64 - mean * mean).max(0.0);
        (var / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn unit_probe() -> ProbeSet {
        ProbeSet::new(vec![(arr1(&[1.0, 0.0]), ProbeLabel::Binary(1))]).unwrap()
    }

    #[test]
    fn identity_coupling_estimates_zero() {
        let coupling = CouplingSpec::IdentityFeatureMap {
            w: arr1(&[0.5, -0.5]),
        };
        let est = estimate_uav(&coupling, &unit_probe(), 0.1, 2000, 7).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn gaussian_linear_exceedance_matches_two_sided_tail() {
        // |x| = 1, gamma = 2: exceedance = Pr{|N(0,1)| > 1} = 2(1 - Phi(1))
        let coupling = CouplingSpec::GaussianLinear {
            w: arr1(&[0.3, 0.4]),
        };
        let est = estimate_uav(&coupling, &unit_probe(), 2.0, 100_000, 11).unwrap();
        let truth = 0.3173105078629141;
        assert!(
            (est.mean - truth).abs() <= 3.0 * est.std_error + 1e-9,
            "est {} truth {truth} se {}",
            est.mean,
            est.std_error
        );
        assert!(est.mean <= (-0.5f64).exp());
    }

    #[test]
    fn estimates_are_bit_reproducible() {
        let coupling = CouplingSpec::GaussianLinear {
            w: arr1(&[0.3, 0.4]),
        };
        let a = estimate_uav(&coupling, &unit_probe(), 1.0, 5000, 3).unwrap();
        let b = estimate_uav(&coupling, &unit_probe(), 1.0, 5000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_uav_validates_inputs() {
        let coupling = CouplingSpec::GaussianLinear { w: arr1(&[1.0]) };
        assert!(estimate_uav(&coupling, &unit_probe(), 0.0, 2000, 1).is_err());
        assert!(estimate_uav(&coupling, &unit_probe(), 1.0, 10, 1).is_err());
        assert!(ProbeSet::new(vec![]).is_err());
    }

    #[test]
    fn subgaussian_check_std_normal() {
        let report = verify_subgaussian_av(
            1.0,
            &DiffSampler::StdNormal,
            &[0.5, 1.0, 2.0, 4.0],
            TailMode::Binary,
            50_000,
            5,
        )
        .unwrap();
        assert!(report.all_pass(), "{report}");
        // gamma = 4: empirical ~ 2(1-Phi(2)) = 0.0455 <= e^{-2} = 0.1353
        let last = report.checks.last().unwrap();
        assert!((last.estimate - 0.0455).abs() < 0.01);
        assert!((last.bound - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn subgaussian_check_bounded_differences() {
        let report = verify_subgaussian_av(
            1.0,
            &DiffSampler::ScaledRademacher { scale: 1.0 },
            &[2.0, 3.0],
            TailMode::Binary,
            20_000,
            5,
        )
        .unwrap();
        assert!(report.all_pass(), "{report}");
        assert_eq!(report.checks[0].estimate, 0.0);
    }

    #[test]
    fn subgaussian_bound_trivial_at_tiny_gamma() {
        let report = verify_subgaussian_av(
            1.0,
            &DiffSampler::StdNormal,
            &[1e-9],
            TailMode::Binary,
            10_000,
            5,
        )
        .unwrap();
        assert!(report.checks[0].bound > 0.999999);
        assert!(report.all_pass());
    }

    #[test]
    fn erf_identity_orthogonal_and_aligned() {
        let check = verify_erf_identity(&arr1(&[0.0, 5.0]), &arr1(&[1.0, 0.0]), 20_000, 9).unwrap();
        assert!(check.pass, "{check}");
        assert!(check.bound.abs() < 1e-15);

        let aligned =
            verify_erf_identity(&arr1(&[1.0, 0.0]), &arr1(&[1.0, 0.0]), 50_000, 9).unwrap();
        assert!(aligned.pass, "{aligned}");
        assert!((aligned.bound - 0.6826894921370859).abs() < 1e-12);
    }

    #[test]
    fn erf_identity_saturated_tail() {
        let check =
            verify_erf_identity(&arr1(&[10.0, 0.0]), &arr1(&[1.0, 0.0]), 20_000, 13).unwrap();
        assert!(check.pass, "{check}");
        assert!((check.bound - 1.0).abs() < 1e-9);
    }

    #[test]
    fn erf_identity_rejects_zero_probe() {
        assert!(verify_erf_identity(&arr1(&[1.0]), &arr1(&[0.0]), 20_000, 1).is_err());
    }

    #[test]
    fn mixture_kl_identical_mixtures() {
        let means = ndarray::arr2(&[[0.0, 0.0], [1.0, 1.0]]);
        let p = [0.5, 0.5];
        let est = estimate_mixture_kl(&p, &means, &p, &means, 20_000, 3).unwrap();
        assert!(est.mean.abs() <= 3.0 * est.std_error + 1e-12, "{est:?}");
        assert_eq!(mixture_kl_bound(&p, &means, &p, &means).unwrap(), 0.0);
    }

    #[test]
    fn mixture_kl_single_gaussian_equality() {
        // K = 1: true KL = |mu|^2 / 2 = bound
        let means = ndarray::arr2(&[[1.5, -0.5]]);
        let means0 = ndarray::arr2(&[[0.0, 0.0]]);
        let p = [1.0];
        let bound = mixture_kl_bound(&p, &means, &p, &means0).unwrap();
        assert!((bound - (1.5f64 * 1.5 + 0.25) / 2.0).abs() < 1e-12);
        let est = estimate_mixture_kl(&p, &means, &p, &means0, 100_000, 21).unwrap();
        assert!(
            (est.mean - bound).abs() <= 3.0 * est.std_error,
            "est {} bound {bound} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn mixture_kl_estimate_below_bound() {
        let means = ndarray::arr2(&[[0.5, 0.0], [-0.5, 1.0], [0.0, -1.0]]);
        let means0 = ndarray::arr2(&[[0.0, 0.0], [0.0, 0.5], [0.5, -0.5]]);
        let p = [0.3, 0.5, 0.2];
        let p0 = [0.4, 0.3, 0.3];
        let bound = mixture_kl_bound(&p, &means, &p0, &means0).unwrap();
        let est = estimate_mixture_kl(&p, &means, &p0, &means0, 50_000, 8).unwrap();
        assert!(
            est.mean <= bound + 3.0 * est.std_error,
            "est {} bound {bound}",
            est.mean
        );
    }

    #[test]
    fn mixture_kl_rejects_bad_weights() {
        let means = ndarray::arr2(&[[0.0], [1.0]]);
        assert!(estimate_mixture_kl(&[0.5, 0.6], &means, &[0.5, 0.5], &means, 2000, 1).is_err());
        assert!(estimate_mixture_kl(&[-0.5, 1.5], &means, &[0.5, 0.5], &means, 2000, 1).is_err());
    }

    #[test]
    fn perturbation_zero_scale_rejected_and_single_layer_passes() {
        let model = ReluModel::init_random(&[3, 4, 2], 1.5, 4).unwrap();
        assert!(verify_perturbation_bound(&model, 1.5, &[arr1(&[1.0, 0.0, 0.0])], 5, 1).is_err());

        let single = ReluModel::init_random(&[3, 2], 1.0, 4).unwrap();
        let probes = vec![arr1(&[0.5, 0.5, 0.0]), arr1(&[0.0, -0.7, 0.1])];
        let report = verify_perturbation_bound(&single, 1.0, &probes, 20, 2).unwrap();
        assert!(report.all_pass(), "{report}");
    }

    #[test]
    fn perturbation_bound_holds_at_boundary() {
        let model = ReluModel::init_random(&[4, 6, 6, 3], 1.0, 6).unwrap();
        let mut rng = CounterRng::from_seed_tag(3, "probes");
        let probes: Vec<Array1<f64>> = (0..8)
            .map(|_| {
                let mut x = Array1::from_shape_fn(4, |_| rng.next_normal());
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.mapv_inplace(|v| v / n.max(1e-12));
                x
            })
            .collect();
        let report = verify_perturbation_bound(&model, 1.0, &probes, 25, 5).unwrap();
        assert!(report.all_pass(), "{report}");
    }

    #[test]
    fn tropp_tail_scalar_case() {
        // h = 1 reduces to |N(0, sigma^2)| tails.
        let report = verify_tropp_tail(1, 1.0, &[0.0, 1.0, 2.0], 20_000, 12).unwrap();
        assert!(report.all_pass(), "{report}");
        assert!(report.checks[0].bound >= 1.0);
        let at2 = &report.checks[2];
        assert!((at2.estimate - 0.0455).abs() < 0.01);
    }

    #[test]
    fn stochastic_margin_loss_zero_sigma_is_deterministic() {
        let mut model = PartialShelModel::init_random(4, 5, 4, 3, 17).unwrap();
        model.set_sigma(0.0).unwrap();
        let data = crate::dataset::synth_blobs(3, 20, 4, 2.0, 9).unwrap();
        let est = stochastic_margin_loss(&model, &data, 0.1, 8, 3).unwrap();
        let deterministic = crate::models::margin_profile(&model, &data)
            .unwrap()
            .empirical_loss(0.1);
        assert_eq!(est.mean, deterministic);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn stochastic_margin_loss_requires_calibration() {
        let model = PartialShelModel::init_random(4, 5, 4, 3, 17).unwrap();
        let data = crate::dataset::synth_blobs(3, 10, 4, 2.0, 9).unwrap();
        assert!(matches!(
            stochastic_margin_loss(&model, &data, 0.1, 4, 3),
            Err(Error::Uncalibrated(_))
        ));
    }

    #[test]
    fn huge_sigma_drives_loss_to_chance() {
        let mut model = PartialShelModel::init_random(4, 5, 4, 2, 17).unwrap();
        model.set_sigma(1e4).unwrap();
        let data = crate::dataset::synth_blobs(2, 200, 4, 6.0, 9).unwrap();
        let est = stochastic_margin_loss(&model, &data, 0.0, 32, 3).unwrap();
        assert!(
            (est.mean - 0.5).abs() < 0.15,
            "expected ~chance level, got {}",
            est.mean
        );
    }

    #[test]
    fn substitution_check_gaussian_linear() {
        let coupling = CouplingSpec::GaussianLinear {
            w: arr1(&[2.0, 1.0]),
        };
        let probes = ProbeSet::new(vec![
            (arr1(&[1.0, 0.0]), ProbeLabel::Binary(1)),
            (arr1(&[0.0, 1.0]), ProbeLabel::Binary(1)),
            (arr1(&[-0.6, 0.8]), ProbeLabel::Binary(-1)),
        ])
        .unwrap();
        let check = substitution_check(&coupling, &probes, 1.0, 20_000, 4).unwrap();
        assert!(check.pass, "{check}");
    }
}
