//! Scalar and matrix numerics shared by all certificates: the one-sided
//! Bernoulli relative entropy and its inversion, the Catoni convenience
//! function and its inverse, `erf`, entropy of ±1 variables, categorical
//! entropy, and the matrix norms the bound formulas consume.
//!
//! Everything here is a pure function; no global state.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Sums a slice by recursive halving. Splitting at the midpoint keeps
/// sums of block-duplicated data exact (`sum([x | x]) == 2 * sum(x)`),
/// which the width-doubling identities of the erf-layer certificate
/// rely on.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(Error::domain(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// An (empirical rate, population rate) pair fed to the small-kl machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPair {
    q: f64,
    p: f64,
}

impl KlPair {
    pub fn new(q: f64, p: f64) -> Result<Self> {
        check_rate("q", q)?;
        check_rate("p", p)?;
        Ok(KlPair { q, p })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kl(&self) -> f64 {
        // Inputs were validated on construction.
        bernoulli_kl(self.q, self.p).expect("validated on construction")
    }
}

/// One-sided binary relative entropy `kl(q : p)`.
///
/// Returns the standard nonnegative form `q log(q/p) + (1-q) log((1-q)/(1-p))`
/// when `p >= q` and `0` otherwise, with the convention `0 log 0 = 0`.
/// `kl(q : 1) = +inf` for `q < 1`.
pub fn bernoulli_kl(q: f64, p: f64) -> Result<f64> {
    check_rate("q", q)?;
    check_rate("p", p)?;
    if p <= q {
        return Ok(0.0);
    }
    // p > q here, so q < 1.
    let mut kl = (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    if q > 0.0 {
        kl += q * (q / p).ln();
    }
    Ok(kl.max(0.0))
}

/// Largest population rate consistent with empirical rate `q` and a kl
/// budget: `sup { p in [q, 1] : kl(q : p) <= budget }`.
///
/// Bisection on `[q, 1]`; the interval is shrunk to f64 resolution within
/// a 200-iteration cap, which more than meets the 1e-10 contract.
pub fn kl_inverse_upper(q: f64, budget: f64) -> Result<f64> {
    check_rate("q", q)?;
    if budget < 0.0 || budget.is_nan() {
        return Err(Error::domain(format!("budget = {budget} must be >= 0")));
    }
    if q >= 1.0 || budget == 0.0 {
        return Ok(q.max(if budget.is_infinite() { 1.0 } else { q }));
    }
    if budget.is_infinite() {
        return Ok(1.0);
    }
    // kl(q : .) is 0 at q and increases to +inf at 1, so the invariant
    // kl(lo) <= budget < kl(hi) holds throughout.
    let mut lo = q;
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl(q, mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Catoni's convenience function `Phi_C(p) = -log(1 - p + p e^{-C}) / C`.
pub fn phi_c(p: f64, c: f64) -> Result<f64> {
    check_rate("p", p)?;
    if !(c > 0.0) {
        return Err(Error::domain(format!("c = {c} must be > 0")));
    }
    Ok(-(1.0 - p + p * (-c).exp()).ln() / c)
}

/// Inverse of [`phi_c`] in its first argument:
/// `Phi_C^{-1}(t) = (1 - e^{-Ct}) / (1 - e^{-C})`.
pub fn phi_c_inverse(t: f64, c: f64) -> Result<f64> {
    check_rate("t", t)?;
    if !(c > 0.0) {
        return Err(Error::domain(format!("c = {c} must be > 0")));
    }
    Ok((-(-c * t).exp_m1()) / (-(-c).exp_m1()))
}

/// Error function, accurate to better than 1e-12 absolute (in practice
/// a few ulps).
///
/// For `|x| < 4` uses the non-alternating expansion
/// `erf(x) = 2/sqrt(pi) * x * exp(-x^2) * sum_n (2x^2)^n / (2n+1)!!`,
/// whose terms are all positive, so no cancellation occurs; beyond that,
/// `1 - erfc(x)` with the continued-fraction tail. For `|x| >= 6` the
/// result is ±1 to within f64 resolution.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return x; // preserves signed zero; erf is odd
    }
    let ax = x.abs();
    if ax >= 6.0 {
        return 1.0_f64.copysign(x);
    }
    if ax >= 4.0 {
        return (1.0 - erfc_tail(ax)).copysign(x);
    }
    let x2 = ax * ax;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * f64::from(n) + 1.0);
        let next = sum + term;
        if next == sum || n > 600 {
            break;
        }
        sum = next;
    }
    let r = std::f64::consts::FRAC_2_SQRT_PI * ax * (-x2).exp() * sum;
    r.min(1.0).copysign(x)
}

/// Complementary error function with good relative accuracy in the
/// tail: `1 - erf(x)` below the crossover, the classical continued
/// fraction beyond it.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 3.0 {
        1.0 - erf(x)
    } else {
        erfc_tail(x)
    }
}

/// Continued fraction for erfc, evaluated by modified Lentz:
/// `G = x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + ...))))` and
/// `erfc(x) = exp(-x^2) / (sqrt(pi) G)`. Accurate for `x >= 3`.
fn erfc_tail(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..200 {
        let a = 0.5 * n as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// KL divergence of a ±1 variable with mean `x` from the uniform prior:
/// `h(x) = [(1+x) log(1+x) + (1-x) log(1-x)] / 2`, with `0 log 0 = 0`.
///
/// Satisfies `h(x) <= x^2 log 2` with equality approached at |x| = 1.
pub fn entropy_pm1(x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) || x.is_nan() {
        return Err(Error::domain(format!("x = {x} must lie in [-1, 1]")));
    }
    let up = 1.0 + x;
    let dn = 1.0 - x;
    let a = if up > 0.0 { up * up.ln() } else { 0.0 };
    let b = if dn > 0.0 { dn * dn.ln() } else { 0.0 };
    Ok(((a + b) / 2.0).max(0.0))
}

/// Shannon entropy of a probability vector (natural log).
pub fn categorical_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::domain("probability vector is empty".to_string()));
    }
    let mut sum = 0.0;
    for (i, &v) in p.iter().enumerate() {
        if v < 0.0 || v.is_nan() {
            return Err(Error::domain(format!("component {i} = {v} is negative")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("components sum to {sum}, not 1")));
    }
    let h: f64 = p
        .iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum();
    Ok(h.max(0.0))
}

const SPECTRAL_START_SEED: u64 = 0x7370_6563_7472_616c; // "spectral"
const SPECTRAL_TOL: f64 = 1e-10;
const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Largest singular value by power iteration on `W^T W`.
///
/// The start vector comes from a fixed-seed generator so results are
/// reproducible; on a stagnant start (vector in the null space) the
/// iteration restarts from a perturbed vector.
pub fn spectral_norm(w: ArrayView2<'_, f64>) -> Result<f64> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::domain("spectral norm of an empty matrix".to_string()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries".to_string()));
    }

    let mut rng = crate::rng::CounterRng::from_seed_tag(SPECTRAL_START_SEED, "power-iteration");
    let mut v: Vec<f64> = (0..cols).map(|_| rng.next_f64() - 0.5).collect();
    normalize(&mut v);

    let mut lambda = 0.0;
    let mut restarts = 0usize;
    let mut iters = 0usize;
    while iters < SPECTRAL_MAX_ITERS {
        iters += 1;
        // u = W v, s = W^T u
        let mut u = vec![0.0; rows];
        for i in 0..rows {
            let row = w.row(i);
            let mut acc = 0.0;
            for j in 0..cols {
                acc += row[j] * v[j];
            }
            u[i] = acc;
        }
        let mut s = vec![0.0; cols];
        for i in 0..rows {
            let row = w.row(i);
            let ui = u[i];
            for j in 0..cols {
                s[j] += row[j] * ui;
            }
        }
        let new_lambda = u.iter().map(|x| x * x).sum::<f64>();
        let s_norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s_norm == 0.0 {
            // Start vector hit the null space; restart perturbed.
            if restarts >= 4 {
                return Ok(0.0);
            }
            restarts += 1;
            for vi in v.iter_mut() {
                *vi += rng.next_f64() - 0.5;
            }
            normalize(&mut v);
            lambda = 0.0;
            continue;
        }
        for j in 0..cols {
            v[j] = s[j] / s_norm;
        }
        if (new_lambda - lambda).abs() <= SPECTRAL_TOL * new_lambda.max(f64::MIN_POSITIVE) {
            return Ok(new_lambda.sqrt());
        }
        lambda = new_lambda;
    }
    Ok(lambda.sqrt())
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// Squared Frobenius norm, accumulated per row and then pairwise across
/// rows so that duplicating rows or duplicating every row's entries
/// doubles the value exactly.
pub fn frobenius_sq(w: ArrayView2<'_, f64>) -> f64 {
    let row_sums: Vec<f64> = w
        .rows()
        .into_iter()
        .map(|r| {
            let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
            pairwise_sum(&sq)
        })
        .collect();
    pairwise_sum(&row_sums)
}

/// The norm bundle consumed by the bound formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    /// Operator 2-norm (largest singular value).
    pub spectral: f64,
    /// Frobenius norm.
    pub frobenius: f64,
    /// Entrywise L1 norm.
    pub l1: f64,
    /// Largest absolute entry.
    pub linf: f64,
}

pub fn matrix_norms(w: ArrayView2<'_, f64>) -> Result<MatrixNorms> {
    let spectral = spectral_norm(w)?;
    let frobenius = frobenius_sq(w).sqrt();
    let abs: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    let l1 = pairwise_sum(&abs);
    let linf = abs.iter().cloned().fold(0.0, f64::max);
    Ok(MatrixNorms {
        spectral,
        frobenius,
        l1,
        linf,
    })
}
