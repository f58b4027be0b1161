//! Built-in scenarios for the `verify` subcommand. Every scenario is a
//! pure function of the suite name, seed and sample count, so repeated
//! invocations emit byte-identical reports.

use anyhow::{bail, Result};
use ndarray::{arr1, Array1, Array2};

use pacmargin_core::models::{ReluModel, ShelModel};
use pacmargin_core::montecarlo::{
    estimate_mixture_kl, estimate_uav, mixture_kl_bound, substitution_check, verify_erf_identity,
    verify_perturbation_bound, verify_subgaussian_av, verify_tropp_tail, CouplingSpec,
    DiffSampler, ProbeLabel, ProbeSet, TailMode, VerifyCheck, VerifyReport,
};
use pacmargin_core::rng::CounterRng;

pub fn run_suite(suite: &str, seed: u64, n: Option<usize>) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    match suite {
        "erf" => report.merge(erf_suite(seed, n.unwrap_or(20_000))?),
        "subgaussian" => report.merge(subgaussian_suite(seed, n.unwrap_or(20_000))?),
        "mixture-kl" => report.merge(mixture_suite(seed, n.unwrap_or(20_000))?),
        "perturbation" => report.merge(perturbation_suite(seed, n.unwrap_or(50))?),
        "tropp" => report.merge(tropp_suite(seed, n.unwrap_or(5_000))?),
        "uav" => report.merge(uav_suite(seed, n.unwrap_or(20_000))?),
        "substitution" => report.merge(substitution_suite(seed, n.unwrap_or(10_000))?),
        "all" => {
            report.merge(erf_suite(seed, n.unwrap_or(20_000))?);
            report.merge(subgaussian_suite(seed, n.unwrap_or(20_000))?);
            report.merge(mixture_suite(seed, n.unwrap_or(20_000))?);
            report.merge(perturbation_suite(seed, n.unwrap_or(50))?);
            report.merge(tropp_suite(seed, n.unwrap_or(5_000))?);
            report.merge(uav_suite(seed, n.unwrap_or(20_000))?);
            report.merge(substitution_suite(seed, n.unwrap_or(10_000))?);
        }
        other => bail!("unknown suite {other:?}"),
    }
    Ok(report)
}

fn random_unit(rng: &mut CounterRng, d: usize) -> Array1<f64> {
    let mut x = Array1::from_shape_fn(d, |_| rng.next_normal());
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.mapv_inplace(|v| v / norm.max(1e-12));
    x
}

fn erf_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = CounterRng::from_seed_tag(seed, "cli-erf-suite");
    for &d in &[2usize, 10, 50] {
        for pair in 0..8u64 {
            let u = Array1::from_shape_fn(d, |_| 2.0 * rng.next_normal());
            let x = random_unit(&mut rng, d);
            report
                .checks
                .push(verify_erf_identity(&u, &x, n, seed ^ (d as u64) << 8 ^ pair)?);
        }
    }
    Ok(report)
}

fn subgaussian_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let grid = [0.5, 1.0, 2.0, 4.0];
    report.merge(verify_subgaussian_av(
        1.0,
        &DiffSampler::StdNormal,
        &grid,
        TailMode::Binary,
        n,
        seed,
    )?);
    report.merge(verify_subgaussian_av(
        1.0,
        &DiffSampler::ScaledRademacher { scale: 1.0 },
        &[2.0, 3.0],
        TailMode::Binary,
        n,
        seed.wrapping_add(1),
    )?);
    let w = arr1(&[0.6, -0.2, 0.3, 0.1]);
    let x = arr1(&[1.0, 0.0, 0.0, 0.0]);
    report.merge(verify_subgaussian_av(
        1.0,
        &DiffSampler::CouplingAt {
            spec: CouplingSpec::GaussianLinear { w },
            x: x.clone(),
            label: ProbeLabel::Binary(1),
        },
        &grid,
        TailMode::Binary,
        n,
        seed.wrapping_add(2),
    )?);
    let t = 100usize;
    let scaled: Vec<f64> = grid.iter().map(|g| g / (t as f64).sqrt()).collect();
    let binary_model = ShelModel::init_random(4, 4, 1, seed.wrapping_add(100))?;
    report.merge(verify_subgaussian_av(
        1.0 / t as f64,
        &DiffSampler::CouplingAt {
            spec: CouplingSpec::ShelProxy {
                model: binary_model,
                t,
            },
            x: x.clone(),
            label: ProbeLabel::Binary(1),
        },
        &scaled,
        TailMode::Binary,
        n,
        seed.wrapping_add(3),
    )?);
    let multi_model = ShelModel::init_random(4, 4, 3, seed.wrapping_add(101))?;
    report.merge(verify_subgaussian_av(
        1.0 / t as f64,
        &DiffSampler::CouplingAt {
            spec: CouplingSpec::ShelProxy {
                model: multi_model,
                t,
            },
            x,
            label: ProbeLabel::Class(0),
        },
        &scaled,
        TailMode::Multiclass,
        n,
        seed.wrapping_add(4),
    )?);
    Ok(report)
}

fn mixture_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = CounterRng::from_seed_tag(seed, "cli-mixture-suite");
    for inst in 0..20u64 {
        let k = 2 + rng.next_index(4);
        let d = 1 + rng.next_index(5);
        let normalise = |v: &mut Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
        };
        let mut p: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.05).collect();
        let mut p0: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.05).collect();
        normalise(&mut p);
        normalise(&mut p0);
        let means = Array2::from_shape_fn((k, d), |_| rng.next_normal());
        let means0 = Array2::from_shape_fn((k, d), |_| rng.next_normal());
        let bound = mixture_kl_bound(&p, &means, &p0, &means0)?;
        let est = estimate_mixture_kl(&p, &means, &p0, &means0, n, seed ^ (inst << 16))?;
        report.checks.push(VerifyCheck {
            check: "mixture-kl".to_string(),
            params: vec![
                ("k".to_string(), k.to_string()),
                ("d".to_string(), d.to_string()),
                ("n".to_string(), n.to_string()),
            ],
            estimate: est.mean,
            bound,
            std_error: est.std_error,
            pass: est.mean <= bound + 3.0 * est.std_error,
            seed: est.seed,
        });
    }
    // K = 1 equality case: estimate must match |mu|^2 / 2 both ways.
    let means = Array2::from_shape_fn((1, 3), |_| rng.next_normal());
    let means0 = Array2::zeros((1, 3));
    let bound = mixture_kl_bound(&[1.0], &means, &[1.0], &means0)?;
    let est = estimate_mixture_kl(&[1.0], &means, &[1.0], &means0, n, seed ^ 0xE9)?;
    report.checks.push(VerifyCheck {
        check: "mixture-kl-equality".to_string(),
        params: vec![("k".to_string(), "1".to_string()), ("n".to_string(), n.to_string())],
        estimate: est.mean,
        bound,
        std_error: est.std_error,
        pass: (est.mean - bound).abs() <= 3.0 * est.std_error,
        seed: est.seed,
    });
    Ok(report)
}

fn perturbation_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = CounterRng::from_seed_tag(seed, "cli-perturbation-suite");
    for (idx, dims) in [vec![4, 8, 3], vec![4, 8, 8, 3]].iter().enumerate() {
        let model = ReluModel::init_random(dims, 1.0, seed.wrapping_add(idx as u64))?;
        let probes: Vec<Array1<f64>> = (0..16).map(|_| random_unit(&mut rng, dims[0])).collect();
        report.merge(verify_perturbation_bound(
            &model,
            1.0,
            &probes,
            n,
            seed.wrapping_add(10 + idx as u64),
        )?);
    }
    Ok(report)
}

fn tropp_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for &h in &[1usize, 4, 16] {
        let root = (h as f64).sqrt();
        let grid = [root, 2.0 * root, 4.0 * root];
        report.merge(verify_tropp_tail(h, 1.0, &grid, n, seed.wrapping_add(h as u64))?);
    }
    Ok(report)
}

fn uav_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = CounterRng::from_seed_tag(seed, "cli-uav-suite");

    // Identity coupling: exactly zero.
    let w = arr1(&[0.5, -0.5, 0.2]);
    let probes = ProbeSet::new(vec![
        (arr1(&[1.0, 0.0, 0.0]), ProbeLabel::Binary(1)),
        (arr1(&[0.0, 1.0, 0.0]), ProbeLabel::Binary(-1)),
    ])?;
    let est = estimate_uav(
        &CouplingSpec::IdentityFeatureMap { w: w.clone() },
        &probes,
        1.0,
        n.max(1000),
        seed,
    )?;
    report.checks.push(VerifyCheck {
        check: "uav".to_string(),
        params: vec![
            ("coupling".to_string(), "identity-feature-map".to_string()),
            ("gamma".to_string(), "1".to_string()),
            ("n".to_string(), n.to_string()),
        ],
        estimate: est.mean,
        bound: 0.0,
        std_error: est.std_error,
        pass: est.mean == 0.0,
        seed: est.seed,
    });

    // Gaussian-linear on unit probes: sub-Gaussian bound e^{-gamma^2/8}.
    for &gamma in &[1.0f64, 2.0, 4.0] {
        let est = estimate_uav(
            &CouplingSpec::GaussianLinear { w: w.clone() },
            &probes,
            gamma,
            n.max(1000),
            seed.wrapping_add(1),
        )?;
        let bound = (-gamma * gamma / 8.0).exp();
        report.checks.push(VerifyCheck {
            check: "uav".to_string(),
            params: vec![
                ("coupling".to_string(), "gaussian-linear".to_string()),
                ("gamma".to_string(), pacmargin_core::csvutil::fmt_f64(gamma)),
                ("n".to_string(), n.to_string()),
            ],
            estimate: est.mean,
            bound,
            std_error: est.std_error,
            pass: est.mean <= bound + 3.0 * est.std_error,
            seed: est.seed,
        });
    }

    // SHEL proxy: (1/T)-sub-Gaussian margins, multiclass constant.
    let t = 100usize;
    let model = ShelModel::init_random(4, 3, 3, seed.wrapping_add(7))?;
    let shel_probes = ProbeSet::new(
        (0..4)
            .map(|i| (random_unit(&mut rng, 3), ProbeLabel::Class(i % 3)))
            .collect(),
    )?;
    for &gamma in &[0.5f64, 1.0] {
        let gamma_t = gamma / (t as f64).sqrt();
        let est = estimate_uav(
            &CouplingSpec::ShelProxy {
                model: model.clone(),
                t,
            },
            &shel_probes,
            gamma_t,
            n.max(1000),
            seed.wrapping_add(2),
        )?;
        let bound = (-gamma_t * gamma_t * t as f64 / 16.0).exp();
        report.checks.push(VerifyCheck {
            check: "uav".to_string(),
            params: vec![
                ("coupling".to_string(), "shel-proxy".to_string()),
                ("t".to_string(), t.to_string()),
                ("gamma".to_string(), pacmargin_core::csvutil::fmt_f64(gamma_t)),
                ("n".to_string(), n.to_string()),
            ],
            estimate: est.mean,
            bound,
            std_error: est.std_error,
            pass: est.mean <= bound + 3.0 * est.std_error,
            seed: est.seed,
        });
    }
    Ok(report)
}

fn substitution_suite(seed: u64, n: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = CounterRng::from_seed_tag(seed, "cli-substitution-suite");
    let lin_probes = ProbeSet::new(
        (0..6)
            .map(|i| {
                (
                    random_unit(&mut rng, 4),
                    ProbeLabel::Binary(if i % 2 == 0 { 1 } else { -1 }),
                )
            })
            .collect(),
    )?;
    report.checks.push(substitution_check(
        &CouplingSpec::IdentityFeatureMap {
            w: arr1(&[0.5, 0.1, -0.3, 0.2]),
        },
        &lin_probes,
        0.8,
        n,
        seed,
    )?);
    report.checks.push(substitution_check(
        &CouplingSpec::GaussianLinear {
            w: arr1(&[1.5, 0.1, -0.3, 0.2]),
        },
        &lin_probes,
        0.8,
        n,
        seed.wrapping_add(1),
    )?);
    let multi_probes = ProbeSet::new(
        (0..6)
            .map(|i| (random_unit(&mut rng, 4), ProbeLabel::Class(i % 3)))
            .collect(),
    )?;
    report.checks.push(substitution_check(
        &CouplingSpec::ShelProxy {
            model: ShelModel::init_random(4, 4, 3, seed.wrapping_add(5))?,
            t: 32,
        },
        &multi_probes,
        0.2,
        n,
        seed.wrapping_add(2),
    )?);
    let relu_model = ReluModel::init_random(&[4, 5, 3], 1.0, seed.wrapping_add(6))?;
    let sigmas = vec![0.01; relu_model.depth()];
    report.checks.push(substitution_check(
        &CouplingSpec::ReluGaussianPerturbation {
            model: relu_model,
            sigmas,
        },
        &multi_probes,
        0.5,
        n,
        seed.wrapping_add(3),
    )?);
    Ok(report)
}
