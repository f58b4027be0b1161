//! The experimental protocol: SGD-with-momentum training of SHEL and
//! partially-derandomised models to a fixed cross-entropy, hyperparameter
//! sweeps, sigma calibration, generalisation-vs-complexity records and
//! sign-error statistics.
//!
//! Everything is deterministic given the configured seed: data shuffling,
//! weight init and the per-grid-point substreams all come from the
//! counter generator, and sweep records are collected in grid order, not
//! completion order.

use rayon::prelude::*;

use crate::bounds::shel_complexity;
use crate::csvutil;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::margins::MarginProfile;
use crate::models::{error_rate, margin_profile, PartialShelModel, ShelModel};
use crate::montecarlo::stochastic_margin_profiles;
use crate::rng::CounterRng;

/// Which model family a training run builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Shel,
    PartialShel,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Shel => "shel",
            ModelKind::PartialShel => "partial_shel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shel" => Ok(ModelKind::Shel),
            "partial_shel" => Ok(ModelKind::PartialShel),
            other => Err(Error::domain(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Hyperparameters of one training run.
///
/// The ReLU feature layers of the partial variant share the head width.
/// `target_ce` and `max_epochs` pin the "fixed value of cross-entropy"
/// stopping rule and are recorded in every output row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub width: usize,
    pub train_size: usize,
    pub target_ce: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub target_margin_loss: f64,
}

impl TrainConfig {
    /// Defaults from the experimental protocol: batch 200, momentum 0.9,
    /// margin-loss target 0.2, cross-entropy target 0.3, 200 epoch cap.
    pub fn new(model_kind: ModelKind, width: usize, train_size: usize) -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 200,
            momentum: 0.9,
            width,
            train_size,
            target_ce: 0.3,
            max_epochs: 200,
            seed: 0,
            model_kind,
            target_margin_loss: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(Error::domain("learning rate must be >= 0".to_string()));
        }
        if self.batch_size == 0 || self.width == 0 || self.train_size == 0 {
            return Err(Error::domain(
                "batch_size, width and train_size must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.target_ce > 0.0) {
            return Err(Error::domain("target cross-entropy must be > 0".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::domain("max_epochs must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.target_margin_loss) {
            return Err(Error::domain(
                "target margin loss must lie in [0, 1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Shel(ShelModel),
    Partial(PartialShelModel),
}

impl TrainedModel {
    pub fn head(&self) -> &ShelModel {
        match self {
            TrainedModel::Shel(m) => m,
            TrainedModel::Partial(m) => &m.head,
        }
    }

    pub fn error_rate(&self, data: &LabeledDataset) -> Result<f64> {
        match self {
            TrainedModel::Shel(m) => error_rate(m, data),
            TrainedModel::Partial(m) => error_rate(m, data),
        }
    }

    pub fn margin_profile(&self, data: &LabeledDataset) -> Result<MarginProfile> {
        match self {
            TrainedModel::Shel(m) => margin_profile(m, data),
            TrainedModel::Partial(m) => margin_profile(m, data),
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub epochs_run: usize,
    pub final_ce: f64,
    /// Epoch-mean cross-entropy reached the target within the epoch cap.
    pub converged: bool,
    /// The loss became non-finite; the run is recorded, not crashed.
    pub diverged: bool,
}

struct Momentum {
    velocity: Vec<ndarray::Array2<f64>>,
}

impl Momentum {
    fn new(shapes: &[(usize, usize)]) -> Self {
        Momentum {
            velocity: shapes
                .iter()
                .map(|&(r, c)| ndarray::Array2::zeros((r, c)))
                .collect(),
        }
    }

    /// `v <- mu v - lr g; w <- w + v` for parameter slot `idx`.
    fn apply_one(
        &mut self,
        idx: usize,
        w: &mut ndarray::Array2<f64>,
        g: &ndarray::Array2<f64>,
        lr: f64,
        mu: f64,
    ) {
        let v = &mut self.velocity[idx];
        v.zip_mut_with(g, |vi, gi| *vi = mu * *vi - lr * gi);
        w.zip_mut_with(v, |wi, vi| *wi += *vi);
    }
}

/// Minibatch SGD with momentum until the epoch-mean training
/// cross-entropy reaches `target_ce` or the epoch cap. Divergence
/// (non-finite loss) is a recorded failure, not a crash.
pub fn train_to_cross_entropy(
    config: &TrainConfig,
    dataset: &LabeledDataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.len() < config.train_size {
        return Err(Error::precondition(format!(
            "dataset has {} samples, config wants {}",
            dataset.len(),
            config.train_size
        )));
    }
    let data = dataset.head(config.train_size)?;
    let classes = match &data.labels {
        crate::dataset::Labels::Binary(_) => 1,
        crate::dataset::Labels::Multiclass { classes, .. } => *classes,
    };
    let mut shuffler = CounterRng::from_seed_tag(config.seed, "epoch-shuffle");
    let mut indices: Vec<usize> = (0..data.len()).collect();

    match config.model_kind {
        ModelKind::Shel => {
            let mut model =
                ShelModel::init_random(config.width, data.dim(), classes, config.seed)?;
            let mut momentum = Momentum::new(&[model.u().dim(), model.v().dim()]);
            let mut epochs_run = 0;
            let mut final_ce = f64::INFINITY;
            let mut converged = false;
            'epochs: for epoch in 0..config.max_epochs {
                epochs_run = epoch + 1;
                shuffler.shuffle(&mut indices);
                let mut epoch_loss = 0.0;
                for batch in indices.chunks(config.batch_size) {
                    let (loss, grad) = model.loss_and_grad(&data, batch)?;
                    if !loss.is_finite() {
                        return Ok(TrainOutcome {
                            model: TrainedModel::Shel(model),
                            epochs_run,
                            final_ce: loss,
                            converged: false,
                            diverged: true,
                        });
                    }
                    epoch_loss += loss * batch.len() as f64;
                    momentum.apply_one(0, model.u_mut(), &grad.du, config.learning_rate, config.momentum);
                    momentum.apply_one(1, model.v_mut(), &grad.dv, config.learning_rate, config.momentum);
                }
                final_ce = epoch_loss / data.len() as f64;
                if final_ce <= config.target_ce {
                    converged = true;
                    break 'epochs;
                }
            }
            Ok(TrainOutcome {
                model: TrainedModel::Shel(model),
                epochs_run,
                final_ce,
                converged,
                diverged: false,
            })
        }
        ModelKind::PartialShel => {
            let mut model = PartialShelModel::init_random(
                data.dim(),
                config.width,
                config.width,
                classes,
                config.seed,
            )?;
            let mut shapes: Vec<(usize, usize)> = model
                .feature_layers
                .iter()
                .map(|l| l.w.dim())
                .collect();
            shapes.push(model.head.u().dim());
            shapes.push(model.head.v().dim());
            let mut momentum = Momentum::new(&shapes);
            let mut epochs_run = 0;
            let mut final_ce = f64::INFINITY;
            let mut converged = false;
            'epochs: for epoch in 0..config.max_epochs {
                epochs_run = epoch + 1;
                shuffler.shuffle(&mut indices);
                let mut epoch_loss = 0.0;
                for batch in indices.chunks(config.batch_size) {
                    let (loss, grad) = model.loss_and_grad(&data, batch)?;
                    if !loss.is_finite() {
                        return Ok(TrainOutcome {
                            model: TrainedModel::Partial(model),
                            epochs_run,
                            final_ce: loss,
                            converged: false,
                            diverged: true,
                        });
                    }
                    epoch_loss += loss * batch.len() as f64;
                    let (lr, mu) = (config.learning_rate, config.momentum);
                    let n_feat = model.feature_layers.len();
                    for (i, layer) in model.feature_layers.iter_mut().enumerate() {
                        momentum.apply_one(i, &mut layer.w, &grad.dlayers[i], lr, mu);
                    }
                    momentum.apply_one(n_feat, model.head.u_mut(), &grad.head.du, lr, mu);
                    momentum.apply_one(n_feat + 1, model.head.v_mut(), &grad.head.dv, lr, mu);
                }
                final_ce = epoch_loss / data.len() as f64;
                if final_ce <= config.target_ce {
                    converged = true;
                    break 'epochs;
                }
            }
            Ok(TrainOutcome {
                model: TrainedModel::Partial(model),
                epochs_run,
                final_ce,
                converged,
                diverged: false,
            })
        }
    }
}

/// Sigma making the feature-KL contribution
/// `sqrt(sum_i |W_i - W_i0|_F^2 / (4 m sigma^2))` exactly one half:
/// `sigma = sqrt(sum_i |W_i - W_i0|_F^2 / m)`.
pub fn calibrate_sigma(model: &PartialShelModel, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1".to_string()));
    }
    let drift = model.feature_drift_sq();
    if drift <= 0.0 {
        return Err(Error::Degenerate(
            "zero drift from the prior: sigma is undefined".to_string(),
        ));
    }
    Ok((drift / m as f64).sqrt())
}

/// The calibrated feature-KL contribution at a given sigma (the quantity
/// [`calibrate_sigma`] pins to one half).
pub fn feature_kl_term(model: &PartialShelModel, m: usize, sigma: f64) -> f64 {
    (model.feature_drift_sq() / (4.0 * m as f64 * sigma * sigma)).sqrt()
}

/// Number of weight draws used by the stochastic margin search.
pub const STOCHASTIC_MARGIN_SAMPLES: usize = 32;

/// Largest margin whose stochastic margin loss stays at or below
/// `target`, found by bisection to 1e-4 over seed-pinned weight draws.
pub fn stochastic_gamma_search(
    model: &PartialShelModel,
    data: &LabeledDataset,
    target: f64,
    weight_samples: usize,
    seed: u64,
) -> Result<f64> {
    let profiles = stochastic_margin_profiles(model, data, weight_samples, seed)?;
    let loss = |gamma: f64| -> f64 {
        let losses: Vec<f64> = profiles.iter().map(|p| p.empirical_loss(gamma)).collect();
        crate::numcore::pairwise_sum(&losses) / profiles.len() as f64
    };
    if loss(0.0) > target {
        return Err(Error::MarginUnachievable(format!(
            "stochastic loss at zero margin is {} > target {target}",
            loss(0.0)
        )));
    }
    let mut hi = 1.0;
    let max_margin = profiles
        .iter()
        .flat_map(|p| p.margins().iter().cloned())
        .fold(0.0, f64::max);
    while hi <= max_margin && loss(hi) <= target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if loss(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::MarginUnachievable(
            "no positive margin meets the stochastic target".to_string(),
        ));
    }
    Ok(lo)
}

/// Axes a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    LearningRate,
    Width,
    TrainSize,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::Width => "width",
            SweepAxis::TrainSize => "train_size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learning_rate" => Ok(SweepAxis::LearningRate),
            "width" => Ok(SweepAxis::Width),
            "train_size" => Ok(SweepAxis::TrainSize),
            other => Err(Error::domain(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Grid of hyperparameter values for [`run_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub widths: Vec<usize>,
    pub train_sizes: Vec<usize>,
    /// Independent seeds per grid point; pairs are matched per repeat.
    pub repeats: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.widths.is_empty() || self.train_sizes.is_empty()
        {
            return Err(Error::domain("every grid axis needs >= 1 value".to_string()));
        }
        if self.repeats == 0 {
            return Err(Error::domain("repeats must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One grid point's results: the generalisation error `G`, the complexity
/// measure `C`, the margin realising the target loss, and the run
/// provenance. Failed runs carry an error message and NaN metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub config: TrainConfig,
    pub gamma: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub gen_error: f64,
    pub complexity: f64,
    pub converged: bool,
    pub repeat: usize,
    pub run_seed: u64,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn is_valid(&self) -> bool {
        self.converged && self.error.is_none() && self.gamma.is_finite()
    }

    pub fn axis_value(&self, axis: SweepAxis) -> f64 {
        match axis {
            SweepAxis::LearningRate => self.config.learning_rate,
            SweepAxis::Width => self.config.width as f64,
            SweepAxis::TrainSize => self.config.train_size as f64,
        }
    }

    /// Fixed, documented column order: all `TrainConfig` fields, then
    /// gamma, train_error, test_error, g, c, converged, repeat, run_seed,
    /// error.
    pub fn csv_header() -> String {
        csvutil::write_row(
            &[
                "learning_rate",
                "batch_size",
                "momentum",
                "width",
                "train_size",
                "target_ce",
                "max_epochs",
                "seed",
                "model_kind",
                "target_margin_loss",
                "gamma",
                "train_error",
                "test_error",
                "g",
                "c",
                "converged",
                "repeat",
                "run_seed",
                "error",
            ]
            .map(String::from),
        )
    }

    pub fn to_csv_row(&self) -> String {
        let c = &self.config;
        csvutil::write_row(&[
            csvutil::fmt_f64(c.learning_rate),
            c.batch_size.to_string(),
            csvutil::fmt_f64(c.momentum),
            c.width.to_string(),
            c.train_size.to_string(),
            csvutil::fmt_f64(c.target_ce),
            c.max_epochs.to_string(),
            c.seed.to_string(),
            c.model_kind.as_str().to_string(),
            csvutil::fmt_f64(c.target_margin_loss),
            csvutil::fmt_f64(self.gamma),
            csvutil::fmt_f64(self.train_error),
            csvutil::fmt_f64(self.test_error),
            csvutil::fmt_f64(self.gen_error),
            csvutil::fmt_f64(self.complexity),
            self.converged.to_string(),
            self.repeat.to_string(),
            self.run_seed.to_string(),
            self.error.clone().unwrap_or_default(),
        ])
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let fields = csvutil::parse_row(line);
        if fields.len() != 19 {
            return Err(Error::parse(
                0,
                format!("sweep row has {} fields, expected 19", fields.len()),
            ));
        }
        let f = |i: usize| -> Result<f64> {
            csvutil::parse_f64(&fields[i])
                .ok_or_else(|| Error::parse(0, format!("bad number {:?}", fields[i])))
        };
        let u = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse(0, format!("bad integer {:?}", fields[i])))
        };
        let config = TrainConfig {
            learning_rate: f(0)?,
            batch_size: u(1)?,
            momentum: f(2)?,
            width: u(3)?,
            train_size: u(4)?,
            target_ce: f(5)?,
            max_epochs: u(6)?,
            seed: fields[7]
                .parse()
                .map_err(|_| Error::parse(0, format!("bad seed {:?}", fields[7])))?,
            model_kind: ModelKind::parse(&fields[8])?,
            target_margin_loss: f(9)?,
        };
        Ok(SweepRecord {
            config,
            gamma: f(10)?,
            train_error: f(11)?,
            test_error: f(12)?,
            gen_error: f(13)?,
            complexity: f(14)?,
            converged: fields[15]
                .parse()
                .map_err(|_| Error::parse(0, format!("bad bool {:?}", fields[15])))?,
            repeat: u(16)?,
            run_seed: fields[17]
                .parse()
                .map_err(|_| Error::parse(0, format!("bad seed {:?}", fields[17])))?,
            error: if fields[18].is_empty() {
                None
            } else {
                Some(fields[18].clone())
            },
        })
    }
}

/// Serialises records to CSV (header plus one row per record).
pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut out = SweepRecord::csv_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty records CSV".to_string()))?;
    if header != SweepRecord::csv_header() {
        return Err(Error::parse(0, "unexpected sweep CSV header".to_string()));
    }
    lines.map(SweepRecord::from_csv_row).collect()
}

fn run_grid_point(
    base: &TrainConfig,
    lr: f64,
    width: usize,
    train_size: usize,
    repeat: usize,
    train_pool: &LabeledDataset,
    test: &LabeledDataset,
) -> SweepRecord {
    let run_seed = CounterRng::from_seed_tag(
        base.seed,
        &format!("sweep:{lr}:{width}:{train_size}:{repeat}"),
    )
    .next_u64();
    let mut config = base.clone();
    config.learning_rate = lr;
    config.width = width;
    config.train_size = train_size;
    config.seed = run_seed;

    let mut record = SweepRecord {
        config: {
            let mut c = base.clone();
            c.learning_rate = lr;
            c.width = width;
            c.train_size = train_size;
            c
        },
        gamma: f64::NAN,
        train_error: f64::NAN,
        test_error: f64::NAN,
        gen_error: f64::NAN,
        complexity: f64::NAN,
        converged: false,
        repeat,
        run_seed,
        error: None,
    };

    let outcome = match train_to_cross_entropy(&config, train_pool) {
        Ok(o) => o,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.converged = outcome.converged;
    if outcome.diverged {
        record.error = Some(format!(
            "training diverged (non-finite loss at epoch {})",
            outcome.epochs_run
        ));
        return record;
    }

    let train_data = match train_pool.head(train_size) {
        Ok(d) => d,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let eval = (|| -> Result<(f64, f64, f64, f64)> {
        let train_error = outcome.model.error_rate(&train_data)?;
        let test_error = outcome.model.error_rate(test)?;
        let gamma = match &outcome.model {
            TrainedModel::Shel(m) => {
                let profile = margin_profile(m, &train_data)?;
                profile.margin_for_target_loss(config.target_margin_loss)?
            }
            TrainedModel::Partial(_) => {
                // Calibrate sigma from the trained drift, then search the
                // stochastic margin.
                let TrainedModel::Partial(m) = &outcome.model else {
                    unreachable!()
                };
                let mut noisy = m.clone();
                let sigma = calibrate_sigma(&noisy, train_size)?;
                noisy.set_sigma(sigma)?;
                stochastic_gamma_search(
                    &noisy,
                    &train_data,
                    config.target_margin_loss,
                    STOCHASTIC_MARGIN_SAMPLES,
                    run_seed,
                )?
            }
        };
        let complexity = shel_complexity(outcome.model.head(), gamma, train_size)?;
        Ok((train_error, test_error, gamma, complexity))
    })();
    match eval {
        Ok((train_error, test_error, gamma, complexity)) => {
            record.train_error = train_error;
            record.test_error = test_error;
            record.gen_error = test_error - train_error;
            record.gamma = gamma;
            record.complexity = complexity;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs the full grid; one record per (learning rate, width, train size,
/// repeat), in that deterministic order. Grid points run concurrently up
/// to `workers` threads; per-record failures are recorded, never fatal.
pub fn run_sweep(
    grid: &SweepGrid,
    base: &TrainConfig,
    train_pool: &LabeledDataset,
    test: &LabeledDataset,
    workers: usize,
) -> Result<Vec<SweepRecord>> {
    grid.validate()?;
    base.validate()?;
    let max_m = *grid.train_sizes.iter().max().unwrap();
    if train_pool.len() < max_m {
        return Err(Error::precondition(format!(
            "train pool has {} samples, grid needs {max_m}",
            train_pool.len()
        )));
    }
    let mut points = Vec::new();
    for &lr in &grid.learning_rates {
        for &width in &grid.widths {
            for &m in &grid.train_sizes {
                for rep in 0..grid.repeats {
                    points.push((lr, width, m, rep));
                }
            }
        }
    }
    let run = |(lr, width, m, rep): &(f64, usize, usize, usize)| {
        run_grid_point(base, *lr, *width, *m, *rep, train_pool, test)
    };
    if workers <= 1 {
        Ok(points.iter().map(run).collect())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::domain(format!("worker pool: {e}")))?;
        Ok(pool.install(|| points.par_iter().map(run).collect()))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign error of one matched pair of runs: `(1 - sign(dC) sign(dG)) / 2`.
/// A zero difference on either side contributes one half.
fn pair_sign_error(a: &SweepRecord, b: &SweepRecord) -> f64 {
    (1.0 - sign(b.complexity - a.complexity) * sign(b.gen_error - a.gen_error)) / 2.0
}

/// Sign error of one pair of axis values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSignError {
    pub value_a: f64,
    pub value_b: f64,
    pub sign_error: f64,
    pub matched: usize,
}

/// Sign-error statistics across all value pairs of one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SignErrorReport {
    pub axis: SweepAxis,
    pub pairs: Vec<PairSignError>,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
}

impl SignErrorReport {
    /// CSV rows: one per value pair plus a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = csvutil::write_row(
            &["axis", "kind", "value_a", "value_b", "sign_error", "matched"].map(String::from),
        );
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&csvutil::write_row(&[
                self.axis.as_str().to_string(),
                "pair".to_string(),
                csvutil::fmt_f64(p.value_a),
                csvutil::fmt_f64(p.value_b),
                csvutil::fmt_f64(p.sign_error),
                p.matched.to_string(),
            ]));
            out.push('\n');
        }
        out.push_str(&csvutil::write_row(&[
            self.axis.as_str().to_string(),
            "summary".to_string(),
            csvutil::fmt_f64(self.max),
            csvutil::fmt_f64(self.median),
            csvutil::fmt_f64(self.mean),
            self.pairs.len().to_string(),
        ]));
        out.push('\n');
        out
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Sign error over every unordered pair of values on `axis`, averaging
/// the half-disagreement across all configurations matched on the other
/// axes (and the repeat index). Failed or unconverged records are
/// excluded. Returns max/median/mean over pairs.
pub fn sign_error(records: &[SweepRecord], axis: SweepAxis) -> Result<SignErrorReport> {
    let valid: Vec<&SweepRecord> = records.iter().filter(|r| r.is_valid()).collect();
    // Group matched configurations by everything except the varying axis.
    let key = |r: &SweepRecord| -> (u64, usize, usize, usize) {
        match axis {
            SweepAxis::LearningRate => (0, r.config.width, r.config.train_size, r.repeat),
            SweepAxis::Width => (
                r.config.learning_rate.to_bits(),
                0,
                r.config.train_size,
                r.repeat,
            ),
            SweepAxis::TrainSize => (
                r.config.learning_rate.to_bits(),
                r.config.width,
                0,
                r.repeat,
            ),
        }
    };
    let mut values: Vec<f64> = valid.iter().map(|r| r.axis_value(axis)).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    if values.len() < 2 {
        return Err(Error::domain(format!(
            "axis {} needs >= 2 distinct values among valid records",
            axis.as_str()
        )));
    }
    let mut pairs = Vec::new();
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let (va, vb) = (values[i], values[j]);
            let mut sum = 0.0;
            let mut matched = 0usize;
            for ra in valid.iter().filter(|r| r.axis_value(axis) == va) {
                for rb in valid
                    .iter()
                    .filter(|r| r.axis_value(axis) == vb && key(r) == key(ra))
                {
                    sum += pair_sign_error(ra, rb);
                    matched += 1;
                }
            }
            if matched > 0 {
                pairs.push(PairSignError {
                    value_a: va,
                    value_b: vb,
                    sign_error: sum / matched as f64,
                    matched,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::domain(
            "no matched record pairs on the varying axis".to_string(),
        ));
    }
    let mut ses: Vec<f64> = pairs.iter().map(|p| p.sign_error).collect();
    ses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SignErrorReport {
        axis,
        max: *ses.last().unwrap(),
        median: median(&ses),
        mean: ses.iter().sum::<f64>() / ses.len() as f64,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;

    fn quick_config(kind: ModelKind) -> TrainConfig {
        let mut c = TrainConfig::new(kind, 16, 120);
        c.batch_size = 30;
        c.max_epochs = 60;
        c.learning_rate = 3e-2;
        c.seed = 7;
        c
    }

    #[test]
    fn separable_blobs_train_to_low_error() {
        let data = synth_blobs(2, 120, 4, 8.0, 3).unwrap();
        let config = quick_config(ModelKind::Shel);
        let outcome = train_to_cross_entropy(&config, &data).unwrap();
        assert!(outcome.converged, "final ce = {}", outcome.final_ce);
        let err = outcome.model.error_rate(&data.head(120).unwrap()).unwrap();
        assert!(err <= 0.01, "train error {err}");
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let data = synth_blobs(2, 60, 4, 3.0, 3).unwrap();
        let mut config = quick_config(ModelKind::Shel);
        config.learning_rate = 0.0;
        config.train_size = 60;
        config.max_epochs = 3;
        let outcome = train_to_cross_entropy(&config, &data).unwrap();
        let TrainedModel::Shel(trained) = outcome.model else {
            panic!()
        };
        let fresh = ShelModel::init_random(config.width, data.dim(), 2, config.seed).unwrap();
        assert_eq!(trained.u(), fresh.u());
        assert_eq!(trained.v(), fresh.v());
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_blobs(3, 60, 5, 3.0, 9).unwrap();
        let mut config = quick_config(ModelKind::Shel);
        config.train_size = 150;
        config.max_epochs = 5;
        config.target_ce = 1e-9; // force all epochs
        let a = train_to_cross_entropy(&config, &data).unwrap();
        let b = train_to_cross_entropy(&config, &data).unwrap();
        let (TrainedModel::Shel(ma), TrainedModel::Shel(mb)) = (a.model, b.model) else {
            panic!()
        };
        assert_eq!(ma, mb);
        assert_eq!(a.final_ce.to_bits(), b.final_ce.to_bits());
    }

    #[test]
    fn partial_model_trains() {
        let data = synth_blobs(2, 100, 4, 8.0, 5).unwrap();
        let mut config = quick_config(ModelKind::PartialShel);
        config.train_size = 160;
        config.learning_rate = 1e-2;
        let outcome = train_to_cross_entropy(&config, &data).unwrap();
        assert!(!outcome.diverged);
        assert!(outcome.final_ce < 1.0);
    }

    #[test]
    fn calibrate_sigma_examples() {
        let mut model = PartialShelModel::init_random(4, 5, 4, 2, 1).unwrap();
        // Drift the first layer so sum |dW|^2 = 2.5.
        model.feature_layers[0].w[[0, 0]] += (2.5f64).sqrt();
        let drift = model.feature_drift_sq();
        assert!((drift - 2.5).abs() < 1e-12);
        let sigma = calibrate_sigma(&model, 10_000).unwrap();
        assert!((sigma - 0.015811388300841896).abs() < 1e-12);
        assert!((feature_kl_term(&model, 10_000, sigma) - 0.5).abs() < 1e-12);

        // Drift x4 doubles sigma.
        let mut model4 = model.clone();
        model4.feature_layers[0].w[[0, 0]] =
            model.feature_layers[0].prior()[[0, 0]] + 2.0 * (2.5f64).sqrt();
        let sigma4 = calibrate_sigma(&model4, 10_000).unwrap();
        assert!((sigma4 - 2.0 * sigma).abs() < 1e-12);
    }

    #[test]
    fn calibrate_sigma_zero_drift_is_degenerate() {
        let model = PartialShelModel::init_random(4, 5, 4, 2, 1).unwrap();
        assert!(matches!(
            calibrate_sigma(&model, 100),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_point_sweep_matches_direct_run() {
        let pool = synth_blobs(2, 120, 4, 8.0, 3).unwrap();
        let test = synth_blobs(2, 60, 4, 8.0, 4).unwrap();
        let mut base = quick_config(ModelKind::Shel);
        base.train_size = 100;
        let grid = SweepGrid {
            learning_rates: vec![3e-2],
            widths: vec![16],
            train_sizes: vec![100],
            repeats: 1,
        };
        let records = run_sweep(&grid, &base, &pool, &test, 1).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert!(r.is_valid(), "{:?}", r.error);
        // Reproduce by hand with the derived seed.
        let mut config = base.clone();
        config.train_size = 100;
        config.seed = r.run_seed;
        let outcome = train_to_cross_entropy(&config, &pool).unwrap();
        let profile = outcome
            .model
            .margin_profile(&pool.head(100).unwrap())
            .unwrap();
        let gamma = profile.margin_for_target_loss(0.2).unwrap();
        assert_eq!(r.gamma, gamma);
        let c = shel_complexity(outcome.model.head(), gamma, 100).unwrap();
        assert_eq!(r.complexity, c);
    }

    #[test]
    fn sweep_is_deterministic_and_parallel_invariant() {
        let pool = synth_blobs(2, 90, 4, 6.0, 3).unwrap();
        let test = synth_blobs(2, 45, 4, 6.0, 4).unwrap();
        let mut base = quick_config(ModelKind::Shel);
        base.max_epochs = 20;
        let grid = SweepGrid {
            learning_rates: vec![1e-2, 3e-2],
            widths: vec![8],
            train_sizes: vec![60, 120],
            repeats: 1,
        };
        let a = run_sweep(&grid, &base, &pool, &test, 1).unwrap();
        let b = run_sweep(&grid, &base, &pool, &test, 4).unwrap();
        assert_eq!(records_to_csv(&a), records_to_csv(&b));
    }

    #[test]
    fn sweep_records_round_trip_csv() {
        let pool = synth_blobs(2, 80, 4, 6.0, 3).unwrap();
        let test = synth_blobs(2, 40, 4, 6.0, 4).unwrap();
        let mut base = quick_config(ModelKind::Shel);
        base.max_epochs = 10;
        let grid = SweepGrid {
            learning_rates: vec![3e-2],
            widths: vec![8],
            train_sizes: vec![80],
            repeats: 2,
        };
        let records = run_sweep(&grid, &base, &pool, &test, 1).unwrap();
        let csv = records_to_csv(&records);
        let back = records_from_csv(&csv).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
            assert_eq!(a.complexity.to_bits(), b.complexity.to_bits());
            assert_eq!(a.run_seed, b.run_seed);
        }
    }

    fn synthetic_record(lr: f64, width: usize, m: usize, c: f64, g: f64) -> SweepRecord {
        let mut config = TrainConfig::new(ModelKind::Shel, width, m);
        config.learning_rate = lr;
        SweepRecord {
            config,
            gamma: 1.0,
            train_error: 0.0,
            test_error: g,
            gen_error: g,
            complexity: c,
            converged: true,
            repeat: 0,
            run_seed: 0,
            error: None,
        }
    }

    #[test]
    fn sign_error_hand_enumerated() {
        // Three train sizes, one line; C and G agree on two pairs and
        // disagree on one => pairs {1, 0, 0}: max 1, median 0, mean 1/3.
        let records = vec![
            synthetic_record(0.1, 8, 100, 3.0, 0.30),
            synthetic_record(0.1, 8, 200, 2.0, 0.35), // C down, G up (disagree with 100)
            synthetic_record(0.1, 8, 400, 1.0, 0.20), // agrees with both? check:
        ];
        // pairs: (100,200): dC<0, dG>0 -> SE 1
        //        (100,400): dC<0, dG<0 -> SE 0
        //        (200,400): dC<0, dG<0 -> SE 0
        let report = sign_error(&records, SweepAxis::TrainSize).unwrap();
        assert_eq!(report.pairs.len(), 3);
        assert_eq!(report.max, 1.0);
        assert_eq!(report.median, 0.0);
        assert!((report.mean - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sign_error_perfect_agreement_and_opposition() {
        let agree = vec![
            synthetic_record(0.1, 8, 100, 3.0, 0.3),
            synthetic_record(0.1, 8, 200, 2.0, 0.2),
        ];
        assert_eq!(sign_error(&agree, SweepAxis::TrainSize).unwrap().mean, 0.0);
        let oppose = vec![
            synthetic_record(0.1, 8, 100, 1.0, 0.3),
            synthetic_record(0.1, 8, 200, 2.0, 0.2),
        ];
        assert_eq!(sign_error(&oppose, SweepAxis::TrainSize).unwrap().mean, 1.0);
    }

    #[test]
    fn sign_error_ties_contribute_half_and_invariance() {
        let tied = vec![
            synthetic_record(0.1, 8, 100, 2.0, 0.3),
            synthetic_record(0.1, 8, 200, 2.0, 0.2),
        ];
        assert_eq!(sign_error(&tied, SweepAxis::TrainSize).unwrap().mean, 0.5);

        // Monotone transform of C leaves the sign error unchanged.
        let records = vec![
            synthetic_record(0.1, 8, 100, 3.0, 0.30),
            synthetic_record(0.1, 8, 200, 2.0, 0.35),
            synthetic_record(0.1, 8, 400, 1.0, 0.20),
        ];
        let transformed: Vec<SweepRecord> = records
            .iter()
            .map(|r| {
                let mut t = r.clone();
                t.complexity = r.complexity.exp();
                t
            })
            .collect();
        let a = sign_error(&records, SweepAxis::TrainSize).unwrap();
        let b = sign_error(&transformed, SweepAxis::TrainSize).unwrap();
        assert_eq!(a.max, b.max);
        assert_eq!(a.median, b.median);
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn sign_error_needs_matched_pairs() {
        let records = vec![synthetic_record(0.1, 8, 100, 3.0, 0.3)];
        assert!(sign_error(&records, SweepAxis::TrainSize).is_err());
        // Two records differing on TWO axes never match.
        let unmatched = vec![
            synthetic_record(0.1, 8, 100, 3.0, 0.3),
            synthetic_record(0.2, 8, 200, 2.0, 0.2),
        ];
        assert!(sign_error(&unmatched, SweepAxis::TrainSize).is_err());
    }
}
