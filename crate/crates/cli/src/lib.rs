//! Command-line front end: dataset ingestion, certificate computation,
//! training/sweeps, sign-error reports, the Monte-Carlo verification
//! suite and SVG plots.
//!
//! Exit codes: 0 success, 1 domain/parse error, 2 verification failure.

pub mod config;
pub mod svg;
mod verify_suite;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use pacmargin_core::bounds::{
    linear_l1_soft, linear_l2_hard, linear_l2_smallkl, linear_l2_soft, relu_certificate,
    shel_binary_certificate, shel_certificate, shel_complexity, BoundCertificate,
};
use pacmargin_core::dataset::{
    idx_dataset, read_csv_dataset, read_idx, synth_blobs, LabeledDataset, Labels, Split,
};
use pacmargin_core::models::serialize::{load_model, save_model, Model};
use pacmargin_core::models::margin_profile;
use pacmargin_core::train::{
    calibrate_sigma, records_from_csv, records_to_csv, run_sweep, sign_error,
    stochastic_gamma_search, train_to_cross_entropy, ModelKind, SweepAxis, SweepGrid,
    SweepRecord, TrainConfig, TrainedModel, STOCHASTIC_MARGIN_SAMPLES,
};
use pacmargin_core::MarginProfile;

#[derive(Parser, Debug)]
#[command(
    name = "pacmargin",
    version,
    about = "PAC-Bayes margin-bound certificates, sweeps and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certificate for a linear model (L2 soft/small-kl/hard or L1 soft).
    CertifyLinear(CertifyLinearArgs),
    /// Certificate for a SHEL network (multiclass or binary form).
    CertifyShel(CertifyShelArgs),
    /// Certificate for a deep ReLU network.
    CertifyRelu(CertifyReluArgs),
    /// Train one model from a config file; writes the model and a record.
    Train(TrainArgs),
    /// Run a hyperparameter sweep from a config file; writes records CSV.
    Sweep(SweepArgs),
    /// Sign-error report from a sweep records CSV.
    SignError(SignErrorArgs),
    /// Run the Monte-Carlo verification suite.
    Verify(VerifyArgs),
    /// SVG chart of complexity and generalisation versus a sweep axis.
    Plot(PlotArgs),
}

/// Dataset source shared by the certify commands.
#[derive(Args, Debug)]
struct DataArgs {
    /// CSV dataset (header row, `label` column)
    #[arg(long, group = "data")]
    csv: Option<PathBuf>,
    /// IDX image file (requires --idx-labels and --classes)
    #[arg(long, group = "data", requires = "idx_labels", requires = "classes")]
    idx_images: Option<PathBuf>,
    /// IDX label file
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Class count for IDX labels
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic blobs: `classes=3,per_class=100,d=20,separation=3,seed=7`
    #[arg(long, group = "data")]
    synth: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledDataset> {
        if let Some(path) = &self.csv {
            return Ok(read_csv_dataset(path, Split::Test)?);
        }
        if let Some(images) = &self.idx_images {
            let labels = self.idx_labels.as_ref().expect("clap requires");
            let classes = self.classes.expect("clap requires");
            return Ok(idx_dataset(
                read_idx(images)?,
                read_idx(labels)?,
                classes,
                Split::Test,
            )?);
        }
        if let Some(spec) = &self.synth {
            return parse_synth_spec(spec);
        }
        bail!("no dataset given: use --csv, --idx-images/--idx-labels or --synth");
    }
}

fn parse_synth_spec(spec: &str) -> Result<LabeledDataset> {
    let mut classes = 2usize;
    let mut per_class = 100usize;
    let mut d = 10usize;
    let mut separation = 3.0f64;
    let mut seed = 0u64;
    for part in spec.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("bad synth entry {part:?} (expected key=value)"))?;
        match k.trim() {
            "classes" => classes = v.trim().parse().context("synth classes")?,
            "per_class" => per_class = v.trim().parse().context("synth per_class")?,
            "d" => d = v.trim().parse().context("synth d")?,
            "separation" => separation = v.trim().parse().context("synth separation")?,
            "seed" => seed = v.trim().parse().context("synth seed")?,
            other => bail!("unknown synth key {other:?}"),
        }
    }
    Ok(synth_blobs(classes, per_class, d, separation, seed)?)
}

/// `synth:...`, `csv:path` or `idx:images,labels,classes`.
fn parse_data_spec(spec: &str) -> Result<LabeledDataset> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        parse_synth_spec(rest)
    } else if let Some(path) = spec.strip_prefix("csv:") {
        Ok(read_csv_dataset(Path::new(path), Split::Train)?)
    } else if let Some(rest) = spec.strip_prefix("idx:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 3 {
            bail!("idx spec needs `images,labels,classes`, got {rest:?}");
        }
        let classes: usize = parts[2].trim().parse().context("idx classes")?;
        Ok(idx_dataset(
            read_idx(Path::new(parts[0].trim()))?,
            read_idx(Path::new(parts[1].trim()))?,
            classes,
            Split::Train,
        )?)
    } else {
        bail!("dataset spec must start with synth:, csv: or idx: (got {spec:?})");
    }
}

#[derive(Args, Debug)]
struct CertifyLinearArgs {
    /// Model container file (linear kind)
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Confidence parameter
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Margin; when absent, derived from --target-loss
    #[arg(long)]
    gamma: Option<f64>,
    /// Target empirical margin loss used to pick gamma
    #[arg(long, default_value_t = 0.2)]
    target_loss: f64,
    /// Bound form for L2 models
    #[arg(long, default_value = "soft", value_parser = ["soft", "smallkl", "hard"])]
    form: String,
    /// A-priori data norm bound; default: measured from the dataset
    #[arg(long)]
    r_bound: Option<f64>,
    /// Output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyShelArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    target_loss: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyReluArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Margin threshold theta; when absent, derived from --target-loss
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    target_loss: f64,
    /// A-priori spectral norm cap; default: largest norm in the model
    #[arg(long)]
    w_star: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` config file
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct SignErrorArgs {
    /// Sweep records CSV
    #[arg(long)]
    records: PathBuf,
    /// Varying axis
    #[arg(long, value_parser = ["learning_rate", "width", "train_size"])]
    axis: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Which suite to run
    #[arg(long, default_value = "all", value_parser = [
        "all", "erf", "subgaussian", "mixture-kl", "perturbation", "tropp",
        "uav", "substitution",
    ])]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample count override (each check has its own default)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Sweep records CSV
    #[arg(long)]
    records: PathBuf,
    /// X axis
    #[arg(long, value_parser = ["learning_rate", "width", "train_size"])]
    x: String,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::CertifyLinear(args) => certify_linear(args),
        Command::CertifyShel(args) => certify_shel(args),
        Command::CertifyRelu(args) => certify_relu(args),
        Command::Train(args) => train_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::SignError(args) => sign_error_cmd(args),
        Command::Verify(args) => verify_cmd(args),
        Command::Plot(args) => plot_cmd(args),
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn emit_certificate(cert: &BoundCertificate, out: &Option<PathBuf>) -> Result<i32> {
    let content = format!("{}\n{}\n", cert.csv_header(), cert.to_csv_row());
    emit(out, &content)?;
    Ok(0)
}

fn resolve_gamma(
    profile: &MarginProfile,
    gamma: Option<f64>,
    target_loss: f64,
) -> Result<f64> {
    match gamma {
        Some(g) => Ok(g),
        None => Ok(profile.margin_for_target_loss(target_loss)?),
    }
}

fn certify_linear(args: CertifyLinearArgs) -> Result<i32> {
    let Model::Linear(model) = load_model(&args.model)? else {
        bail!("{} does not hold a linear model", args.model.display());
    };
    model.validate()?;
    let data = args.data.load()?;
    if !matches!(data.labels, Labels::Binary(_)) {
        bail!("linear certificates need binary ±1 labels");
    }
    let profile = margin_profile(&model, &data)?;
    let m = data.len();
    let cert = match model.norm_kind {
        pacmargin_core::NormKind::L2 => {
            let r = args.r_bound.unwrap_or_else(|| data.max_l2_norm());
            match args.form.as_str() {
                "soft" => {
                    let gamma = resolve_gamma(&profile, args.gamma, args.target_loss)?;
                    linear_l2_soft(&profile, r, gamma, args.delta, m)?
                }
                "smallkl" => {
                    let gamma = resolve_gamma(&profile, args.gamma, args.target_loss)?;
                    linear_l2_smallkl(&profile, r, gamma, args.delta, m)?
                }
                "hard" => linear_l2_hard(&profile, r, args.delta, m)?,
                other => bail!("unknown form {other:?}"),
            }
        }
        pacmargin_core::NormKind::L1 => {
            if args.form != "soft" {
                bail!("L1 models only support the soft form");
            }
            let r = args.r_bound.unwrap_or_else(|| data.max_linf_norm());
            let gamma = resolve_gamma(&profile, args.gamma, args.target_loss)?;
            linear_l1_soft(&profile, r, data.dim(), gamma, args.delta, m)?
        }
    };
    emit_certificate(&cert, &args.out)
}

fn certify_shel(args: CertifyShelArgs) -> Result<i32> {
    let Model::Shel(model) = load_model(&args.model)? else {
        bail!("{} does not hold a SHEL model", args.model.display());
    };
    let data = args.data.load()?;
    let profile = margin_profile(&model, &data)?;
    let gamma = resolve_gamma(&profile, args.gamma, args.target_loss)?;
    let m = data.len();
    let cert = if model.is_binary() {
        shel_binary_certificate(&model, &profile, gamma, args.delta, m)?
    } else {
        shel_certificate(&model, &profile, gamma, args.delta, m)?
    };
    emit_certificate(&cert, &args.out)
}

fn certify_relu(args: CertifyReluArgs) -> Result<i32> {
    let Model::Relu(model) = load_model(&args.model)? else {
        bail!("{} does not hold a ReLU model", args.model.display());
    };
    let data = args.data.load()?;
    let profile = margin_profile(&model, &data)?;
    let theta = resolve_gamma(&profile, args.gamma, args.target_loss)?;
    let cert = relu_certificate(&model, &profile, theta, args.delta, data.len(), args.w_star)?;
    emit_certificate(&cert, &args.out)
}

struct TrainSetup {
    base: TrainConfig,
    train_pool: LabeledDataset,
    test: Option<LabeledDataset>,
}

fn read_train_base(cfg: &mut config::Config) -> Result<TrainSetup> {
    let kind = ModelKind::parse(&cfg.require("model_kind")?)?;
    let width = cfg.require_usize("width")?;
    let train_size = cfg.require_usize("train_size")?;
    let mut base = TrainConfig::new(kind, width, train_size);
    base.learning_rate = cfg.f64_or("learning_rate", base.learning_rate)?;
    base.batch_size = cfg.usize_or("batch_size", base.batch_size)?;
    base.momentum = cfg.f64_or("momentum", base.momentum)?;
    base.target_ce = cfg.f64_or("target_ce", base.target_ce)?;
    base.max_epochs = cfg.usize_or("max_epochs", base.max_epochs)?;
    base.seed = cfg.u64_or("seed", base.seed)?;
    base.target_margin_loss = cfg.f64_or("target_margin_loss", base.target_margin_loss)?;
    let train_pool = parse_data_spec(&cfg.require("train_data")?)?;
    let test = match cfg.optional("test_data") {
        Some(spec) => Some(parse_data_spec(&spec)?),
        None => None,
    };
    Ok(TrainSetup {
        base,
        train_pool,
        test,
    })
}

fn train_cmd(args: TrainArgs) -> Result<i32> {
    let mut cfg = config::Config::from_file(&args.config)?;
    let setup = read_train_base(&mut cfg)?;
    let out_model = cfg.optional("out_model").map(PathBuf::from);
    let out_record = cfg.optional("out_record").map(PathBuf::from);
    cfg.finish()?;

    let outcome = train_to_cross_entropy(&setup.base, &setup.train_pool)?;
    let train_data = setup.train_pool.head(setup.base.train_size)?;

    let mut record = SweepRecord {
        config: setup.base.clone(),
        gamma: f64::NAN,
        train_error: f64::NAN,
        test_error: f64::NAN,
        gen_error: f64::NAN,
        complexity: f64::NAN,
        converged: outcome.converged,
        repeat: 0,
        run_seed: setup.base.seed,
        error: None,
    };
    let mut model_to_save: Option<Model> = None;
    if outcome.diverged {
        record.error = Some("training diverged (non-finite loss)".to_string());
    } else {
        let eval = (|| -> Result<()> {
            record.train_error = outcome.model.error_rate(&train_data)?;
            if let Some(test) = &setup.test {
                record.test_error = outcome.model.error_rate(test)?;
                record.gen_error = record.test_error - record.train_error;
            }
            match &outcome.model {
                TrainedModel::Shel(m) => {
                    let profile = margin_profile(m, &train_data)?;
                    record.gamma =
                        profile.margin_for_target_loss(setup.base.target_margin_loss)?;
                    model_to_save = Some(Model::Shel(m.clone()));
                }
                TrainedModel::Partial(m) => {
                    let mut calibrated = m.clone();
                    let sigma = calibrate_sigma(&calibrated, setup.base.train_size)?;
                    calibrated.set_sigma(sigma)?;
                    record.gamma = stochastic_gamma_search(
                        &calibrated,
                        &train_data,
                        setup.base.target_margin_loss,
                        STOCHASTIC_MARGIN_SAMPLES,
                        setup.base.seed,
                    )?;
                    model_to_save = Some(Model::Partial(calibrated));
                }
            }
            record.complexity =
                shel_complexity(outcome.model.head(), record.gamma, setup.base.train_size)?;
            Ok(())
        })();
        if let Err(e) = eval {
            record.error = Some(format!("{e:#}"));
        }
    }
    if model_to_save.is_none() {
        model_to_save = Some(match &outcome.model {
            TrainedModel::Shel(m) => Model::Shel(m.clone()),
            TrainedModel::Partial(m) => Model::Partial(m.clone()),
        });
    }
    if let Some(path) = &out_model {
        save_model(model_to_save.as_ref().unwrap(), path)?;
    }
    let csv = records_to_csv(std::slice::from_ref(&record));
    emit(&out_record, &csv)?;
    Ok(0)
}

fn sweep_cmd(args: SweepArgs) -> Result<i32> {
    let mut cfg = config::Config::from_file(&args.config)?;
    let setup = read_train_base(&mut cfg)?;
    let grid = SweepGrid {
        learning_rates: cfg.f64_list("learning_rates")?,
        widths: cfg.usize_list("widths")?,
        train_sizes: cfg.usize_list("train_sizes")?,
        repeats: cfg.usize_or("repeats", 1)?,
    };
    let workers = cfg.usize_or("workers", 1)?;
    let out_records = cfg.optional("out_records").map(PathBuf::from);
    cfg.finish()?;
    let test = setup
        .test
        .ok_or_else(|| anyhow!("sweep config needs test_data"))?;
    let records = run_sweep(&grid, &setup.base, &setup.train_pool, &test, workers)?;
    emit(&out_records, &records_to_csv(&records))?;
    Ok(0)
}

fn sign_error_cmd(args: SignErrorArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("reading {}", args.records.display()))?;
    let records = records_from_csv(&text)?;
    let axis = SweepAxis::parse(&args.axis)?;
    let report = sign_error(&records, axis)?;
    emit(&args.out, &report.to_csv())?;
    Ok(0)
}

fn verify_cmd(args: VerifyArgs) -> Result<i32> {
    let report = verify_suite::run_suite(&args.suite, args.seed, args.n)?;
    emit(&args.out, &report.to_string())?;
    if report.all_pass() {
        Ok(0)
    } else {
        eprintln!(
            "verification failed: {} of {} checks",
            report.checks.iter().filter(|c| !c.pass).count(),
            report.checks.len()
        );
        Ok(2)
    }
}

fn plot_cmd(args: PlotArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("reading {}", args.records.display()))?;
    let records = records_from_csv(&text)?;
    let axis = SweepAxis::parse(&args.x)?;
    let valid: Vec<&SweepRecord> = records.iter().filter(|r| r.is_valid()).collect();
    if valid.is_empty() {
        bail!("no valid records to plot");
    }
    if valid.len() < records.len() {
        eprintln!(
            "note: skipping {} failed/unconverged records",
            records.len() - valid.len()
        );
    }
    let series = build_series(&valid, axis);
    let svg = svg::render_chart(
        &format!("complexity and generalisation vs {}", axis.as_str()),
        axis.as_str(),
        "value",
        &series,
    );
    std::fs::write(&args.out, svg).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(0)
}

fn build_series(records: &[&SweepRecord], axis: SweepAxis) -> Vec<svg::Series> {
    let mut g_points = Vec::new();
    let mut c_points = Vec::new();
    for r in records {
        let x = r.axis_value(axis);
        g_points.push((x, r.gen_error));
        c_points.push((x, r.complexity));
    }
    let mean_line = |points: &[(f64, f64)]| -> Vec<(f64, f64)> {
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        xs.iter()
            .map(|&x| {
                let ys: Vec<f64> = points
                    .iter()
                    .filter(|p| p.0 == x)
                    .map(|p| p.1)
                    .collect();
                (x, ys.iter().sum::<f64>() / ys.len() as f64)
            })
            .collect()
    };
    vec![
        svg::Series {
            name: "g".to_string(),
            color: "#1f77b4".to_string(),
            line: mean_line(&g_points),
            points: g_points,
        },
        svg::Series {
            name: "c".to_string(),
            color: "#d62728".to_string(),
            line: mean_line(&c_points),
            points: c_points,
        },
    ]
}
