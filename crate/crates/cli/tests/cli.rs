//! CLI contract tests: exit codes, file outputs, determinism.

use ndarray::arr1;
use pacmargin_cli::dispatch;
use pacmargin_core::models::serialize::{save_model, Model};
use pacmargin_core::models::{LinearModel, NormKind, ReluModel, ShelModel};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["pacmargin".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    dispatch(argv)
}

fn write_binary_csv(dir: &TempDir) -> std::path::PathBuf {
    // Eight points in 2-d with known margins for w = (1, 0):
    // y * x0 = 0.9, 0.8, 0.7, 0.3, 0.5, 0.6, 0.4, 0.8
    let path = dir.path().join("points.csv");
    std::fs::write(
        &path,
        "f0,f1,label\n0.9,0.1,1\n0.8,-0.2,1\n-0.7,0.3,-1\n-0.3,0.0,-1\n0.5,0.2,1\n\
         0.6,0.9,1\n-0.4,0.1,-1\n-0.8,-0.5,-1\n",
    )
    .unwrap();
    path
}

#[test]
fn unknown_subcommand_and_flags_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["verify", "--bogus-flag"]), 1);
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn certify_linear_reproduces_hand_value() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("linear.pacm");
    save_model(
        &Model::Linear(LinearModel::new(arr1(&[1.0, 0.0]), NormKind::L2)),
        &model_path,
    )
    .unwrap();
    let csv = write_binary_csv(&dir);
    let out = dir.path().join("cert.csv");
    let code = run(&[
        "certify-linear",
        "--model",
        model_path.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--delta",
        "0.05",
        "--gamma",
        "0.2",
        "--form",
        "soft",
        "--r-bound",
        "1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let get = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    // Hand arithmetic: L_hat = 0, Delta = 2 ln 40 + 9 (1/0.2)^2 ln 8.
    let delta_big = 2.0 * (40.0f64).ln() + 9.0 * 25.0 * (8.0f64).ln();
    let expected = (delta_big + delta_big.sqrt() + 2.0) / 8.0;
    let bound: f64 = get("bound").parse().unwrap();
    if expected >= 1.0 {
        assert_eq!(get("vacuous"), "true");
    } else {
        assert!((bound - expected).abs() < 1e-12);
    }
    assert_eq!(get("empirical_loss"), "0");
    assert_eq!(get("theorem"), "linear-l2-soft");
}

#[test]
fn certify_linear_hard_form_and_model_kind_mismatch() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("linear.pacm");
    save_model(
        &Model::Linear(LinearModel::new(arr1(&[1.0, 0.0]), NormKind::L2)),
        &model_path,
    )
    .unwrap();
    let csv = write_binary_csv(&dir);
    let out = dir.path().join("cert.csv");
    assert_eq!(
        run(&[
            "certify-linear",
            "--model",
            model_path.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
            "--form",
            "hard",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("linear-l2-hard"));

    // A SHEL model behind certify-linear is a domain error (exit 1).
    let shel_path = dir.path().join("shel.pacm");
    save_model(
        &Model::Shel(ShelModel::init_random(4, 2, 3, 1).unwrap()),
        &shel_path,
    )
    .unwrap();
    assert_eq!(
        run(&[
            "certify-linear",
            "--model",
            shel_path.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
        ]),
        1
    );
}

#[test]
fn certify_relu_runs_on_synthetic_data() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("relu.pacm");
    // Generous input bound so synthetic blobs stay inside.
    save_model(
        &Model::Relu(ReluModel::init_random(&[6, 8, 3], 20.0, 3).unwrap()),
        &model_path,
    )
    .unwrap();
    let out = dir.path().join("cert.csv");
    let code = run(&[
        "certify-relu",
        "--model",
        model_path.to_str().unwrap(),
        "--synth",
        "classes=3,per_class=20,d=6,separation=2,seed=5",
        "--gamma",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("relu-deep"));
    assert!(text.contains("sigma_1"));
}

#[test]
fn verify_exit_codes_and_determinism() {
    let dir = TempDir::new().unwrap();
    let out_a = dir.path().join("a.txt");
    let out_b = dir.path().join("b.txt");
    for out in [&out_a, &out_b] {
        let code = run(&[
            "verify",
            "--suite",
            "erf",
            "--seed",
            "7",
            "--n",
            "10000",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "verify reports must be byte-identical");
    assert!(!a.is_empty());
}

#[test]
fn sweep_then_sign_error_then_plot() {
    let dir = TempDir::new().unwrap();
    let records = dir.path().join("records.csv");
    let conf = dir.path().join("sweep.conf");
    std::fs::write(
        &conf,
        format!(
            "model_kind = shel\nwidth = 8\ntrain_size = 60\nlearning_rate = 0.03\n\
             batch_size = 20\nmax_epochs = 30\nseed = 5\n\
             train_data = synth:classes=2,per_class=60,d=6,separation=6,seed=21\n\
             test_data = synth:classes=2,per_class=30,d=6,separation=6,seed=22\n\
             learning_rates = 0.01,0.03\nwidths = 8\ntrain_sizes = 60,120\n\
             out_records = {}\n",
            records.display()
        ),
    )
    .unwrap();
    assert_eq!(run(&["sweep", "--config", conf.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 5); // header + 4 records

    let report = dir.path().join("se.csv");
    assert_eq!(
        run(&[
            "sign-error",
            "--records",
            records.to_str().unwrap(),
            "--axis",
            "train_size",
            "--out",
            report.to_str().unwrap(),
        ]),
        0
    );
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("summary"));

    let svg_path = dir.path().join("chart.svg");
    assert_eq!(
        run(&[
            "plot",
            "--records",
            records.to_str().unwrap(),
            "--x",
            "train_size",
            "--out",
            svg_path.to_str().unwrap(),
        ]),
        0
    );
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    // One marker per record per series.
    assert_eq!(svg.matches("class=\"marker-g\"").count(), 4);
    assert_eq!(svg.matches("class=\"marker-c\"").count(), 4);
}

#[test]
fn sweep_determinism_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for name in ["r1.csv", "r2.csv"] {
        let records = dir.path().join(name);
        let conf = dir.path().join(format!("{name}.conf"));
        std::fs::write(
            &conf,
            format!(
                "model_kind = shel\nwidth = 8\ntrain_size = 60\n\
                 batch_size = 20\nmax_epochs = 15\nseed = 5\nworkers = 3\n\
                 train_data = synth:classes=2,per_class=60,d=6,separation=6,seed=21\n\
                 test_data = synth:classes=2,per_class=30,d=6,separation=6,seed=22\n\
                 learning_rates = 0.01,0.03\nwidths = 8\ntrain_sizes = 60,120\n\
                 out_records = {}\n",
                records.display()
            ),
        )
        .unwrap();
        assert_eq!(run(&["sweep", "--config", conf.to_str().unwrap()]), 0);
        outputs.push(std::fs::read(&records).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(
        &conf,
        "model_kind = shel\nwidth = 8\ntrain_size = 60\nbogus_key = 1\n\
         train_data = synth:classes=2,per_class=60,d=6,seed=1\n",
    )
    .unwrap();
    assert_eq!(run(&["train", "--config", conf.to_str().unwrap()]), 1);
}

#[test]
fn idx_fixtures_load_through_cli() {
    let dir = TempDir::new().unwrap();
    // 8 images of 2x2, labels cycling over 4 classes.
    let mut images = Vec::new();
    images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    images.extend_from_slice(&8u32.to_be_bytes());
    images.extend_from_slice(&2u32.to_be_bytes());
    images.extend_from_slice(&2u32.to_be_bytes());
    images.extend_from_slice(&(0..32u8).map(|i| i * 7 + 3).collect::<Vec<u8>>());
    let images_path = dir.path().join("imgs.idx");
    std::fs::write(&images_path, &images).unwrap();
    let mut labels = Vec::new();
    labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    labels.extend_from_slice(&8u32.to_be_bytes());
    labels.extend_from_slice(&[0, 1, 2, 3, 0, 1, 2, 3]);
    let labels_path = dir.path().join("labels.idx");
    std::fs::write(&labels_path, &labels).unwrap();

    let model_path = dir.path().join("shel.pacm");
    save_model(
        &Model::Shel(ShelModel::init_random(4, 4, 4, 2).unwrap()),
        &model_path,
    )
    .unwrap();
    let out = dir.path().join("cert.csv");
    let code = run(&[
        "certify-shel",
        "--model",
        model_path.to_str().unwrap(),
        "--idx-images",
        images_path.to_str().unwrap(),
        "--idx-labels",
        labels_path.to_str().unwrap(),
        "--classes",
        "4",
        "--gamma",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // Truncated IDX payload: parse error, exit 1.
    let mut truncated = images.clone();
    truncated.pop();
    let bad_path = dir.path().join("bad.idx");
    std::fs::write(&bad_path, &truncated).unwrap();
    assert_eq!(
        run(&[
            "certify-shel",
            "--model",
            model_path.to_str().unwrap(),
            "--idx-images",
            bad_path.to_str().unwrap(),
            "--idx-labels",
            labels_path.to_str().unwrap(),
            "--classes",
            "4",
        ]),
        1
    );
}

#[test]
fn model_round_trip_through_cli_files() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.pacm");
    let model = Model::Shel(ShelModel::init_random(6, 5, 3, 9).unwrap());
    save_model(&model, &path).unwrap();
    let bytes1 = std::fs::read(&path).unwrap();
    let loaded = pacmargin_core::models::serialize::load_model(&path).unwrap();
    save_model(&loaded, &path).unwrap();
    let bytes2 = std::fs::read(&path).unwrap();
    assert_eq!(bytes1, bytes2);
}
