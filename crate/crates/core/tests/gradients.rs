//! Backward passes against central finite differences.

use ndarray::Array2;
use pacmargin_core::dataset::{LabeledDataset, Labels, Split};
use pacmargin_core::models::{PartialShelModel, ShelModel};
use pacmargin_core::rng::CounterRng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random_dataset(m: usize, d: usize, classes: usize, seed: u64) -> LabeledDataset {
    let mut rng = CounterRng::from_seed_tag(seed, "gradcheck-data");
    let features = Array2::from_shape_fn((m, d), |_| rng.next_normal());
    let labels = if classes == 1 {
        Labels::Binary((0..m).map(|_| if rng.next_f64() < 0.5 { 1 } else { -1 }).collect())
    } else {
        Labels::Multiclass {
            classes,
            y: (0..m).map(|_| rng.next_index(classes) as u32).collect(),
        }
    };
    LabeledDataset::new(features, labels, Split::Train).unwrap()
}

fn assert_grad_close(analytic: f64, fd: f64, what: &str) {
    let tol = REL_TOL * analytic.abs().max(fd.abs()) + 1e-8;
    assert!(
        (analytic - fd).abs() <= tol,
        "{what}: analytic {analytic} vs fd {fd}"
    );
}

#[test]
fn shel_gradients_match_finite_differences() {
    for (seed, classes) in [(1u64, 3usize), (2, 4), (3, 1), (4, 1), (5, 2)] {
        let data = random_dataset(6, 4, classes, seed);
        let model = ShelModel::init_random(5, 4, classes, seed ^ 0xabc).unwrap();
        let batch: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = model.loss_and_grad(&data, &batch).unwrap();

        let loss_at = |m: &ShelModel| m.loss_and_grad(&data, &batch).unwrap().0;
        for i in 0..model.width() {
            for j in 0..model.input_dim() {
                let mut plus = model.clone();
                plus.u_mut()[[i, j]] += FD_STEP;
                let mut minus = model.clone();
                minus.u_mut()[[i, j]] -= FD_STEP;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                assert_grad_close(grad.du[[i, j]], fd, &format!("seed {seed} dU[{i},{j}]"));
            }
        }
        for c in 0..model.classes() {
            for k in 0..model.width() {
                let mut plus = model.clone();
                plus.v_mut()[[c, k]] += FD_STEP;
                let mut minus = model.clone();
                minus.v_mut()[[c, k]] -= FD_STEP;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                assert_grad_close(grad.dv[[c, k]], fd, &format!("seed {seed} dV[{c},{k}]"));
            }
        }
    }
}

#[test]
fn partial_shel_gradients_match_finite_differences() {
    for (seed, classes) in [(11u64, 3usize), (12, 1), (13, 2)] {
        let data = random_dataset(5, 4, classes, seed);
        let model = PartialShelModel::init_random(4, 4, 5, classes, seed ^ 0x5a5a).unwrap();
        let batch: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = model.loss_and_grad(&data, &batch).unwrap();

        let loss_at = |m: &PartialShelModel| m.loss_and_grad(&data, &batch).unwrap().0;
        for (li, layer) in model.feature_layers.iter().enumerate() {
            let (rows, cols) = layer.w.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = model.clone();
                    plus.feature_layers[li].w[[i, j]] += FD_STEP;
                    let mut minus = model.clone();
                    minus.feature_layers[li].w[[i, j]] -= FD_STEP;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                    assert_grad_close(
                        grad.dlayers[li][[i, j]],
                        fd,
                        &format!("seed {seed} dW{li}[{i},{j}]"),
                    );
                }
            }
        }
        for i in 0..model.head.width() {
            for j in 0..model.head.input_dim() {
                let mut plus = model.clone();
                plus.head.u_mut()[[i, j]] += FD_STEP;
                let mut minus = model.clone();
                minus.head.u_mut()[[i, j]] -= FD_STEP;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                assert_grad_close(grad.head.du[[i, j]], fd, &format!("seed {seed} head dU"));
            }
        }
        for c in 0..model.head.classes() {
            for k in 0..model.head.width() {
                let mut plus = model.clone();
                plus.head.v_mut()[[c, k]] += FD_STEP;
                let mut minus = model.clone();
                minus.head.v_mut()[[c, k]] -= FD_STEP;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                assert_grad_close(grad.head.dv[[c, k]], fd, &format!("seed {seed} head dV"));
            }
        }
    }
}
