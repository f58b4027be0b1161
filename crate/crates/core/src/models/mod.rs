//! Predictors covered by the certificates: linear models, the
//! single-hidden-erf-layer (SHEL) network, its partially-derandomised
//! variant with a stochastic ReLU feature stack, and feed-forward ReLU
//! networks. Includes the training gradients and the stochastic proxy
//! sampler used for verification.
//!
//! None of the models carry biases; every norm in the certificates is a
//! weight-matrix norm.

pub mod serialize;

use ndarray::{Array1, Array2, ArrayView1};

use crate::dataset::{LabeledDataset, Labels};
use crate::error::{Error, Result};
use crate::margins::{binary_margin, multiclass_margin, MarginProfile};
use crate::numcore::{erf, frobenius_sq};
use crate::rng::CounterRng;

/// Norm ball a linear predictor is certified over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    L1,
}

/// Linear predictor `x -> <w, x>` with a unit norm constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Array1<f64>,
    pub norm_kind: NormKind,
}

impl LinearModel {
    pub fn new(w: Array1<f64>, norm_kind: NormKind) -> Self {
        LinearModel { w, norm_kind }
    }

    /// Checks the unit-ball constraint the theorems assume.
    pub fn validate(&self) -> Result<()> {
        let norm = match self.norm_kind {
            NormKind::L2 => self.w.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::L1 => self.w.iter().map(|x| x.abs()).sum::<f64>(),
        };
        if norm > 1.0 + 1e-9 {
            return Err(Error::precondition(format!(
                "weight norm {norm} exceeds the unit ball for {:?}",
                self.norm_kind
            )));
        }
        Ok(())
    }

    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::domain(format!(
                "input dim {} != weight dim {}",
                x.len(),
                self.w.len()
            )));
        }
        Ok(self.w.dot(&x))
    }
}

fn l2_norm(x: ArrayView1<'_, f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn erf_derivative(z: f64) -> f64 {
    std::f64::consts::FRAC_2_SQRT_PI * (-z * z).exp()
}

/// Single Hidden Erf Layer network `F(x) = V erf(U x / (sqrt(2) |x|))`.
///
/// `c == 1` is the binary mode where the output weights act as the vector
/// `v` of the L1-flavoured certificate. The prior `U0` is fixed when the
/// model is created and never updated by training.
#[derive(Debug, Clone, PartialEq)]
pub struct ShelModel {
    u: Array2<f64>,  // K x d
    u0: Array2<f64>, // K x d, frozen
    v: Array2<f64>,  // c x K
}

impl ShelModel {
    /// Builds a model whose prior is its initial hidden weights.
    pub fn from_init(u_init: Array2<f64>, v_init: Array2<f64>) -> Result<Self> {
        if v_init.ncols() != u_init.nrows() {
            return Err(Error::domain(format!(
                "output weights expect width {}, hidden layer has {}",
                v_init.ncols(),
                u_init.nrows()
            )));
        }
        Ok(ShelModel {
            u0: u_init.clone(),
            u: u_init,
            v: v_init,
        })
    }

    /// Reassembles a model from stored parts (deserialisation, tests).
    pub fn from_parts(u: Array2<f64>, u0: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.dim() != u0.dim() || v.ncols() != u.nrows() {
            return Err(Error::domain("SHEL part shapes do not chain".to_string()));
        }
        Ok(ShelModel { u, u0, v })
    }

    /// Gaussian init with per-layer scale `1/sqrt(fan_in)`; the hidden
    /// init doubles as the prior.
    pub fn init_random(width: usize, input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if width == 0 || input_dim == 0 || classes == 0 {
            return Err(Error::domain(
                "width, input_dim and classes must be positive".to_string(),
            ));
        }
        let mut rng = CounterRng::from_seed_tag(seed, "shel-init");
        let su = 1.0 / (input_dim as f64).sqrt();
        let u = Array2::from_shape_fn((width, input_dim), |_| su * rng.next_normal());
        let sv = 1.0 / (width as f64).sqrt();
        let v = Array2::from_shape_fn((classes, width), |_| sv * rng.next_normal());
        ShelModel::from_init(u, v)
    }

    pub fn width(&self) -> usize {
        self.u.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn classes(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_binary(&self) -> bool {
        self.classes() == 1
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn u_mut(&mut self) -> &mut Array2<f64> {
        &mut self.u
    }

    pub fn u0(&self) -> &Array2<f64> {
        &self.u0
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut Array2<f64> {
        &mut self.v
    }

    /// Largest absolute output weight (`V_inf`).
    pub fn v_inf(&self) -> f64 {
        self.v.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Squared Frobenius drift of the hidden weights from their prior.
    pub fn u_drift_sq(&self) -> f64 {
        let diff = &self.u - &self.u0;
        frobenius_sq(diff.view())
    }

    pub fn v_frob_sq(&self) -> f64 {
        frobenius_sq(self.v.view())
    }

    fn hidden(&self, x: ArrayView1<'_, f64>, norm: f64) -> (Array1<f64>, Array1<f64>) {
        let scale = 1.0 / (std::f64::consts::SQRT_2 * norm);
        let xhat = x.mapv(|v| v * scale);
        let z = self.u.dot(&xhat);
        let a = z.mapv(erf);
        (z, a)
    }

    /// Network output; errors on a zero input vector.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let n = l2_norm(x);
        if n == 0.0 {
            return Err(Error::domain("SHEL forward on a zero input vector".to_string()));
        }
        let (_, a) = self.hidden(x, n);
        Ok(self.v.dot(&a))
    }

    /// Output with the feature-norm floor the partial variant uses for
    /// all-dead-ReLU inputs.
    pub fn forward_floored(&self, x: ArrayView1<'_, f64>, floor: f64) -> Array1<f64> {
        let n = l2_norm(x).max(floor);
        let (_, a) = self.hidden(x, n);
        self.v.dot(&a)
    }

    /// Mean cross-entropy loss and its gradients over the indexed batch.
    /// Softmax cross-entropy in multiclass mode, logistic loss in binary
    /// mode.
    pub fn loss_and_grad(
        &self,
        data: &LabeledDataset,
        batch: &[usize],
    ) -> Result<(f64, ShelGrad)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch".to_string()));
        }
        let mut du = Array2::<f64>::zeros(self.u.dim());
        let mut dv = Array2::<f64>::zeros(self.v.dim());
        let mut loss = 0.0;
        for &i in batch {
            let x = data.sample(i);
            let n = l2_norm(x);
            if n == 0.0 {
                return Err(Error::domain(format!("zero input vector at sample {i}")));
            }
            let scale = 1.0 / (std::f64::consts::SQRT_2 * n);
            let xhat = x.mapv(|v| v * scale);
            let z = self.u.dot(&xhat);
            let a = z.mapv(erf);
            let s = self.v.dot(&a);
            let (l, ds) = ce_grad(&s, &data.labels, i)?;
            loss += l;
            // dv += ds a^T; dz = (V^T ds) .* erf'(z); du += dz xhat^T
            for (ci, &g) in ds.iter().enumerate() {
                let mut row = dv.row_mut(ci);
                for (k, &ak) in a.iter().enumerate() {
                    row[k] += g * ak;
                }
            }
            let da = self.v.t().dot(&ds);
            let dz = Array1::from_shape_fn(z.len(), |k| da[k] * erf_derivative(z[k]));
            for k in 0..dz.len() {
                let g = dz[k];
                let mut row = du.row_mut(k);
                for (j, &xj) in xhat.iter().enumerate() {
                    row[j] += g * xj;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        du.mapv_inplace(|g| g * inv);
        dv.mapv_inplace(|g| g * inv);
        Ok((loss * inv, ShelGrad { du, dv }))
    }

    /// Width-doubled copy: hidden units duplicated (rows of `U`, columns
    /// of `V`, prior included). Scores exactly double.
    pub fn widened_by_duplication(&self) -> Self {
        let (k, d) = self.u.dim();
        let c = self.v.nrows();
        let mut u = Array2::zeros((2 * k, d));
        let mut u0 = Array2::zeros((2 * k, d));
        for i in 0..k {
            u.row_mut(i).assign(&self.u.row(i));
            u.row_mut(k + i).assign(&self.u.row(i));
            u0.row_mut(i).assign(&self.u0.row(i));
            u0.row_mut(k + i).assign(&self.u0.row(i));
        }
        let mut v = Array2::zeros((c, 2 * k));
        for ci in 0..c {
            for i in 0..k {
                v[[ci, i]] = self.v[[ci, i]];
                v[[ci, k + i]] = self.v[[ci, i]];
            }
        }
        ShelModel { u, u0, v }
    }
}

/// Cross-entropy loss and score gradient for one sample.
fn ce_grad(scores: &Array1<f64>, labels: &Labels, i: usize) -> Result<(f64, Array1<f64>)> {
    match labels {
        Labels::Binary(y) => {
            if scores.len() != 1 {
                return Err(Error::domain(format!(
                    "binary labels need a single score, model emits {}",
                    scores.len()
                )));
            }
            let yi = f64::from(y[i]);
            let s = scores[0];
            let ys = yi * s;
            // log(1 + e^{-ys}) evaluated stably
            let loss = if ys > 0.0 {
                (-ys).exp().ln_1p()
            } else {
                -ys + ys.exp().ln_1p()
            };
            let sigma = 1.0 / (1.0 + ys.exp());
            Ok((loss, Array1::from_vec(vec![-yi * sigma])))
        }
        Labels::Multiclass { classes, y } => {
            if scores.len() != *classes {
                return Err(Error::domain(format!(
                    "model emits {} scores for {classes} classes",
                    scores.len()
                )));
            }
            let yi = y[i] as usize;
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Array1<f64> = scores.mapv(|s| (s - max).exp());
            let z: f64 = exps.sum();
            let loss = z.ln() - (scores[yi] - max);
            let mut ds = exps.mapv(|e| e / z);
            ds[yi] -= 1.0;
            Ok((loss, ds))
        }
    }
}

/// Gradients of the SHEL parameters.
#[derive(Debug, Clone)]
pub struct ShelGrad {
    pub du: Array2<f64>,
    pub dv: Array2<f64>,
}

/// A dense ReLU feature layer with its frozen prior.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    w0: Array2<f64>,
}

impl DenseLayer {
    pub fn from_init(w_init: Array2<f64>) -> Self {
        DenseLayer {
            w0: w_init.clone(),
            w: w_init,
        }
    }

    pub fn from_parts(w: Array2<f64>, w0: Array2<f64>) -> Result<Self> {
        if w.dim() != w0.dim() {
            return Err(Error::domain("layer and prior shapes differ".to_string()));
        }
        Ok(DenseLayer { w, w0 })
    }

    pub fn prior(&self) -> &Array2<f64> {
        &self.w0
    }

    pub fn drift_sq(&self) -> f64 {
        let diff = &self.w - &self.w0;
        frobenius_sq(diff.view())
    }
}

/// Feature-norm floor guarding the SHEL head against an all-zero ReLU
/// output.
pub const FEATURE_NORM_FLOOR: f64 = 1e-12;

/// SHEL head stacked on a ReLU feature map whose weights are Gaussian at
/// evaluation time (mean = trained weights, std `sigma`). Training runs
/// on the deterministic mean network.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialShelModel {
    pub feature_layers: Vec<DenseLayer>,
    pub head: ShelModel,
    sigma: Option<f64>,
}

impl PartialShelModel {
    pub fn new(feature_layers: Vec<DenseLayer>, head: ShelModel) -> Result<Self> {
        if feature_layers.is_empty() {
            return Err(Error::domain("need at least one feature layer".to_string()));
        }
        let mut dim = feature_layers[0].w.ncols();
        for (i, layer) in feature_layers.iter().enumerate() {
            if layer.w.ncols() != dim {
                return Err(Error::domain(format!(
                    "layer {i} expects input dim {}, previous layer emits {dim}",
                    layer.w.ncols()
                )));
            }
            dim = layer.w.nrows();
        }
        if head.input_dim() != dim {
            return Err(Error::domain(format!(
                "head expects input dim {}, feature stack emits {dim}",
                head.input_dim()
            )));
        }
        Ok(PartialShelModel {
            feature_layers,
            head,
            sigma: None,
        })
    }

    /// Three ReLU feature layers of width `feature_width` plus a SHEL head,
    /// all Gaussian-initialised at scale `1/sqrt(fan_in)`; the inits are
    /// the priors.
    pub fn init_random(
        input_dim: usize,
        feature_width: usize,
        shel_width: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || feature_width == 0 {
            return Err(Error::domain(
                "input_dim and feature_width must be positive".to_string(),
            ));
        }
        let mut rng = CounterRng::from_seed_tag(seed, "partial-shel-init");
        let mut layers = Vec::with_capacity(3);
        let mut fan_in = input_dim;
        for _ in 0..3 {
            let s = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((feature_width, fan_in), |_| s * rng.next_normal());
            layers.push(DenseLayer::from_init(w));
            fan_in = feature_width;
        }
        let head_seed = rng.next_u64();
        let head = ShelModel::init_random(shel_width, feature_width, classes, head_seed)?;
        PartialShelModel::new(layers, head)
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) -> Result<()> {
        if !(sigma >= 0.0) {
            return Err(Error::domain(format!("sigma {sigma} must be >= 0")));
        }
        self.sigma = Some(sigma);
        Ok(())
    }

    /// Total squared Frobenius drift of the feature layers from their
    /// priors.
    pub fn feature_drift_sq(&self) -> f64 {
        self.feature_layers.iter().map(|l| l.drift_sq()).sum()
    }

    /// Deterministic ReLU feature map (weights at their means).
    pub fn features(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut h = x.to_owned();
        for layer in &self.feature_layers {
            h = layer.w.dot(&h).mapv(|v| v.max(0.0));
        }
        h
    }

    /// Deterministic forward pass (equals the noisy pass at sigma = 0).
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let phi = self.features(x);
        self.head.forward_floored(phi.view(), FEATURE_NORM_FLOOR)
    }

    /// Per-layer standard-normal draws matching the feature-layer shapes.
    pub fn sample_noise(&self, rng: &mut CounterRng) -> Vec<Array2<f64>> {
        self.feature_layers
            .iter()
            .map(|l| Array2::from_shape_fn(l.w.dim(), |_| rng.next_normal()))
            .collect()
    }

    /// Forward pass with each feature weight matrix perturbed to
    /// `W_i + sigma * G_i`. Requires a calibrated sigma.
    pub fn forward_noisy(
        &self,
        x: ArrayView1<'_, f64>,
        noise: &[Array2<f64>],
    ) -> Result<Array1<f64>> {
        let sigma = self.sigma.ok_or_else(|| {
            Error::Uncalibrated("sigma has not been calibrated for this model".to_string())
        })?;
        if noise.len() != self.feature_layers.len() {
            return Err(Error::domain(format!(
                "{} noise matrices for {} layers",
                noise.len(),
                self.feature_layers.len()
            )));
        }
        let mut h = x.to_owned();
        for (layer, g) in self.feature_layers.iter().zip(noise) {
            if g.dim() != layer.w.dim() {
                return Err(Error::domain("noise shape mismatch".to_string()));
            }
            let w = &layer.w + &g.mapv(|v| sigma * v);
            h = w.dot(&h).mapv(|v| v.max(0.0));
        }
        Ok(self.head.forward_floored(h.view(), FEATURE_NORM_FLOOR))
    }

    /// Mean cross-entropy and gradients of the deterministic network over
    /// the indexed batch, including the path through the feature-norm
    /// normalisation in the head.
    pub fn loss_and_grad(
        &self,
        data: &LabeledDataset,
        batch: &[usize],
    ) -> Result<(f64, PartialGrad)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch".to_string()));
        }
        let n_layers = self.feature_layers.len();
        let mut dlayers: Vec<Array2<f64>> = self
            .feature_layers
            .iter()
            .map(|l| Array2::zeros(l.w.dim()))
            .collect();
        let mut du = Array2::<f64>::zeros(self.head.u.dim());
        let mut dv = Array2::<f64>::zeros(self.head.v.dim());
        let mut loss = 0.0;
        for &i in batch {
            let x = data.sample(i);
            // Forward, keeping activations.
            let mut acts: Vec<Array1<f64>> = Vec::with_capacity(n_layers + 1);
            let mut pres: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
            acts.push(x.to_owned());
            for layer in &self.feature_layers {
                let pre = layer.w.dot(acts.last().unwrap());
                acts.push(pre.mapv(|v| v.max(0.0)));
                pres.push(pre);
            }
            let phi = acts.last().unwrap().clone();
            let raw_norm = l2_norm(phi.view());
            let floored = raw_norm < FEATURE_NORM_FLOOR;
            let norm = raw_norm.max(FEATURE_NORM_FLOOR);
            let scale = 1.0 / (std::f64::consts::SQRT_2 * norm);
            let xhat = phi.mapv(|v| v * scale);
            let z = self.head.u.dot(&xhat);
            let a = z.mapv(erf);
            let s = self.head.v.dot(&a);
            let (l, ds) = ce_grad(&s, &data.labels, i)?;
            loss += l;
            for (ci, &g) in ds.iter().enumerate() {
                let mut row = dv.row_mut(ci);
                for (k, &ak) in a.iter().enumerate() {
                    row[k] += g * ak;
                }
            }
            let da = self.head.v.t().dot(&ds);
            let dz = Array1::from_shape_fn(z.len(), |k| da[k] * erf_derivative(z[k]));
            for k in 0..dz.len() {
                let g = dz[k];
                let mut row = du.row_mut(k);
                for (j, &xj) in xhat.iter().enumerate() {
                    row[j] += g * xj;
                }
            }
            // dphi via xhat = phi / (sqrt(2) * norm(phi)); the norm is a
            // constant when the floor is active.
            let dxhat = self.head.u.t().dot(&dz);
            let dphi = if floored {
                dxhat.mapv(|v| v * scale)
            } else {
                let proj = phi.dot(&dxhat) / (norm * norm);
                Array1::from_shape_fn(phi.len(), |j| scale * (dxhat[j] - proj * phi[j]))
            };
            // Back through the ReLU stack.
            let mut dh = dphi;
            for li in (0..n_layers).rev() {
                let dpre = Array1::from_shape_fn(dh.len(), |j| {
                    if pres[li][j] > 0.0 {
                        dh[j]
                    } else {
                        0.0
                    }
                });
                let input = &acts[li];
                let dl = &mut dlayers[li];
                for r in 0..dpre.len() {
                    let g = dpre[r];
                    if g != 0.0 {
                        let mut row = dl.row_mut(r);
                        for (j, &xj) in input.iter().enumerate() {
                            row[j] += g * xj;
                        }
                    }
                }
                dh = self.feature_layers[li].w.t().dot(&dpre);
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for dl in dlayers.iter_mut() {
            dl.mapv_inplace(|g| g * inv);
        }
        du.mapv_inplace(|g| g * inv);
        dv.mapv_inplace(|g| g * inv);
        Ok((
            loss * inv,
            PartialGrad {
                dlayers,
                head: ShelGrad { du, dv },
            },
        ))
    }
}

/// Gradients of a partially-derandomised model.
#[derive(Debug, Clone)]
pub struct PartialGrad {
    pub dlayers: Vec<Array2<f64>>,
    pub head: ShelGrad,
}

/// Feed-forward ReLU network: linear output layer, ReLU between layers,
/// inputs bounded by `input_bound` in L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluModel {
    layers: Vec<Array2<f64>>,
    priors: Vec<Array2<f64>>,
    input_bound: f64,
}

impl ReluModel {
    pub fn new(
        layers: Vec<Array2<f64>>,
        priors: Vec<Array2<f64>>,
        input_bound: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer".to_string()));
        }
        if layers.len() != priors.len() {
            return Err(Error::domain(format!(
                "{} layers but {} priors",
                layers.len(),
                priors.len()
            )));
        }
        if !(input_bound > 0.0) {
            return Err(Error::domain(format!(
                "input bound {input_bound} must be > 0"
            )));
        }
        for i in 1..layers.len() {
            if layers[i].ncols() != layers[i - 1].nrows() {
                return Err(Error::domain(format!(
                    "layer {i} expects {} inputs, layer {} emits {}",
                    layers[i].ncols(),
                    i - 1,
                    layers[i - 1].nrows()
                )));
            }
        }
        for (i, (w, w0)) in layers.iter().zip(&priors).enumerate() {
            if w.dim() != w0.dim() {
                return Err(Error::domain(format!("prior {i} shape mismatch")));
            }
        }
        Ok(ReluModel {
            layers,
            priors,
            input_bound,
        })
    }

    /// Gaussian init at scale `1/sqrt(fan_in)` per layer; the init is the
    /// prior. `dims` runs `[input, hidden..., classes]`.
    pub fn init_random(dims: &[usize], input_bound: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::domain("need input and output dims".to_string()));
        }
        let mut rng = CounterRng::from_seed_tag(seed, "relu-init");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 1..dims.len() {
            let s = 1.0 / (dims[i - 1] as f64).sqrt();
            layers.push(Array2::from_shape_fn((dims[i], dims[i - 1]), |_| {
                s * rng.next_normal()
            }));
        }
        let priors = layers.clone();
        ReluModel::new(layers, priors, input_bound)
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.layers
    }

    pub fn priors(&self) -> &[Array2<f64>] {
        &self.priors
    }

    pub fn input_bound(&self) -> f64 {
        self.input_bound
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest dimension of any weight matrix (the unit cap `h`).
    pub fn max_units(&self) -> usize {
        self.layers
            .iter()
            .map(|w| w.nrows().max(w.ncols()))
            .max()
            .unwrap_or(0)
    }

    pub fn spectral_norms(&self) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .map(|w| crate::numcore::spectral_norm(w.view()))
            .collect()
    }

    /// Forward pass; errors when the input breaks the certified bound.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let n = l2_norm(x);
        if n > self.input_bound * (1.0 + 1e-9) {
            return Err(Error::domain(format!(
                "input norm {n} exceeds the certified bound {}",
                self.input_bound
            )));
        }
        Ok(relu_forward_with(&self.layers, x))
    }
}

/// ReLU forward pass over an explicit weight stack (used for perturbed
/// copies of a network).
pub fn relu_forward_with(layers: &[Array2<f64>], x: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut h = x.to_owned();
    for (i, w) in layers.iter().enumerate() {
        h = w.dot(&h);
        if i + 1 < layers.len() {
            h.mapv_inplace(|v| v.max(0.0));
        }
    }
    h
}

/// A sampled proxy for a SHEL network: `T` draws of (Gaussian-mixture
/// direction, ±1 output signs). Outputs live in `[-1, 1]^c` and average
/// to `F(x) / (V_inf * K)` over draws.
#[derive(Debug, Clone)]
pub struct ShelProxy {
    draws: Vec<(Array1<f64>, Vec<f64>)>,
}

impl ShelProxy {
    /// Evaluates `(1/T) sum_t sign(w_t . x) r_t`.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let c = self.draws[0].1.len();
        let mut out = Array1::<f64>::zeros(c);
        for (w, r) in &self.draws {
            let s = if w.dot(&x) >= 0.0 { 1.0 } else { -1.0 };
            for (o, &ri) in out.iter_mut().zip(r.iter()) {
                *o += s * ri;
            }
        }
        let inv = 1.0 / self.draws.len() as f64;
        out.mapv_inplace(|v| v * inv);
        out
    }

    pub fn t(&self) -> usize {
        self.draws.len()
    }
}

/// Samples the proxy distribution of a SHEL model: per draw, a mixture
/// component `k` uniform over units, `w ~ N(U_k, I)`, and sign vector
/// components with means `V_{ik} / V_inf`.
pub fn sample_shel_proxy(model: &ShelModel, t: usize, rng: &mut CounterRng) -> Result<ShelProxy> {
    if t == 0 {
        return Err(Error::domain("proxy needs T >= 1 draws".to_string()));
    }
    let v_inf = model.v_inf();
    if v_inf <= 0.0 {
        return Err(Error::Degenerate(
            "V_inf = 0: output weights are all zero".to_string(),
        ));
    }
    let k = model.width();
    let c = model.classes();
    let d = model.input_dim();
    let mut draws = Vec::with_capacity(t);
    for _ in 0..t {
        let unit = rng.next_index(k);
        let mut w = Array1::<f64>::zeros(d);
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = model.u[[unit, j]] + rng.next_normal();
        }
        let mut r = Vec::with_capacity(c);
        for ci in 0..c {
            r.push(rng.next_sign_with_mean(model.v[[ci, unit]] / v_inf));
        }
        draws.push((w, r));
    }
    Ok(ShelProxy { draws })
}

/// Anything that scores inputs; drives margin profiles and error rates.
pub trait Predictor {
    fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>>;
}

impl Predictor for LinearModel {
    fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(Array1::from_vec(vec![self.score(x)?]))
    }
}

impl Predictor for ShelModel {
    fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.forward(x)
    }
}

impl Predictor for PartialShelModel {
    fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x))
    }
}

impl Predictor for ReluModel {
    fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.forward(x)
    }
}

/// Margin of a score vector against a dataset's label at sample `i`.
pub fn sample_margin(scores: &Array1<f64>, labels: &Labels, i: usize) -> Result<f64> {
    match labels {
        Labels::Binary(y) => {
            if scores.len() != 1 {
                return Err(Error::domain(format!(
                    "binary labels need a single score, got {}",
                    scores.len()
                )));
            }
            binary_margin(scores[0], y[i])
        }
        Labels::Multiclass { classes, y } => {
            if scores.len() != *classes {
                return Err(Error::domain(format!(
                    "{} scores for {classes} classes",
                    scores.len()
                )));
            }
            multiclass_margin(scores.as_slice().expect("contiguous"), y[i] as usize)
        }
    }
}

/// Margin profile of a predictor on a dataset.
pub fn margin_profile<P: Predictor>(model: &P, data: &LabeledDataset) -> Result<MarginProfile> {
    let mut margins = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let scores = model.scores(data.sample(i))?;
        margins.push(sample_margin(&scores, &data.labels, i)?);
    }
    MarginProfile::new(margins)
}

/// 0-1 error rate (margin <= 0 counts as an error, ties included).
pub fn error_rate<P: Predictor>(model: &P, data: &LabeledDataset) -> Result<f64> {
    let mut errors = 0usize;
    for i in 0..data.len() {
        let scores = model.scores(data.sample(i))?;
        if sample_margin(&scores, &data.labels, i)? <= 0.0 {
            errors += 1;
        }
    }
    Ok(errors as f64 / data.len() as f64)
}
