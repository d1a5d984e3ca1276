//! Fully connected models with hand-written backpropagation.
//!
//! Parameters are laid out layer by layer: the weight matrix `w{l}` with
//! shape `[n_out, n_in]` in row-major order, followed by the bias `b{l}`.
//! Hidden layers apply the configured activation; the last layer is linear
//! and its outputs are either regression predictions (MSE) or logits
//! (cross-entropy). A cross-entropy model with a single output is treated
//! as having logits `[0, z]`, which is the sigmoid binary case written as a
//! two-class softmax.

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{PogmError, Result};
use crate::matrix::Matrix;
use crate::paramvec::{ParamVector, ShapeManifest};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `U(-s, s)` with `s = sqrt(6 / (n_in + n_out))`.
    UniformGlorot,
    /// `N(0, 1 / n_in)`.
    NormalScaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss_kind: LossKind,
    pub init: InitKind,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(PogmError::InvalidSpec(
                "need at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(PogmError::InvalidSpec("layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Number of classes a cross-entropy model predicts over.
    pub fn n_classes(&self) -> usize {
        self.output_dim().max(2)
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn manifest(&self) -> ShapeManifest {
        let mut m = ShapeManifest::new();
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            m.push(format!("w{l}"), vec![w[1], w[0]]);
            m.push(format!("b{l}"), vec![w[1]]);
        }
        m
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (weight offset, n_in, n_out); bias follows the weights.
        let mut out = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            out.push((off, w[0], w[1]));
            off += (w[0] + 1) * w[1];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Row-major `n_samples x output_dim` regression targets.
    Reals(Vec<f64>),
}

impl Targets {
    fn select(&self, idx: &[usize], width: usize) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Reals(r) => Targets::Reals(
                idx.iter()
                    .flat_map(|&i| r[i * width..(i + 1) * width].iter().copied())
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(features: Matrix, targets: Targets) -> Result<Self> {
        if features.rows() == 0 {
            return Err(PogmError::Empty("batch"));
        }
        let n = features.rows();
        let ok = match &targets {
            Targets::Classes(c) => c.len() == n,
            Targets::Reals(r) => r.len() % n == 0 && !r.is_empty(),
        };
        if !ok {
            return Err(PogmError::InvalidArgument(format!(
                "targets do not match {n} feature rows"
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn target_width(&self) -> usize {
        match &self.targets {
            Targets::Classes(_) => 1,
            Targets::Reals(r) => r.len() / self.len(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx, self.target_width()),
        }
    }

    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        let features = self.features.vstack(&other.features)?;
        let targets = match (&self.targets, &other.targets) {
            (Targets::Classes(a), Targets::Classes(b)) => {
                Targets::Classes(a.iter().chain(b).copied().collect())
            }
            (Targets::Reals(a), Targets::Reals(b)) => {
                Targets::Reals(a.iter().chain(b).copied().collect())
            }
            _ => return Err(PogmError::InvalidArgument("mixed target kinds".into())),
        };
        Batch::new(features, targets)
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.features.cols() != spec.input_dim() {
            return Err(PogmError::Dimension {
                expected: spec.input_dim(),
                got: self.features.cols(),
            });
        }
        match (&self.targets, spec.loss_kind) {
            (Targets::Classes(c), LossKind::CrossEntropy) => {
                if let Some(bad) = c.iter().find(|&&y| y >= spec.n_classes()) {
                    return Err(PogmError::InvalidArgument(format!(
                        "label {bad} out of range for {} classes",
                        spec.n_classes()
                    )));
                }
            }
            (Targets::Reals(r), LossKind::Mse) => {
                if r.len() != self.len() * spec.output_dim() {
                    return Err(PogmError::Dimension {
                        expected: self.len() * spec.output_dim(),
                        got: r.len(),
                    });
                }
            }
            _ => {
                return Err(PogmError::InvalidArgument(
                    "target kind does not match the loss".into(),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub manifest: ShapeManifest,
}

pub fn init_model(spec: &ModelSpec) -> Result<ModelState> {
    spec.validate()?;
    let mut rng = rng::stream(spec.init_seed, Stream::Init, 0);
    let mut params = Vec::with_capacity(spec.param_count());
    for (_, n_in, n_out) in spec.layer_offsets() {
        match spec.init {
            InitKind::UniformGlorot => {
                let s = (6.0 / (n_in + n_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
                params.extend((0..n_in * n_out).map(|_| dist.sample(&mut rng)));
            }
            InitKind::NormalScaled => {
                let dist = Normal::new(0.0, (1.0 / n_in as f64).sqrt()).expect("positive sd");
                params.extend((0..n_in * n_out).map(|_| dist.sample(&mut rng)));
            }
        }
        params.extend(std::iter::repeat_n(0.0, n_out));
    }
    ModelState::from_params(spec.clone(), ParamVector::new(params)?)
}

impl ModelState {
    pub fn from_params(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(PogmError::Dimension {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        let manifest = spec.manifest();
        Ok(Self {
            spec,
            params,
            manifest,
        })
    }

    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        loss_and_grad(&self.spec, self.params.as_slice(), batch)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        loss_only(&self.spec, self.params.as_slice(), batch)
    }

    /// Raw network outputs, one row per sample.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        check_features(&self.spec, features)?;
        let mut ws = Workspace::new(&self.spec);
        let mut out = Vec::with_capacity(features.rows() * self.spec.output_dim());
        for i in 0..features.rows() {
            ws.forward(&self.spec, self.params.as_slice(), features.row(i))?;
            out.extend_from_slice(ws.output());
        }
        Matrix::new(features.rows(), self.spec.output_dim(), out)
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        if self.spec.loss_kind != LossKind::CrossEntropy {
            return Err(PogmError::Unsupported(
                "class probabilities need a cross-entropy model".into(),
            ));
        }
        check_features(&self.spec, features)?;
        let mut ws = Workspace::new(&self.spec);
        let k = self.spec.n_classes();
        let mut out = Vec::with_capacity(features.rows() * k);
        let mut logits = vec![0.0; k];
        let mut probs = vec![0.0; k];
        for i in 0..features.rows() {
            ws.forward(&self.spec, self.params.as_slice(), features.row(i))?;
            class_logits(ws.output(), &mut logits);
            softmax(&logits, &mut probs);
            out.extend_from_slice(&probs);
        }
        Matrix::new(features.rows(), k, out)
    }

    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        let Targets::Classes(labels) = &batch.targets else {
            return Err(PogmError::Unsupported(
                "accuracy is undefined for regression targets".into(),
            ));
        };
        if self.spec.loss_kind != LossKind::CrossEntropy {
            return Err(PogmError::Unsupported(
                "accuracy is undefined for regression models".into(),
            ));
        }
        batch.check(&self.spec)?;
        let mut ws = Workspace::new(&self.spec);
        let mut logits = vec![0.0; self.spec.n_classes()];
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            ws.forward(&self.spec, self.params.as_slice(), batch.features.row(i))?;
            class_logits(ws.output(), &mut logits);
            if argmax(&logits) == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

fn check_features(spec: &ModelSpec, features: &Matrix) -> Result<()> {
    if features.cols() != spec.input_dim() {
        return Err(PogmError::Dimension {
            expected: spec.input_dim(),
            got: features.cols(),
        });
    }
    Ok(())
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn class_logits(output: &[f64], logits: &mut [f64]) {
    if output.len() == 1 {
        logits[0] = 0.0;
        logits[1] = output[0];
    } else {
        logits.copy_from_slice(output);
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Per-layer buffers reused across samples.
struct Workspace {
    // acts[0] is the input, acts[l + 1] the activated output of layer l
    // (the last entry holds the raw outputs).
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        let widest = *spec.layer_sizes.iter().max().unwrap();
        Self {
            acts: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            pre: spec.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
            logits: vec![0.0; spec.n_classes()],
            probs: vec![0.0; spec.n_classes()],
        }
    }

    fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn forward(&mut self, spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<()> {
        self.acts[0].copy_from_slice(x);
        let last = spec.n_layers() - 1;
        for (l, (off, n_in, n_out)) in spec.layer_offsets().into_iter().enumerate() {
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let z = &mut self.pre[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                z[o] = acc;
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(PogmError::NumericLayer {
                    layer: l,
                    message: "non-finite pre-activation".into(),
                });
            }
            let a = &mut after[0];
            if l == last {
                a.copy_from_slice(z);
            } else {
                for (ai, &zi) in a.iter_mut().zip(z.iter()) {
                    *ai = match spec.activation {
                        Activation::Relu => zi.max(0.0),
                        Activation::Tanh => zi.tanh(),
                    };
                }
            }
        }
        Ok(())
    }

    /// Loss of the last forward pass for one sample; fills `delta` with
    /// dLoss/dOutput when `want_delta` is set.
    fn sample_loss(&mut self, spec: &ModelSpec, target: SampleTarget<'_>, want_delta: bool) -> f64 {
        let out_dim = spec.output_dim();
        let output = self.acts.last().unwrap();
        match target {
            SampleTarget::Real(y) => {
                let mut loss = 0.0;
                for o in 0..out_dim {
                    let r = output[o] - y[o];
                    loss += r * r;
                    if want_delta {
                        self.delta[o] = 2.0 * r;
                    }
                }
                loss
            }
            SampleTarget::Class(y) => {
                class_logits(output, &mut self.logits);
                let loss = log_sum_exp(&self.logits) - self.logits[y];
                if want_delta {
                    softmax(&self.logits, &mut self.probs);
                    if out_dim == 1 {
                        self.delta[0] = self.probs[1] - if y == 1 { 1.0 } else { 0.0 };
                    } else {
                        for o in 0..out_dim {
                            self.delta[o] = self.probs[o] - if o == y { 1.0 } else { 0.0 };
                        }
                    }
                }
                loss
            }
        }
    }

    /// Accumulates `scale * dLoss/dParams` for the last forward pass into `grad`.
    fn backward(&mut self, spec: &ModelSpec, params: &[f64], scale: f64, grad: &mut [f64]) {
        let layers = spec.layer_offsets();
        let out_dim = spec.output_dim();
        for d in &mut self.delta[..out_dim] {
            *d *= scale;
        }
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            let input = &self.acts[l];
            let (gw, gb) = grad[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = self.delta[o];
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(input.iter()) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[off..off + n_in * n_out];
            let z_prev = &self.pre[l - 1];
            for i in 0..n_in {
                let mut acc = 0.0;
                for o in 0..n_out {
                    acc += w[o * n_in + i] * self.delta[o];
                }
                let deriv = match spec.activation {
                    Activation::Relu => {
                        if z_prev[i] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => {
                        let t = self.acts[l][i];
                        1.0 - t * t
                    }
                };
                self.delta_prev[i] = acc * deriv;
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[derive(Clone, Copy)]
enum SampleTarget<'a> {
    Class(usize),
    Real(&'a [f64]),
}

fn sample_target<'a>(batch: &'a Batch, i: usize, out_dim: usize) -> SampleTarget<'a> {
    match &batch.targets {
        Targets::Classes(c) => SampleTarget::Class(c[i]),
        Targets::Reals(r) => SampleTarget::Real(&r[i * out_dim..(i + 1) * out_dim]),
    }
}

/// Mean loss over `batch` and its exact gradient with respect to `params`.
pub fn loss_and_grad(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<(f64, ParamVector)> {
    if params.len() != spec.param_count() {
        return Err(PogmError::Dimension {
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    batch.check(spec)?;
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for i in 0..n {
        ws.forward(spec, params, batch.features.row(i))?;
        total += ws.sample_loss(spec, sample_target(batch, i, spec.output_dim()), true);
        ws.backward(spec, params, scale, &mut grad);
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(PogmError::NumericLayer {
            layer: spec.n_layers() - 1,
            message: "non-finite loss".into(),
        });
    }
    Ok((loss, ParamVector::new(grad)?))
}

pub fn loss_only(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<f64> {
    batch.check(spec)?;
    let mut ws = Workspace::new(spec);
    let mut total = 0.0;
    for i in 0..batch.len() {
        ws.forward(spec, params, batch.features.row(i))?;
        total += ws.sample_loss(spec, sample_target(batch, i, spec.output_dim()), false);
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(PogmError::NumericLayer {
            layer: spec.n_layers() - 1,
            message: "non-finite loss".into(),
        });
    }
    Ok(loss)
}

/// Central-difference estimate of the gradient at the listed coordinates.
///
/// Each coordinate `w` is perturbed by `h * max(1, |w|)`.
pub fn finite_diff_coords(
    model: &ModelState,
    batch: &Batch,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(PogmError::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut params = model.params.as_slice().to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let w = params[c];
        let step = h * w.abs().max(1.0);
        params[c] = w + step;
        let up = loss_only(&model.spec, &params, batch)?;
        params[c] = w - step;
        let down = loss_only(&model.spec, &params, batch)?;
        params[c] = w;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Relative disagreement between an analytic and a finite-difference
/// derivative. The denominator is floored at 1e-4 because central
/// differences in f64 carry roughly 1e-10 of absolute noise, which makes
/// relative error meaningless for near-zero coordinates.
pub fn gradient_check_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub fn finite_diff_grad(model: &ModelState, batch: &Batch, h: f64) -> Result<ParamVector> {
    let coords: Vec<usize> = (0..model.params.len()).collect();
    ParamVector::new(finite_diff_coords(model, batch, h, &coords)?)
}
