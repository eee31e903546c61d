//! Trainable feature extractor and sigmoid class heads.
//!
//! The extractor is a multilayer perceptron: rectified-linear hidden layers,
//! a final linear layer producing `feature_dim` values, then L2
//! normalization. Class `y` scores `g_y(x) = sigmoid(w_y · phi(x))` with no
//! bias term.

use crate::error::{Error, Result};
use crate::math::{derive_seed, dot, norm, FeatureVector, RngStream, MIN_NORM};
use crate::repr::{LossSpec, OldClassTerm};

/// Sigmoid outputs are clamped to `[OUTPUT_CLAMP, 1 - OUTPUT_CLAMP]` inside logs.
pub const OUTPUT_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, feature_dim: usize) -> Result<Self> {
        let spec = NetSpec {
            input_dim,
            hidden,
            feature_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig("feature dimension must be >= 2".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, the final linear one included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// A dense layer `y = W x + b`; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn init(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Layer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| dot(row, x) + b),
        );
    }
}

/// Network parameters: feature layers plus one weight vector per observed
/// class. The same shape doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: NetSpec,
    pub layers: Vec<Layer>,
    pub class_weights: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Fresh feature layers, uniform in `±1/sqrt(fan_in)`, zero biases, no heads.
    pub fn init(spec: &NetSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::init(i, o, rng))
            .collect();
        Ok(ModelParams {
            spec: spec.clone(),
            layers,
            class_weights: Vec::new(),
        })
    }

    /// All-zero parameters of the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
            class_weights: vec![vec![0.0; self.spec.feature_dim]; self.class_weights.len()],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn feature_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.feature_param_count() + self.class_weights.len() * self.spec.feature_dim
    }

    /// Appends `count` heads, each uniform in `±1/sqrt(feature_dim)`.
    pub fn add_class_heads(&mut self, count: usize, rng: &mut RngStream) {
        let bound = 1.0 / (self.spec.feature_dim as f64).sqrt();
        for _ in 0..count {
            let w = (0..self.spec.feature_dim)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            self.class_weights.push(w);
        }
    }

    /// Flattened view in a fixed order: layers (weights then bias), then heads.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend(&l.weights);
            v.extend(&l.bias);
        }
        for w in &self.class_weights {
            v.extend(w);
        }
        v
    }

    /// Visits every parameter mutably in [`to_flat`](Self::to_flat) order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64, ParamKind)) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| f(w, ParamKind::FeatureWeight));
            l.bias.iter_mut().for_each(|b| f(b, ParamKind::FeatureBias));
        }
        for (y, w) in self.class_weights.iter_mut().enumerate() {
            w.iter_mut().for_each(|v| f(v, ParamKind::Head(y)));
        }
    }

    fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = 0;
        self.for_each_mut(|p, _| {
            if i == index {
                *p = value;
            }
            i += 1;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Shape {
                context: "network input",
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `phi(x)`: the L2-normalized output of the final feature layer.
    pub fn extract_features(&self, x: &[f64]) -> Result<FeatureVector> {
        self.check_input(x)?;
        let trace = self.forward(x);
        let n = norm(trace.pre_norm());
        if !(n >= MIN_NORM) || !n.is_finite() {
            return Err(Error::DegenerateVector { norm: n });
        }
        Ok(FeatureVector::from_unit(
            trace.pre_norm().iter().map(|v| v / n).collect(),
        ))
    }

    /// `g_y(x)` for every observed class.
    pub fn network_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.class_weights.is_empty() {
            return Err(Error::NoClasses);
        }
        let phi = self.extract_features(x)?;
        Ok(self.outputs_from_features(phi.as_slice()))
    }

    pub fn outputs_from_features(&self, phi: &[f64]) -> Vec<f64> {
        self.class_weights
            .iter()
            .map(|w| sigmoid(dot(w, phi)))
            .collect()
    }

    /// Keeps every intermediate activation for backprop.
    fn forward(&self, x: &[f64]) -> ForwardTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        ForwardTrace { acts }
    }
}

/// Anything that maps a raw sample to a unit feature vector.
pub trait FeatureMap {
    fn features(&self, x: &[f64]) -> Result<FeatureVector>;
}

impl FeatureMap for ModelParams {
    fn features(&self, x: &[f64]) -> Result<FeatureVector> {
        self.extract_features(x)
    }
}

impl<F> FeatureMap for F
where
    F: Fn(&[f64]) -> Result<FeatureVector>,
{
    fn features(&self, x: &[f64]) -> Result<FeatureVector> {
        self(x)
    }
}

/// Which group a parameter belongs to; used for weight decay and freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    FeatureWeight,
    FeatureBias,
    Head(usize),
}

struct ForwardTrace {
    /// `acts[0]` is the input; `acts[i]` the post-activation output of layer
    /// `i - 1`; the last entry is the pre-normalization feature vector.
    acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    fn pre_norm(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// One training sample as seen by the loss: raw input, label, and the
/// recorded old-class outputs (empty when no distillation is active).
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub label: usize,
    pub targets: &'a [f64],
}

/// Binary cross-entropy of output `g` against target `target`, with `g`
/// clamped inside the logs. Returns the loss and its derivative with respect
/// to the pre-activation (zero where the clamp is active).
fn bce_term(g: f64, target: f64) -> (f64, f64) {
    let clamped = g.clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP);
    let loss = -(target * clamped.ln() + (1.0 - target) * (1.0 - clamped).ln());
    let grad = if g > OUTPUT_CLAMP && g < 1.0 - OUTPUT_CLAMP {
        g - target
    } else {
        0.0
    };
    (loss, grad)
}

/// Per-class target for a sample, or `None` when the class contributes no term.
fn class_target(spec: &LossSpec, sample: &Sample<'_>, y: usize) -> Option<f64> {
    if y >= spec.new_start {
        return Some(if y == sample.label { 1.0 } else { 0.0 });
    }
    match spec.old_classes {
        OldClassTerm::Distill => Some(sample.targets[y]),
        OldClassTerm::HardLabels => Some(if y == sample.label { 1.0 } else { 0.0 }),
        OldClassTerm::Ignore => None,
    }
}

fn validate_batch(params: &ModelParams, batch: &[Sample<'_>], spec: &LossSpec) -> Result<()> {
    let t = params.num_classes();
    if t == 0 {
        return Err(Error::NoClasses);
    }
    if spec.num_classes != t || spec.new_start > t {
        return Err(Error::Shape {
            context: "loss class range",
            expected: t,
            got: spec.num_classes,
        });
    }
    for s in batch {
        params.check_input(s.input)?;
        if s.label >= t {
            return Err(Error::Shape {
                context: "sample label",
                expected: t,
                got: s.label,
            });
        }
        if spec.old_classes == OldClassTerm::Distill {
            if s.targets.len() != spec.new_start {
                return Err(Error::Shape {
                    context: "distillation targets",
                    expected: spec.new_start,
                    got: s.targets.len(),
                });
            }
            for (class, &value) in s.targets.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::InvalidTarget { class, value });
                }
            }
        }
    }
    Ok(())
}

/// Loss only, summed over the batch.
pub fn loss_value(params: &ModelParams, batch: &[Sample<'_>], spec: &LossSpec) -> Result<f64> {
    validate_batch(params, batch, spec)?;
    let mut total = 0.0;
    for s in batch {
        let phi = params.extract_features(s.input)?;
        let g = params.outputs_from_features(phi.as_slice());
        for (y, &gy) in g.iter().enumerate() {
            if let Some(target) = class_target(spec, s, y) {
                total += bce_term(gy, target).0;
            }
        }
    }
    Ok(total)
}

/// Summed loss over `batch` and its exact gradient with respect to every
/// parameter (no weight decay).
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: &[Sample<'_>],
    spec: &LossSpec,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    validate_batch(params, batch, spec)?;
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    let d = params.spec.feature_dim;
    let mut d_act: Vec<f64> = Vec::new();
    let mut d_prev: Vec<f64> = Vec::new();

    for s in batch {
        let trace = params.forward(s.input);
        let z = trace.pre_norm();
        let z_norm = norm(z);
        if !(z_norm >= MIN_NORM) || !z_norm.is_finite() {
            return Err(Error::DegenerateVector { norm: z_norm });
        }
        let phi: Vec<f64> = z.iter().map(|v| v / z_norm).collect();

        // Heads.
        let mut d_phi = vec![0.0; d];
        for (y, w) in params.class_weights.iter().enumerate() {
            let Some(target) = class_target(spec, s, y) else {
                continue;
            };
            let (l, da) = bce_term(sigmoid(dot(w, &phi)), target);
            total += l;
            if da != 0.0 {
                for (gw, p) in grad.class_weights[y].iter_mut().zip(&phi) {
                    *gw += da * p;
                }
                for (dp, wv) in d_phi.iter_mut().zip(w) {
                    *dp += da * wv;
                }
            }
        }

        // Through the normalization: dz = (I - phi phi^T) d_phi / ||z||.
        let proj = dot(&phi, &d_phi);
        d_act.clear();
        d_act.extend(
            d_phi
                .iter()
                .zip(&phi)
                .map(|(dp, p)| (dp - p * proj) / z_norm),
        );

        // Dense layers, last to first. `d_act` holds dL/d(pre-activation).
        for (li, layer) in params.layers.iter().enumerate().rev() {
            let input = &trace.acts[li];
            let g_layer = &mut grad.layers[li];
            for (o, &delta) in d_act.iter().enumerate() {
                if delta == 0.0 {
                    continue;
                }
                g_layer.bias[o] += delta;
                let row = &mut g_layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += delta * xi;
                }
            }
            if li == 0 {
                break;
            }
            d_prev.clear();
            d_prev.resize(layer.inputs, 0.0);
            for (o, &delta) in d_act.iter().enumerate() {
                if delta == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (dp, wv) in d_prev.iter_mut().zip(row) {
                    *dp += delta * wv;
                }
            }
            // ReLU mask of the previous layer's output.
            for (dp, a) in d_prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *dp = 0.0;
                }
            }
            std::mem::swap(&mut d_act, &mut d_prev);
        }
    }
    Ok((total, grad))
}

/// Central-difference gradient of an arbitrary scalar function of the parameters.
pub fn finite_diff_gradient_of(
    params: &ModelParams,
    epsilon: f64,
    mut f: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<ModelParams> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut estimate = Vec::with_capacity(base.len());
    for (i, &v) in base.iter().enumerate() {
        probe.set_flat(i, v + epsilon);
        let plus = f(&probe)?;
        probe.set_flat(i, v - epsilon);
        let minus = f(&probe)?;
        probe.set_flat(i, v);
        estimate.push((plus - minus) / (2.0 * epsilon));
    }
    let mut grad = params.zeros_like();
    let mut it = estimate.into_iter();
    grad.for_each_mut(|g, _| *g = it.next().expect("same shape"));
    Ok(grad)
}

/// Central-difference estimate of the gradient of [`loss_value`].
pub fn finite_diff_gradient(
    params: &ModelParams,
    batch: &[Sample<'_>],
    spec: &LossSpec,
    epsilon: f64,
) -> Result<ModelParams> {
    finite_diff_gradient_of(params, epsilon, |p| loss_value(p, batch, spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub base_learning_rate: f64,
    /// Epoch indices (0-based) at which the learning rate is divided.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    /// 70 epochs, minibatches of 128, rate 2.0 divided by 5 after 49 and 63
    /// epochs, weight decay 1e-5.
    fn default() -> Self {
        TrainConfig::with_epochs(70)
    }
}

impl TrainConfig {
    /// Default hyper-parameters with the drops placed at 7/10 and 9/10 of `epochs`.
    pub fn with_epochs(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            minibatch_size: 128,
            base_learning_rate: 2.0,
            lr_drop_epochs: vec![epochs * 7 / 10, epochs * 9 / 10],
            lr_drop_factor: 5.0,
            weight_decay: 1e-5,
            shuffle_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("minibatch size must be >= 1".into()));
        }
        if !(self.lr_drop_factor > 1.0) {
            return Err(Error::InvalidConfig("lr drop factor must be > 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be >= 0".into()));
        }
        if !(self.base_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| epoch >= e).count();
        self.base_learning_rate / self.lr_drop_factor.powi(drops as i32)
    }
}

/// Parameter groups excluded from SGD updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Freeze {
    pub features: bool,
    /// Heads with index below this are not updated.
    pub heads_below: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-sample loss of each epoch, accumulated over its minibatches.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD. Each step uses the batch-mean gradient plus coupled weight
/// decay on non-bias parameters.
pub fn sgd_train(
    params: ModelParams,
    data: &[Sample<'_>],
    cfg: &TrainConfig,
    spec: &LossSpec,
    freeze: Freeze,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let mut params = params;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut minibatch = Vec::with_capacity(cfg.minibatch_size);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::new(derive_seed(cfg.shuffle_seed, epoch as u64));
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        rng.shuffle(&mut order);
        let lr = cfg.learning_rate(epoch);
        let mut epoch_loss = 0.0;

        for chunk in order.chunks(cfg.minibatch_size) {
            minibatch.clear();
            minibatch.extend(chunk.iter().map(|&i| data[i]));
            let (loss, grad) = match loss_and_gradient(&params, &minibatch, spec) {
                Err(Error::DegenerateVector { norm }) if !norm.is_finite() => {
                    return Err(Error::Divergence { epoch, step })
                }
                r => r?,
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            epoch_loss += loss;
            let scale = 1.0 / minibatch.len() as f64;
            let mut grads = grad.to_flat().into_iter();
            params.for_each_mut(|p, kind| {
                let g = grads.next().expect("same shape") * scale;
                let frozen = match kind {
                    ParamKind::FeatureWeight | ParamKind::FeatureBias => freeze.features,
                    ParamKind::Head(y) => y < freeze.heads_below,
                };
                if frozen {
                    return;
                }
                let decay = match kind {
                    ParamKind::FeatureBias => 0.0,
                    _ => cfg.weight_decay * *p,
                };
                *p -= lr * (g + decay);
            });
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            step += 1;
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}
