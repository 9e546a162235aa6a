//! Feed-forward binary classifier with an explicit embedding layer and two
//! linear two-logit heads: the task head `f(x)` and the P(IK) head.
//!
//! Parameters live in one flat vector; [`Layout`] maps layers onto it. The
//! same layout is used for gradients, so an SGD step is a single zip.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Sample, SoftLabel};
use crate::error::{Error, Result};
use crate::losses::{self, ConfParams, LossId};
use crate::scalar::{two_class_p1, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacityTier {
    Weak,
    Strong,
}

/// Hidden-layer nonlinearity. Only the smooth saturating `tanh` is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub input_dimension: usize,
    /// Empty means a linear model over the (visible) raw features.
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub capacity_tier: CapacityTier,
    #[serde(default)]
    pub activation: Activation,
    /// Only the first `k` features are seen when set (feature masking).
    #[serde(default)]
    pub visible_features: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn linear(input_dimension: usize, tier: CapacityTier, seed: u64) -> Self {
        Self {
            input_dimension,
            hidden_widths: Vec::new(),
            capacity_tier: tier,
            activation: Activation::Tanh,
            visible_features: None,
            seed,
        }
    }

    pub fn mlp(input_dimension: usize, hidden: &[usize], tier: CapacityTier, seed: u64) -> Self {
        Self {
            hidden_widths: hidden.to_vec(),
            ..Self::linear(input_dimension, tier, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Width of the input actually consumed by the first layer.
    pub fn visible_dimension(&self) -> usize {
        self.visible_features
            .map_or(self.input_dimension, |k| k.min(self.input_dimension))
    }

    pub fn embedding_dimension(&self) -> usize {
        self.hidden_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.visible_dimension())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dimension == 0 {
            return Err(Error::Invalid("learner input_dimension must be positive".into()));
        }
        if self.visible_features == Some(0) {
            return Err(Error::Invalid("visible_features must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    hidden: Vec<LayerSlot>,
    task: LayerSlot,
    pik: LayerSlot,
    len: usize,
}

impl Layout {
    pub fn new(spec: &LearnerSpec) -> Self {
        let mut off = 0;
        let mut slot = |inputs: usize, outputs: usize| {
            let s = LayerSlot {
                w: off,
                b: off + inputs * outputs,
                inputs,
                outputs,
            };
            off += inputs * outputs + outputs;
            s
        };
        let mut width = spec.visible_dimension();
        let mut hidden = Vec::with_capacity(spec.hidden_widths.len());
        for &h in &spec.hidden_widths {
            hidden.push(slot(width, h));
            width = h;
        }
        let task = slot(width, 2);
        let pik = slot(width, 2);
        Self {
            hidden,
            task,
            pik,
            len: off,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of parameters in one output head.
    pub fn head_len(&self) -> usize {
        self.task.inputs * 2 + 2
    }

    /// Range of the backbone (hidden-layer) parameters.
    pub fn backbone(&self) -> std::ops::Range<usize> {
        0..self.task.w
    }

    pub fn task_head(&self) -> std::ops::Range<usize> {
        self.task.w..self.pik.w
    }

    pub fn pik_head(&self) -> std::ops::Range<usize> {
        self.pik.w..self.len
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F> {
    pub p1: F,
    pub pik: F,
    pub embedding: Vec<F>,
    pub task_logits: [F; 2],
    pub pik_logits: [F; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState<F> {
    spec: LearnerSpec,
    #[serde(skip)]
    layout: Option<Layout>,
    params: Vec<F>,
    step_count: u64,
}

fn affine<F: Scalar>(params: &[F], slot: LayerSlot, input: &[F], out: &mut Vec<F>) {
    out.clear();
    let w = &params[slot.w..slot.b];
    let b = &params[slot.b..slot.b + slot.outputs];
    for o in 0..slot.outputs {
        let row = &w[o * slot.inputs..(o + 1) * slot.inputs];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += *wi * *xi;
        }
        out.push(acc);
    }
}

/// Activations kept for backpropagation. `acts[0]` is the visible input,
/// the last entry is the embedding.
struct Trace<F> {
    acts: Vec<Vec<F>>,
    task_logits: [F; 2],
    pik_logits: [F; 2],
}

impl<F: Scalar> LearnerState<F> {
    /// Seeded Glorot-uniform initialization; biases start at zero.
    pub fn init(spec: LearnerSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut params = vec![F::zero(); layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let slots = layout.hidden.iter().chain([&layout.task, &layout.pik]);
        for slot in slots {
            let limit = (6.0 / (slot.inputs + slot.outputs) as f64).sqrt();
            for p in &mut params[slot.w..slot.b] {
                *p = F::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(Self {
            spec,
            layout: Some(layout),
            params,
            step_count: 0,
        })
    }

    /// All parameters zero.
    pub fn zeroed(spec: LearnerSpec) -> Result<Self> {
        let mut s = Self::init(spec)?;
        s.params.iter_mut().for_each(|p| *p = F::zero());
        Ok(s)
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        self.layout.as_ref().expect("layout is rebuilt on construction and load")
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_dim(&self, features: &[F]) -> Result<()> {
        if features.len() != self.spec.input_dimension {
            return Err(Error::Dimension {
                id: "<features>".into(),
                expected: self.spec.input_dimension,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, features: &[F]) -> Trace<F> {
        let layout = self.layout();
        let mut acts = Vec::with_capacity(layout.hidden.len() + 1);
        acts.push(features[..self.spec.visible_dimension()].to_vec());
        for slot in &layout.hidden {
            let mut out = Vec::with_capacity(slot.outputs);
            affine(&self.params, *slot, acts.last().unwrap(), &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(out);
        }
        let emb = acts.last().unwrap();
        let mut t = Vec::with_capacity(2);
        affine(&self.params, layout.task, emb, &mut t);
        let mut k = Vec::with_capacity(2);
        affine(&self.params, layout.pik, emb, &mut k);
        Trace {
            acts,
            task_logits: [t[0], t[1]],
            pik_logits: [k[0], k[1]],
        }
    }

    pub fn forward(&self, features: &[F]) -> Result<Prediction<F>> {
        self.check_dim(features)?;
        let tr = self.trace(features);
        Ok(Prediction {
            p1: two_class_p1(tr.task_logits),
            pik: two_class_p1(tr.pik_logits),
            embedding: tr.acts.last().unwrap().clone(),
            task_logits: tr.task_logits,
            pik_logits: tr.pik_logits,
        })
    }

    /// Forward pass over samples; panics are avoided by validating up front.
    pub fn predict_all(&self, samples: &[Sample<F>]) -> Result<Vec<Prediction<F>>> {
        samples.iter().map(|s| self.forward(&s.features)).collect()
    }

    /// Adds the gradient of one sample's loss into `grad`, given the loss
    /// derivatives with respect to each head's logits.
    fn backprop(&self, tr: &Trace<F>, d_task: Option<[F; 2]>, d_pik: Option<[F; 2]>, grad: &mut [F]) {
        let layout = self.layout();
        let emb = tr.acts.last().unwrap();
        let mut d_act = vec![F::zero(); emb.len()];
        for (slot, d) in [(layout.task, d_task), (layout.pik, d_pik)] {
            let Some(d) = d else { continue };
            for (o, &dl) in d.iter().enumerate() {
                let row = slot.w + o * slot.inputs;
                for i in 0..slot.inputs {
                    grad[row + i] += dl * emb[i];
                    d_act[i] += dl * self.params[row + i];
                }
                grad[slot.b + o] += dl;
            }
        }
        for (l, slot) in layout.hidden.iter().enumerate().rev() {
            let out = &tr.acts[l + 1];
            let input = &tr.acts[l];
            let d_pre: Vec<F> = d_act
                .iter()
                .zip(out)
                .map(|(&d, &a)| d * (F::one() - a * a))
                .collect();
            let mut d_in = vec![F::zero(); slot.inputs];
            for (o, &dp) in d_pre.iter().enumerate() {
                let row = slot.w + o * slot.inputs;
                for i in 0..slot.inputs {
                    grad[row + i] += dp * input[i];
                    d_in[i] += dp * self.params[row + i];
                }
                grad[slot.b + o] += dp;
            }
            d_act = d_in;
        }
    }

    /// Mean task-head loss over `(features, target)` pairs and its
    /// parameter gradient.
    pub fn task_objective(
        &self,
        batch: &[(&[F], F)],
        loss: LossId,
        conf: ConfParams,
    ) -> Result<(F, Vec<F>)> {
        let mut grad = vec![F::zero(); self.params.len()];
        let mut total = F::zero();
        for (x, target) in batch {
            self.check_dim(x)?;
            let tr = self.trace(x);
            let e = losses::evaluate(loss, conf, two_class_p1(tr.task_logits), *target);
            total += e.value;
            self.backprop(&tr, Some(e.d_logits), None, &mut grad);
        }
        Ok(scale_mean(total, grad, batch.len()))
    }

    /// Mean P(IK)-head cross-entropy against 0/1 labels, with gradient.
    pub fn pik_objective(&self, batch: &[(&[F], u8)]) -> Result<(F, Vec<F>)> {
        let mut grad = vec![F::zero(); self.params.len()];
        let mut total = F::zero();
        for (x, label) in batch {
            self.check_dim(x)?;
            let tr = self.trace(x);
            let target = if *label == 1 { F::one() } else { F::zero() };
            let e = losses::ce_soft(two_class_p1(tr.pik_logits), target);
            total += e.value;
            self.backprop(&tr, None, Some(e.d_logits), &mut grad);
        }
        Ok(scale_mean(total, grad, batch.len()))
    }

    /// Plain gradient-descent step.
    pub fn apply_gradient(&mut self, grad: &[F], learning_rate: F) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= learning_rate * *g;
        }
        self.step_count += 1;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            scalar: F::NAME.to_string(),
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| p.to_f64_lossy()).collect(),
            step_count: self.step_count,
        };
        let text = serde_json::to_string(&ck)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.spec.validate()?;
        let layout = Layout::new(&ck.spec);
        if ck.params.len() != layout.len() {
            return Err(Error::Invalid(format!(
                "checkpoint {}: {} parameters, spec needs {}",
                path.display(),
                ck.params.len(),
                layout.len()
            )));
        }
        if ck.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("checkpoint holds non-finite parameters".into()));
        }
        Ok(Self {
            spec: ck.spec,
            layout: Some(layout),
            params: ck.params.into_iter().map(F::lit).collect(),
            step_count: ck.step_count,
        })
    }
}

fn scale_mean<F: Scalar>(total: F, mut grad: Vec<F>, n: usize) -> (F, Vec<F>) {
    if n == 0 {
        return (F::zero(), grad);
    }
    let inv = F::one() / F::lit(n as f64);
    grad.iter_mut().for_each(|g| *g *= inv);
    (total * inv, grad)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    scalar: String,
    spec: LearnerSpec,
    params: Vec<f64>,
    step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossId,
    #[serde(default)]
    pub conf: ConfParams,
    /// Fraction of the training samples held out for per-epoch loss reports.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_holdout() -> f64 {
    0.05
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
            loss: LossId::Ce,
            conf: ConfParams::default(),
            holdout_fraction: default_holdout(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Invalid("holdout_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.conf.alpha) || !(self.conf.t > 0.0 && self.conf.t < 1.0) {
            return Err(Error::Invalid("conf.alpha must lie in [0,1] and conf.t in (0,1)".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Seeded holdout selection and per-epoch shuffling. Every training loop
/// uses it, and equal seeds give equal batch orders.
#[derive(Debug)]
pub struct BatchPlan {
    rng: ChaCha8Rng,
    train: Vec<usize>,
    holdout: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_hold = ((n as f64) * config.holdout_fraction).floor() as usize;
        let n_hold = n_hold.min(n.saturating_sub(1));
        let holdout = order.split_off(n - n_hold);
        Self {
            rng,
            train: order,
            holdout,
            batch_size: config.batch_size,
        }
    }

    pub fn holdout(&self) -> &[usize] {
        &self.holdout
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    /// Reshuffles the training indices and returns one epoch of batches.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.train.shuffle(&mut self.rng);
        self.train.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub state: LearnerState<F>,
    /// Mean loss on the holdout slice after each epoch (empty slice → NaN).
    pub holdout_loss: Vec<f64>,
    /// Parameter snapshot after each step, only when requested.
    pub trajectory: Vec<Vec<F>>,
}

pub(crate) fn holdout_loss<F: Scalar>(
    state: &LearnerState<F>,
    samples: &[Sample<F>],
    targets: &[SoftLabel<F>],
    idx: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let batch: Vec<(&[F], F)> = idx
        .iter()
        .map(|&i| (samples[i].features.as_slice(), targets[i].p1()))
        .collect();
    let (v, _) = state.task_objective(&batch, config.loss, config.conf)?;
    Ok(v.to_f64_lossy())
}

/// Mini-batch gradient descent of the task head on per-sample targets.
pub fn train<F: Scalar>(
    init: &LearnerState<F>,
    samples: &[Sample<F>],
    targets: &[SoftLabel<F>],
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    train_impl(init, samples, targets, config, false)
}

/// [`train`], also recording the parameters after every step.
pub fn train_with_trajectory<F: Scalar>(
    init: &LearnerState<F>,
    samples: &[Sample<F>],
    targets: &[SoftLabel<F>],
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    train_impl(init, samples, targets, config, true)
}

fn train_impl<F: Scalar>(
    init: &LearnerState<F>,
    samples: &[Sample<F>],
    targets: &[SoftLabel<F>],
    config: &TrainConfig,
    record: bool,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if samples.len() != targets.len() {
        return Err(Error::Invalid("samples and targets differ in length".into()));
    }
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut state = init.clone();
    let lr = F::lit(config.learning_rate);
    let mut plan = BatchPlan::new(samples.len(), config);
    let mut report = Vec::with_capacity(config.epochs);
    let mut trajectory = Vec::new();
    for _ in 0..config.epochs {
        for batch in plan.epoch() {
            let pairs: Vec<(&[F], F)> = batch
                .iter()
                .map(|&i| (samples[i].features.as_slice(), targets[i].p1()))
                .collect();
            let (value, grad) = state.task_objective(&pairs, config.loss, config.conf)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step: state.step_count,
                    detail: format!("{} loss = {value}", config.loss.as_str()),
                });
            }
            state.apply_gradient(&grad, lr);
            if record {
                trajectory.push(state.params.clone());
            }
        }
        report.push(holdout_loss(&state, samples, targets, plan.holdout(), config)?);
    }
    Ok(TrainOutcome {
        state,
        holdout_loss: report,
        trajectory,
    })
}

/// Trains on the gold labels of a corpus.
pub fn train_on_gold<F: Scalar>(
    init: &LearnerState<F>,
    corpus: &Corpus<F>,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    train(init, corpus.samples(), &corpus.gold_targets(), config)
}

/// Fraction of samples where `p1 > 0.5` matches the gold label.
pub fn evaluate_accuracy<F: Scalar>(state: &LearnerState<F>, samples: &[Sample<F>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let half = F::lit(0.5);
    let mut correct = 0usize;
    for s in samples {
        let p = state.forward(&s.features)?;
        if u8::from(p.p1 > half) == s.gold_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
