//! Selective weak-to-strong training.
//!
//! Each step scores the batch with the P(IK) head, routes confident (IK)
//! members to the model's own hardened prediction and the rest (IDK) to
//! graph-smoothed weak labels, then descends
//! `L = L_gen + lambda * L_ik`, where `L_ik` is computed on an interleaved
//! batch of auxiliary P(IK) examples.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Sample, SoftLabel};
use crate::error::{Error, Result};
use crate::learner::{BatchPlan, LearnerState, TrainConfig};
use crate::losses::{ConfParams, LossId};
use crate::pik::{build_pik_dataset, partition, Partition, PikExample};
use crate::scalar::Scalar;
use crate::smooth::{smooth_batch, GraphBatch, SmoothConfig, SmoothTraceRow};

/// Mixed into the training seed to derive the P(IK) batch stream.
const PIK_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectiveConfig {
    /// Partition threshold on the P(IK) score.
    pub gamma: f64,
    pub smooth: SmoothConfig,
    /// Weight of the P(IK) loss.
    pub lambda: f64,
    /// Hardening threshold for self-generated labels.
    pub self_label_threshold: f64,
    /// Use the raw strong probability instead of its hardened value.
    #[serde(default)]
    pub soft_self_labels: bool,
    /// Record per-node smoothing rows for the debug dump.
    #[serde(default)]
    pub trace_smoothing: bool,
}

impl Default for SelectiveConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            smooth: SmoothConfig::default(),
            lambda: 1.0,
            self_label_threshold: 0.5,
            soft_self_labels: false,
            trace_smoothing: false,
        }
    }
}

impl SelectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.smooth.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Invalid(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.self_label_threshold > 0.0 && self.self_label_threshold < 1.0) {
            return Err(Error::Invalid("self_label_threshold outside (0,1)".into()));
        }
        Ok(())
    }

    /// Ablation without the P(IK) classifier: no L_ik, everything IDK.
    pub fn without_ik(&self) -> Self {
        Self {
            lambda: 0.0,
            gamma: 0.999,
            ..self.clone()
        }
    }

    /// Ablation without graph smoothing: IDK targets are the raw priors.
    pub fn without_smoothing(&self) -> Self {
        Self {
            smooth: SmoothConfig {
                alpha: 1.0,
                ..self.smooth
            },
            ..self.clone()
        }
    }
}

/// Hardened (or, optionally, soft) current strong prediction.
pub fn self_label<F: Scalar>(state: &LearnerState<F>, sample: &Sample<F>, threshold: f64) -> Result<SoftLabel<F>> {
    let p = state.forward(&sample.features)?.p1;
    Ok(SoftLabel::hard(p > F::lit(threshold)))
}

/// Improved training targets for one batch.
#[derive(Debug, Clone)]
pub struct ImprovedBatch<'a, F> {
    pub pairs: Vec<(&'a Sample<F>, SoftLabel<F>)>,
    pub partition: Partition,
    pub pik_scores: Vec<F>,
    pub priors: Vec<SoftLabel<F>>,
}

impl<F: Scalar> ImprovedBatch<'_, F> {
    /// Builds the unselected batch: every target is the raw weak label.
    pub fn raw<'a>(batch: &[&'a Sample<F>], weak: &[SoftLabel<F>]) -> ImprovedBatch<'a, F> {
        ImprovedBatch {
            pairs: batch.iter().copied().zip(weak.iter().copied()).collect(),
            partition: Partition {
                d_ik: Vec::new(),
                d_idk: (0..batch.len()).collect(),
                gamma: 1.0,
            },
            pik_scores: Vec::new(),
            priors: weak.to_vec(),
        }
    }

    pub fn trace_rows(&self, step: u64) -> Vec<SmoothTraceRow> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, (s, target))| SmoothTraceRow {
                step,
                node_id: s.id.clone(),
                role: if self.partition.is_ik(i) { "IK" } else { "IDK" }.to_string(),
                pik_score: self.pik_scores.get(i).map_or(f64::NAN, |v| v.to_f64_lossy()),
                l_p: self.priors[i].p1().to_f64_lossy(),
                l_g: target.p1().to_f64_lossy(),
            })
            .collect()
    }
}

/// Scores, partitions, assigns priors (self-label for IK, weak label for
/// IDK), smooths the IDK members, and assembles the improved batch.
pub fn build_improved_batch<'a, F: Scalar>(
    state: &LearnerState<F>,
    batch: &[&'a Sample<F>],
    weak: &[SoftLabel<F>],
    config: &SelectiveConfig,
) -> Result<ImprovedBatch<'a, F>> {
    if batch.len() != weak.len() {
        return Err(Error::Invalid("batch and weak labels differ in length".into()));
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let preds = batch
        .iter()
        .map(|s| state.forward(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<F> = preds.iter().map(|p| p.pik).collect();
    let part = partition(&scores, config.gamma);
    let threshold = F::lit(config.self_label_threshold);
    let mut priors = weak.to_vec();
    for &i in &part.d_ik {
        priors[i] = if config.soft_self_labels {
            SoftLabel::new(preds[i].p1)?
        } else {
            SoftLabel::hard(preds[i].p1 > threshold)
        };
    }
    let mut targets = priors.clone();
    if !part.d_idk.is_empty() {
        let graph = GraphBatch::new(
            preds.into_iter().map(|p| p.embedding).collect(),
            priors.clone(),
            part.clone(),
        )?;
        for (&i, l) in part.d_idk.iter().zip(smooth_batch(&graph, &config.smooth)?) {
            targets[i] = l;
        }
    }
    Ok(ImprovedBatch {
        pairs: batch.iter().copied().zip(targets).collect(),
        partition: part,
        pik_scores: scores,
        priors,
    })
}

#[derive(Debug, Clone)]
pub struct JointEval<F> {
    pub total: F,
    pub l_gen: F,
    /// Zero when the P(IK) term is skipped.
    pub l_ik: F,
    pub grad: Vec<F>,
}

/// `L_gen + lambda * L_ik` with its gradient. With `lambda == 0` the P(IK)
/// term is not evaluated at all, so the result equals plain fine-tuning.
pub fn joint_loss<F: Scalar>(
    gen: &ImprovedBatch<'_, F>,
    pik_batch: &[&PikExample<F>],
    state: &LearnerState<F>,
    lambda: f64,
) -> Result<JointEval<F>> {
    if gen.pairs.is_empty() {
        return Err(Error::Empty("generalization batch"));
    }
    let pairs: Vec<(&[F], F)> = gen
        .pairs
        .iter()
        .map(|(s, t)| (s.features.as_slice(), t.p1()))
        .collect();
    let (l_gen, mut grad) = state.task_objective(&pairs, LossId::Ce, ConfParams::default())?;
    if lambda == 0.0 {
        return Ok(JointEval {
            total: l_gen,
            l_gen,
            l_ik: F::zero(),
            grad,
        });
    }
    if pik_batch.is_empty() {
        return Err(Error::Empty("P(IK) batch with lambda > 0"));
    }
    let ik: Vec<(&[F], u8)> = pik_batch
        .iter()
        .map(|e| (e.sample.features.as_slice(), e.ik_label))
        .collect();
    let (l_ik, g_ik) = state.pik_objective(&ik)?;
    let lam = F::lit(lambda);
    for (g, h) in grad.iter_mut().zip(&g_ik) {
        *g += lam * *h;
    }
    Ok(JointEval {
        total: l_gen + lam * l_ik,
        l_gen,
        l_ik,
        grad,
    })
}

/// One line of the per-step metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_gen: f64,
    pub l_ik: f64,
    pub ik_fraction: f64,
    pub mean_pik: f64,
}

pub fn write_metrics_log<W: Write>(metrics: &[StepMetrics], mut out: W) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n").map_err(|e| Error::io("<metrics log>", e))?;
    }
    Ok(())
}

pub fn save_metrics_log(metrics: &[StepMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_log(metrics, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone)]
pub struct SelectiveOutcome<F> {
    pub state: LearnerState<F>,
    pub metrics: Vec<StepMetrics>,
    pub trace: Vec<SmoothTraceRow>,
    /// Parameter snapshot after each step, only when requested.
    pub trajectory: Vec<Vec<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Targets {
    Selective,
    RawWeak,
}

/// Cycles through the P(IK) examples in seeded shuffled epochs.
struct PikStream<'a, F> {
    examples: &'a [PikExample<F>],
    plan: Option<BatchPlan>,
    queue: std::vec::IntoIter<Vec<usize>>,
}

impl<'a, F> PikStream<'a, F> {
    fn new(examples: &'a [PikExample<F>], train: &TrainConfig) -> Self {
        let plan = (!examples.is_empty()).then(|| {
            BatchPlan::new(
                examples.len(),
                &TrainConfig {
                    seed: train.seed ^ PIK_STREAM,
                    holdout_fraction: 0.0,
                    ..train.clone()
                },
            )
        });
        Self {
            examples,
            plan,
            queue: Vec::new().into_iter(),
        }
    }

    fn next_batch(&mut self) -> Vec<&'a PikExample<F>> {
        let Some(plan) = self.plan.as_mut() else {
            return Vec::new();
        };
        let idx = match self.queue.next() {
            Some(b) => b,
            None => {
                self.queue = plan.epoch().into_iter();
                self.queue.next().expect("nonempty example set")
            }
        };
        idx.into_iter().map(|i| &self.examples[i]).collect()
    }
}

/// Options that only affect what is recorded.
#[derive(Debug, Clone, Copy, Default)]
pub struct Recording {
    pub trajectory: bool,
}

fn run_joint<F: Scalar>(
    init: &LearnerState<F>,
    strong_train: &Corpus<F>,
    pik_corpus: &Corpus<F>,
    config: &SelectiveConfig,
    train: &TrainConfig,
    mode: Targets,
    rec: Recording,
) -> Result<SelectiveOutcome<F>> {
    config.validate()?;
    train.validate()?;
    if strong_train.is_empty() {
        return Err(Error::Empty("strong training corpus"));
    }
    let weak = strong_train.aligned_weak_labels()?;
    let examples = if config.lambda > 0.0 {
        if pik_corpus.is_empty() {
            return Err(Error::Empty("P(IK) corpus with lambda > 0"));
        }
        build_pik_dataset(init, pik_corpus)?
    } else {
        Vec::new()
    };
    let samples = strong_train.samples();
    let mut state = init.clone();
    let lr = F::lit(train.learning_rate);
    let mut plan = BatchPlan::new(samples.len(), train);
    let mut pik_stream = PikStream::new(&examples, train);
    let mut out = SelectiveOutcome {
        state: init.clone(),
        metrics: Vec::new(),
        trace: Vec::new(),
        trajectory: Vec::new(),
    };
    for _ in 0..train.epochs {
        for idx in plan.epoch() {
            let batch: Vec<&Sample<F>> = idx.iter().map(|&i| &samples[i]).collect();
            let batch_weak: Vec<SoftLabel<F>> = idx.iter().map(|&i| weak[i]).collect();
            let improved = match mode {
                Targets::Selective => build_improved_batch(&state, &batch, &batch_weak, config)?,
                Targets::RawWeak => ImprovedBatch::raw(&batch, &batch_weak),
            };
            let pik_batch = if config.lambda > 0.0 {
                pik_stream.next_batch()
            } else {
                Vec::new()
            };
            let eval = joint_loss(&improved, &pik_batch, &state, config.lambda)?;
            if !eval.total.is_finite() {
                return Err(Error::NonFinite {
                    step: state.step_count(),
                    detail: format!("L_gen = {}, L_ik = {}", eval.l_gen, eval.l_ik),
                });
            }
            let step = state.step_count() + 1;
            let mean_pik = if improved.pik_scores.is_empty() {
                f64::NAN
            } else {
                improved.pik_scores.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / improved.pik_scores.len() as f64
            };
            out.metrics.push(StepMetrics {
                step,
                l_gen: eval.l_gen.to_f64_lossy(),
                l_ik: eval.l_ik.to_f64_lossy(),
                ik_fraction: improved.partition.d_ik.len() as f64 / batch.len() as f64,
                mean_pik,
            });
            if config.trace_smoothing {
                out.trace.extend(improved.trace_rows(step));
            }
            state.apply_gradient(&eval.grad, lr);
            if rec.trajectory {
                out.trajectory.push(state.params().to_vec());
            }
        }
    }
    out.state = state;
    Ok(out)
}

/// The full selective method.
pub fn train_selective<F: Scalar>(
    init: &LearnerState<F>,
    strong_train: &Corpus<F>,
    pik_corpus: &Corpus<F>,
    config: &SelectiveConfig,
    train: &TrainConfig,
) -> Result<SelectiveOutcome<F>> {
    run_joint(init, strong_train, pik_corpus, config, train, Targets::Selective, Recording::default())
}

/// Multi-task variant: same joint loss, but the task head always trains on
/// the raw weak labels.
pub fn train_mtl_variant<F: Scalar>(
    init: &LearnerState<F>,
    strong_train: &Corpus<F>,
    pik_corpus: &Corpus<F>,
    config: &SelectiveConfig,
    train: &TrainConfig,
) -> Result<SelectiveOutcome<F>> {
    run_joint(init, strong_train, pik_corpus, config, train, Targets::RawWeak, Recording::default())
}

/// [`train_selective`] / [`train_mtl_variant`] with recording options.
pub fn train_recorded<F: Scalar>(
    init: &LearnerState<F>,
    strong_train: &Corpus<F>,
    pik_corpus: &Corpus<F>,
    config: &SelectiveConfig,
    train: &TrainConfig,
    selective: bool,
    rec: Recording,
) -> Result<SelectiveOutcome<F>> {
    let mode = if selective { Targets::Selective } else { Targets::RawWeak };
    run_joint(init, strong_train, pik_corpus, config, train, mode, rec)
}

/// P(IK)-only training: `L_ik` alone, whole model updated.
pub fn train_pik_only<F: Scalar>(
    init: &LearnerState<F>,
    examples: &[PikExample<F>],
    train: &TrainConfig,
) -> Result<LearnerState<F>> {
    train.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("P(IK) examples"));
    }
    let mut state = init.clone();
    let lr = F::lit(train.learning_rate);
    let mut plan = BatchPlan::new(examples.len(), &TrainConfig {
        holdout_fraction: 0.0,
        ..train.clone()
    });
    for _ in 0..train.epochs {
        for idx in plan.epoch() {
            let batch: Vec<(&[F], u8)> = idx
                .iter()
                .map(|&i| (examples[i].sample.features.as_slice(), examples[i].ik_label))
                .collect();
            let (value, grad) = state.pik_objective(&batch)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step: state.step_count(),
                    detail: format!("L_ik = {value}"),
                });
            }
            state.apply_gradient(&grad, lr);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{CapacityTier, LearnerSpec};

    fn state() -> LearnerState<f64> {
        LearnerState::init(LearnerSpec::mlp(2, &[5], CapacityTier::Strong, 11)).unwrap()
    }

    fn sample(i: usize, x: [f64; 2]) -> Sample<f64> {
        Sample::new(format!("s{i}"), format!("s{i}"), x.to_vec(), (i % 2) as u8).unwrap()
    }

    #[test]
    fn self_label_is_hard_and_strict() {
        let zero = LearnerState::<f64>::zeroed(LearnerSpec::linear(2, CapacityTier::Strong, 0)).unwrap();
        assert_eq!(self_label(&zero, &sample(0, [1.0, 1.0]), 0.5).unwrap().p1(), 0.0);
        assert_eq!(self_label(&zero, &sample(0, [1.0, 1.0]), 0.4).unwrap().p1(), 1.0);
    }

    #[test]
    fn all_idk_without_smoothing_keeps_weak_labels() {
        let s = state();
        let samples: Vec<_> = (0..6).map(|i| sample(i, [i as f64 * 0.3, -0.2])).collect();
        let refs: Vec<&Sample<f64>> = samples.iter().collect();
        let weak: Vec<_> = (0..6).map(|i| SoftLabel::new(0.1 * i as f64).unwrap()).collect();
        let cfg = SelectiveConfig::default().without_ik().without_smoothing();
        let m = build_improved_batch(&s, &refs, &weak, &cfg).unwrap();
        assert!(m.partition.d_ik.is_empty());
        for ((_, t), w) in m.pairs.iter().zip(&weak) {
            assert_eq!(t, w);
        }
    }

    #[test]
    fn full_ik_batch_ignores_weak_labels() {
        let s = state();
        let samples: Vec<_> = (0..4).map(|i| sample(i, [0.5, i as f64])).collect();
        let refs: Vec<&Sample<f64>> = samples.iter().collect();
        let weak = vec![SoftLabel::new(0.5).unwrap(); 4];
        let cfg = SelectiveConfig {
            gamma: 1e-9,
            ..SelectiveConfig::default()
        };
        let m = build_improved_batch(&s, &refs, &weak, &cfg).unwrap();
        assert_eq!(m.partition.d_ik.len(), 4);
        for (smp, t) in &m.pairs {
            assert_eq!(*t, self_label(&s, smp, 0.5).unwrap());
        }
    }

    #[test]
    fn lambda_zero_is_l_gen() {
        let s = state();
        let samples: Vec<_> = (0..3).map(|i| sample(i, [i as f64, 1.0])).collect();
        let refs: Vec<&Sample<f64>> = samples.iter().collect();
        let weak = vec![SoftLabel::new(0.7).unwrap(); 3];
        let m = ImprovedBatch::raw(&refs, &weak);
        let e = joint_loss(&m, &[], &s, 0.0).unwrap();
        assert_eq!(e.total, e.l_gen);
        assert!(joint_loss(&m, &[], &s, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SelectiveConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(SelectiveConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(SelectiveConfig::default().validate().is_ok());
    }
}
