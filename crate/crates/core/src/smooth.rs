//! Per-batch graph smoothing of weak labels.
//!
//! Every batch member is a node of a fully connected graph whose edge
//! weights are a temperature softmax of embedding dot products (the node
//! itself included). An IDK node's refined label is the convex combination
//!
//! ```text
//! l_g(x) = alpha * l_p(x) + (1 - alpha) * sum_j a_j * l_p(x_j)
//! ```
//!
//! which is the minimizer of the squared-distance objective evaluated by
//! [`smooth_oracle`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SoftLabel;
use crate::error::{Error, Result};
use crate::pik::Partition;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothConfig {
    pub alpha: f64,
    pub tau: f64,
    /// Unit-normalize embeddings before taking dot products.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            tau: 0.1,
            normalize: false,
        }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("smoothing alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Invalid(format!("smoothing tau {} must be > 0", self.tau)));
        }
        Ok(())
    }
}

/// Embeddings, prior labels and IK/IDK partition of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch<F> {
    pub embeddings: Vec<Vec<F>>,
    pub priors: Vec<SoftLabel<F>>,
    pub partition: Partition,
}

impl<F: Scalar> GraphBatch<F> {
    pub fn new(embeddings: Vec<Vec<F>>, priors: Vec<SoftLabel<F>>, partition: Partition) -> Result<Self> {
        let n = embeddings.len();
        if n == 0 {
            return Err(Error::Empty("graph batch"));
        }
        if priors.len() != n || partition.len() != n {
            return Err(Error::Invalid(format!(
                "graph batch misaligned: {n} embeddings, {} priors, partition over {}",
                priors.len(),
                partition.len()
            )));
        }
        let dim = embeddings[0].len();
        if embeddings.iter().any(|z| z.len() != dim) {
            return Err(Error::Invalid("graph batch embeddings differ in length".into()));
        }
        Ok(Self {
            embeddings,
            priors,
            partition,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (x, y)| acc + *x * *y)
}

fn unit<F: Scalar>(z: &[F]) -> Vec<F> {
    let n = dot(z, z).sqrt();
    if n > F::zero() {
        z.iter().map(|v| *v / n).collect()
    } else {
        z.to_vec()
    }
}

/// Softmax over `z_i · z_j / tau` for all nodes `j`, with max subtraction.
pub fn similarity_weights<F: Scalar>(i: usize, batch: &GraphBatch<F>, tau: f64) -> Vec<F> {
    similarity_weights_with(i, &batch.embeddings, tau)
}

fn similarity_weights_with<F: Scalar>(i: usize, embeddings: &[Vec<F>], tau: f64) -> Vec<F> {
    let tau = F::lit(tau);
    let zi = &embeddings[i];
    let scores: Vec<F> = embeddings.iter().map(|zj| dot(zi, zj) / tau).collect();
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = scores.iter().map(|s| (*s - max).exp()).collect();
    let z: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn prepared<F: Scalar>(batch: &GraphBatch<F>, config: &SmoothConfig) -> Option<Vec<Vec<F>>> {
    config
        .normalize
        .then(|| batch.embeddings.iter().map(|z| unit(z)).collect())
}

fn combine<F: Scalar>(i: usize, priors: &[SoftLabel<F>], weights: &[F], alpha: f64) -> SoftLabel<F> {
    let alpha = F::lit(alpha);
    let neighbor: F = weights
        .iter()
        .zip(priors)
        .map(|(a, l)| *a * l.p1())
        .sum();
    let v = alpha * priors[i].p1() + (F::one() - alpha) * neighbor;
    SoftLabel::new(v.max(F::zero()).min(F::one())).expect("clamped into [0, 1]")
}

/// Graph-smoothed label of IDK node `i`.
pub fn smooth_label<F: Scalar>(i: usize, batch: &GraphBatch<F>, config: &SmoothConfig) -> Result<SoftLabel<F>> {
    config.validate()?;
    if !batch.partition.d_idk.contains(&i) {
        return Err(Error::Invalid(format!("node {i} is not in the IDK set")));
    }
    let emb = prepared(batch, config);
    let weights = similarity_weights_with(i, emb.as_deref().unwrap_or(&batch.embeddings), config.tau);
    Ok(combine(i, &batch.priors, &weights, config.alpha))
}

/// Smoothed labels for every IDK node, aligned with `partition.d_idk`.
/// All nodes read the original priors; there is no sequential update.
pub fn smooth_batch<F: Scalar>(batch: &GraphBatch<F>, config: &SmoothConfig) -> Result<Vec<SoftLabel<F>>> {
    config.validate()?;
    let emb = prepared(batch, config);
    let emb = emb.as_deref().unwrap_or(&batch.embeddings);
    Ok(batch
        .partition
        .d_idk
        .iter()
        .map(|&i| combine(i, &batch.priors, &similarity_weights_with(i, emb, config.tau), config.alpha))
        .collect())
}

/// Reference minimizer of
/// `alpha * (l - l_p(x))^2 + (1 - alpha) * sum_j a_j * (l - l_p(x_j))^2`
/// over `l` in `[0, 1]`, by grid search followed by golden-section
/// refinement. Weights are recomputed directly from the exponentials,
/// independent of [`smooth_label`].
pub fn smooth_oracle<F: Scalar>(i: usize, batch: &GraphBatch<F>, config: &SmoothConfig) -> SoftLabel<F> {
    let emb: Vec<Vec<f64>> = batch
        .embeddings
        .iter()
        .map(|z| {
            let z: Vec<f64> = z.iter().map(|v| v.to_f64_lossy()).collect();
            if config.normalize {
                let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    return z.iter().map(|v| v / n).collect();
                }
            }
            z
        })
        .collect();
    let raw: Vec<f64> = emb
        .iter()
        .map(|zj| (emb[i].iter().zip(zj).map(|(a, b)| a * b).sum::<f64>() / config.tau).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let priors: Vec<f64> = batch.priors.iter().map(|l| l.p1().to_f64_lossy()).collect();
    let alpha = config.alpha;
    let objective = |l: f64| {
        alpha * (l - priors[i]).powi(2)
            + (1.0 - alpha)
                * raw
                    .iter()
                    .zip(&priors)
                    .map(|(r, p)| r / total * (l - p).powi(2))
                    .sum::<f64>()
    };

    const GRID: usize = 2000;
    let step = 1.0 / GRID as f64;
    let best = (0..=GRID)
        .map(|k| k as f64 * step)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap();
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(1.0));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if objective(a) <= objective(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    SoftLabel::new(F::lit((0.5 * (lo + hi)).clamp(0.0, 1.0))).expect("inside [0, 1]")
}

/// One line of the smoothing debug dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTraceRow {
    pub step: u64,
    pub node_id: String,
    pub role: String,
    pub pik_score: f64,
    pub l_p: f64,
    pub l_g: f64,
}

pub fn write_smooth_trace<W: Write>(rows: &[SmoothTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<smooth trace>", e))
}

pub fn save_smooth_trace(rows: &[SmoothTraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_smooth_trace(rows, file)
}
