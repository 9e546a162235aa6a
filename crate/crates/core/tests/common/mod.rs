//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use w2s_core::dataset::{Sample, SoftLabel};
use w2s_core::learner::{CapacityTier, LearnerSpec, LearnerState};
use w2s_core::losses::{self, ConfParams, LossEval, LossId};
use w2s_core::pik::{PikExample, Partition};
use w2s_core::selective::{joint_loss, ImprovedBatch};
use w2s_core::smooth::{GraphBatch, SmoothConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(|a|, |b|)`, with tiny magnitudes compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// O(n^2) AUROC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Loss value with every constructed target frozen at its value for `p0`.
fn frozen_value(id: LossId, conf: ConfParams, p0: f64, w: f64, p: f64) -> f64 {
    match id {
        LossId::Conf => losses::ce_soft(p, losses::conf_target(p0, w, conf.alpha, conf.t)).value,
        LossId::Prod => losses::ce_soft(p, losses::prod_target(p0, w)).value,
        _ => losses::evaluate(id, conf, p, w).value,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Checks `d_pred` and `d_logits` of one loss against central differences
/// over `draws` random (prediction, target) pairs; returns the worst
/// relative error.
pub fn loss_fd_worst(id: LossId, draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let conf = ConfParams::default();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < draws {
        let l0: f64 = r.random_range(-3.0..3.0);
        let l1: f64 = r.random_range(-3.0..3.0);
        let p = sigmoid(l1 - l0);
        let w: f64 = r.random_range(0.01..0.99);
        if (p - conf.t).abs() < 1e-3 {
            continue;
        }
        let e: LossEval<f64> = losses::evaluate(id, conf, p, w);
        let f = |q: f64| frozen_value(id, conf, p, w, q);
        let num_pred = (f(p + h) - f(p - h)) / (2.0 * h);
        let g = |a: f64, b: f64| f(sigmoid(b - a));
        let num_l0 = (g(l0 + h, l1) - g(l0 - h, l1)) / (2.0 * h);
        let num_l1 = (g(l0, l1 + h) - g(l0, l1 - h)) / (2.0 * h);
        worst = worst
            .max(rel_err(e.d_pred, num_pred))
            .max(rel_err(e.d_logits[0], num_l0))
            .max(rel_err(e.d_logits[1], num_l1));
        done += 1;
    }
    worst
}

pub fn random_sample(r: &mut ChaCha8Rng, id: usize, dim: usize) -> Sample<f64> {
    let x: Vec<f64> = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
    Sample::new(format!("s{id}"), format!("q{id}"), x, r.random_range(0..2u8)).unwrap()
}

/// Central-difference check of the joint loss gradient with respect to
/// every parameter of a random small network; returns the worst
/// relative error over `draws` random networks and batches.
pub fn joint_fd_worst(draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let dim = r.random_range(1..5);
        let widths: Vec<usize> = (0..r.random_range(0..3)).map(|_| r.random_range(1..6)).collect();
        let spec = LearnerSpec::mlp(dim, &widths, CapacityTier::Strong, draw as u64);
        let state = LearnerState::<f64>::init(spec).unwrap();
        let n = r.random_range(1..6);
        let batch: Vec<Sample<f64>> = (0..n).map(|i| random_sample(&mut r, i, dim)).collect();
        let refs: Vec<&Sample<f64>> = batch.iter().collect();
        let targets: Vec<SoftLabel<f64>> = (0..n).map(|_| SoftLabel::new(r.random_range(0.0..1.0)).unwrap()).collect();
        let gen = ImprovedBatch::raw(&refs, &targets);
        let pik: Vec<PikExample<f64>> = (0..r.random_range(1..6))
            .map(|i| PikExample {
                sample: random_sample(&mut r, 100 + i, dim),
                ik_label: r.random_range(0..2u8),
            })
            .collect();
        let pik_refs: Vec<&PikExample<f64>> = pik.iter().collect();
        let lambda: f64 = r.random_range(0.1..2.0);
        let eval = joint_loss(&gen, &pik_refs, &state, lambda).unwrap();
        for k in 0..state.params().len() {
            let at = |delta: f64| {
                let mut s = state.clone();
                s.params_mut()[k] += delta;
                joint_loss(&gen, &pik_refs, &s, lambda).unwrap().total
            };
            let num = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max(rel_err(eval.grad[k], num));
        }
    }
    worst
}

/// Random graph batch: up to 8 nodes, embedding dim up to 4, random
/// partition with at least one IDK node.
pub fn random_graph_batch(r: &mut ChaCha8Rng) -> (GraphBatch<f64>, SmoothConfig) {
    let n = r.random_range(1..=8);
    let dim = r.random_range(1..=4);
    let embeddings: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let priors: Vec<SoftLabel<f64>> = (0..n).map(|_| SoftLabel::new(r.random_range(0.0..=1.0)).unwrap()).collect();
    let mut ik = Vec::new();
    let mut idk = Vec::new();
    for i in 0..n {
        if i > 0 && r.random_bool(0.4) {
            ik.push(i);
        } else {
            idk.push(i);
        }
    }
    let partition = Partition::from_sets(ik, idk, 0.8).unwrap();
    let cfg = SmoothConfig {
        alpha: r.random_range(0.0..=1.0),
        tau: r.random_range(0.05..=10.0),
        normalize: false,
    };
    (GraphBatch::new(embeddings, priors, partition).unwrap(), cfg)
}

/// Reference (weak, weak-to-strong, ceiling, PGR) quadruples in percent.
pub const PGR_FIXTURES: [(f64, f64, f64, f64); 42] = [
    (64.70, 77.90, 93.40, 45.99),
    (64.70, 82.20, 93.40, 60.98),
    (64.70, 81.60, 93.40, 58.89),
    (64.70, 74.00, 93.40, 32.40),
    (64.70, 78.50, 93.40, 48.08),
    (64.70, 80.00, 93.40, 53.31),
    (64.70, 83.30, 93.40, 64.81),
    (64.91, 65.89, 89.91, 3.92),
    (64.91, 62.22, 89.91, -10.76),
    (64.91, 61.02, 89.91, -15.56),
    (64.91, 62.83, 89.91, -8.32),
    (64.91, 66.29, 89.91, 5.52),
    (64.91, 65.80, 89.91, 3.56),
    (64.91, 68.64, 89.91, 14.92),
    (67.17, 71.99, 89.72, 21.37),
    (67.17, 73.37, 89.72, 27.49),
    (67.17, 73.40, 89.72, 27.63),
    (67.17, 67.77, 89.72, 2.66),
    (67.17, 74.10, 89.72, 30.73),
    (67.17, 71.96, 89.72, 21.24),
    (67.17, 75.11, 89.72, 35.21),
    (83.80, 88.10, 93.40, 44.79),
    (83.80, 89.50, 93.40, 59.38),
    (83.80, 89.40, 93.40, 58.33),
    (83.80, 89.60, 93.40, 60.42),
    (83.80, 88.60, 93.40, 50.00),
    (83.80, 88.80, 93.40, 52.08),
    (83.80, 90.60, 93.40, 70.83),
    (78.92, 80.85, 89.91, 17.56),
    (78.92, 82.53, 89.91, 32.85),
    (78.92, 82.47, 89.91, 32.30),
    (78.92, 81.79, 89.91, 26.11),
    (78.92, 82.62, 89.91, 33.67),
    (78.92, 83.33, 89.91, 40.13),
    (78.92, 83.39, 89.91, 40.67),
    (79.13, 81.37, 89.72, 21.15),
    (79.13, 81.34, 89.72, 20.87),
    (79.13, 82.95, 89.72, 36.07),
    (79.13, 80.13, 89.72, 9.44),
    (79.13, 82.45, 89.72, 31.35),
    (79.13, 81.84, 89.72, 25.59),
    (79.13, 83.85, 89.72, 44.57),
];

/// Worst deviation (in percentage points) of computed PGR from the
/// reference values.
pub fn pgr_fixture_worst() -> f64 {
    PGR_FIXTURES
        .iter()
        .map(|&(w, s, c, expected)| (w2s_core::pipeline::pgr(w, s, c).unwrap() * 100.0 - expected).abs())
        .fold(0.0, f64::max)
}

/// Smaller copy of the standard suite for end-to-end tests.
pub fn small_suite(seeds: std::ops::Range<u64>) -> w2s_core::pipeline::ExperimentConfig {
    use w2s_core::pipeline::{CorpusSource, ExperimentConfig};
    let mut cfg = ExperimentConfig::standard_suite();
    if let CorpusSource::Synthetic(spec) = &mut cfg.corpus {
        spec.samples_per_family = 1000;
    }
    cfg.seeds = seeds.collect();
    cfg
}
