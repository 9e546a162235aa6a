//! P(IK) ("probability that I know"): labeling, scoring, threshold
//! partitioning and AUROC.

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::learner::LearnerState;
use crate::scalar::Scalar;

/// Auxiliary sample labeled by whether the base model answers it correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct PikExample<F> {
    pub sample: Sample<F>,
    /// 1 = IK, 0 = IDK.
    pub ik_label: u8,
}

/// Split of a batch into IK (score > gamma) and IDK (score <= gamma) indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub d_ik: Vec<usize>,
    pub d_idk: Vec<usize>,
    pub gamma: f64,
}

impl Partition {
    /// Builds a partition from explicit index sets, checking that they
    /// cover `0..n` exactly once.
    pub fn from_sets(d_ik: Vec<usize>, d_idk: Vec<usize>, gamma: f64) -> Result<Self> {
        let n = d_ik.len() + d_idk.len();
        let mut seen = vec![false; n];
        for &i in d_ik.iter().chain(&d_idk) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("partition index {i} repeated or out of range")));
            }
        }
        Ok(Self { d_ik, d_idk, gamma })
    }

    pub fn len(&self) -> usize {
        self.d_ik.len() + self.d_idk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_ik(&self, i: usize) -> bool {
        self.d_ik.contains(&i)
    }
}

/// Labels every auxiliary sample IK when the base model's hardened task
/// prediction matches the gold label, IDK otherwise.
pub fn build_pik_dataset<F: Scalar>(base: &LearnerState<F>, aux: &Corpus<F>) -> Result<Vec<PikExample<F>>> {
    if aux.is_empty() {
        return Err(Error::Empty("P(IK) corpus"));
    }
    let half = F::lit(0.5);
    aux.samples()
        .iter()
        .map(|s| {
            let p = base.forward(&s.features)?;
            let predicted = u8::from(p.p1 > half);
            Ok(PikExample {
                sample: s.clone(),
                ik_label: u8::from(predicted == s.gold_label),
            })
        })
        .collect()
}

pub fn score_pik<F: Scalar>(state: &LearnerState<F>, sample: &Sample<F>) -> Result<F> {
    Ok(state.forward(&sample.features)?.pik)
}

/// Strict threshold: a score equal to `gamma` lands in IDK.
pub fn partition<F: Scalar>(scores: &[F], gamma: f64) -> Partition {
    let g = F::lit(gamma);
    let (d_ik, d_idk) = (0..scores.len()).partition(|&i| scores[i] > g);
    Partition { d_ik, d_idk, gamma }
}

/// Exact rank-based AUROC with ties counted one half.
///
/// Computed in integer half-units: `2U = 2 * sum(midranks of positives) -
/// n_pos * (n_pos + 1)`, where twice a midrank is always an integer.
pub fn auroc<F: Scalar>(scores: &[F], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN rejected above"));
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share the midrank (start + 1 + end) / 2
        let twice_mid = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub const HISTOGRAM_BINS: usize = 20;

/// Counts of scores in 20 equal-width bins over [0, 1]; 1.0 falls in the
/// last bin.
pub fn histogram<F: Scalar>(scores: &[F]) -> [u64; HISTOGRAM_BINS] {
    let mut bins = [0u64; HISTOGRAM_BINS];
    for s in scores {
        let v = s.to_f64_lossy().clamp(0.0, 1.0);
        let b = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}
