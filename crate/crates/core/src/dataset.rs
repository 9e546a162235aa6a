//! Corpus representation and the data-side steps of the protocol:
//! multiple-choice conversion, per-question balancing, capped half
//! splits, synthetic Gaussian-mixture task generation and JSON-lines I/O.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability of class 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftLabel<F>(F);

impl<F: Scalar> SoftLabel<F> {
    pub fn new(p1: F) -> Result<Self> {
        if p1.is_finite() && p1 >= F::zero() && p1 <= F::one() {
            Ok(Self(p1))
        } else {
            Err(Error::Invalid(format!("soft label {p1} outside [0, 1]")))
        }
    }

    /// Hard 0/1 label.
    pub fn hard(positive: bool) -> Self {
        Self(if positive { F::one() } else { F::zero() })
    }

    pub fn from_gold(label: u8) -> Self {
        Self::hard(label == 1)
    }

    #[inline]
    pub fn p1(self) -> F {
        self.0
    }

    #[inline]
    pub fn p0(self) -> F {
        F::one() - self.0
    }
}

/// One binary-classification datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub id: String,
    pub features: Vec<F>,
    pub gold_label: u8,
    pub task_tag: String,
    pub difficulty_tag: u32,
    pub question_id: String,
}

impl<F: Scalar> Sample<F> {
    pub fn new(
        id: impl Into<String>,
        question_id: impl Into<String>,
        features: Vec<F>,
        gold_label: u8,
    ) -> Result<Self> {
        let id = id.into();
        if gold_label > 1 {
            return Err(Error::Invalid(format!(
                "sample {id}: label {gold_label} is not 0 or 1"
            )));
        }
        Ok(Self {
            id,
            features,
            gold_label,
            task_tag: String::new(),
            difficulty_tag: 0,
            question_id: question_id.into(),
        })
    }

    pub fn with_tags(mut self, task: impl Into<String>, difficulty: u32) -> Self {
        self.task_tag = task.into();
        self.difficulty_tag = difficulty;
        self
    }
}

/// Ordered sample collection with a fixed feature dimension and optional
/// weak labels keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<F> {
    samples: Vec<Sample<F>>,
    dimension: usize,
    weak_labels: Option<BTreeMap<String, SoftLabel<F>>>,
}

impl<F: Scalar> Corpus<F> {
    pub fn new(samples: Vec<Sample<F>>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Invalid("corpus dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.features.len() != dimension {
                return Err(Error::Dimension {
                    id: s.id.clone(),
                    expected: dimension,
                    got: s.features.len(),
                });
            }
            if s.gold_label > 1 {
                return Err(Error::Invalid(format!("sample {}: label not binary", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            dimension,
            weak_labels: None,
        })
    }

    /// Builds a corpus, inferring the dimension from the first sample.
    pub fn from_samples(samples: Vec<Sample<F>>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or(Error::Empty("corpus"))?;
        Self::new(samples, dim)
    }

    pub fn with_weak_labels(mut self, labels: BTreeMap<String, SoftLabel<F>>) -> Result<Self> {
        let ids: HashSet<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        if let Some(unknown) = labels.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::Invalid(format!("weak label for unknown id {unknown}")));
        }
        self.weak_labels = Some(labels);
        Ok(self)
    }

    pub fn samples(&self) -> &[Sample<F>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample<F>> {
        self.samples
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weak_labels(&self) -> Option<&BTreeMap<String, SoftLabel<F>>> {
        self.weak_labels.as_ref()
    }

    pub fn weak_label(&self, id: &str) -> Option<SoftLabel<F>> {
        self.weak_labels.as_ref().and_then(|m| m.get(id).copied())
    }

    /// Weak labels aligned with sample order; errors if any are missing.
    pub fn aligned_weak_labels(&self) -> Result<Vec<SoftLabel<F>>> {
        self.samples
            .iter()
            .map(|s| {
                self.weak_label(&s.id)
                    .ok_or_else(|| Error::Invalid(format!("missing weak label for {}", s.id)))
            })
            .collect()
    }

    /// Gold labels as hard soft-labels, aligned with sample order.
    pub fn gold_targets(&self) -> Vec<SoftLabel<F>> {
        self.samples
            .iter()
            .map(|s| SoftLabel::from_gold(s.gold_label))
            .collect()
    }

    /// Sub-corpus keeping samples matching `keep`; weak labels follow.
    pub fn filter(&self, mut keep: impl FnMut(&Sample<F>) -> bool) -> Self {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        self.rebuild(samples)
    }

    fn rebuild(&self, samples: Vec<Sample<F>>) -> Self {
        let weak_labels = self.weak_labels.as_ref().map(|m| {
            samples
                .iter()
                .filter_map(|s| m.get(&s.id).map(|l| (s.id.clone(), *l)))
                .collect()
        });
        Self {
            samples,
            dimension: self.dimension,
            weak_labels,
        }
    }

    /// Distinct task tags in order of first appearance.
    pub fn task_tags(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.task_tag.as_str()))
            .map(|s| s.task_tag.clone())
            .collect()
    }
}

/// A multiple-choice question with `k` candidate answers.
#[derive(Debug, Clone)]
pub struct McItem<F> {
    pub question_id: String,
    pub candidate_features: Vec<Vec<F>>,
    pub correct: BTreeSet<usize>,
    pub task_tag: String,
    pub difficulty_tag: u32,
}

/// Expands a multiple-choice item into `k` binary samples `(Q, A_i)`.
pub fn convert_multiple_choice<F: Scalar>(item: &McItem<F>) -> Result<Vec<Sample<F>>> {
    let k = item.candidate_features.len();
    if k < 2 {
        return Err(Error::Invalid(format!(
            "question {}: need at least 2 candidates, got {k}",
            item.question_id
        )));
    }
    if item.correct.is_empty() || item.correct.len() >= k {
        return Err(Error::Invalid(format!(
            "question {}: correct set must be a strict nonempty subset",
            item.question_id
        )));
    }
    if let Some(bad) = item.correct.iter().find(|&&i| i >= k) {
        return Err(Error::Invalid(format!(
            "question {}: correct index {bad} out of range",
            item.question_id
        )));
    }
    let dim = item.candidate_features[0].len();
    item.candidate_features
        .iter()
        .enumerate()
        .map(|(i, feats)| {
            if feats.len() != dim {
                return Err(Error::Dimension {
                    id: format!("{}#{i}", item.question_id),
                    expected: dim,
                    got: feats.len(),
                });
            }
            let label = u8::from(item.correct.contains(&i));
            Ok(
                Sample::new(format!("{}#{i}", item.question_id), &item.question_id, feats.clone(), label)?
                    .with_tags(&item.task_tag, item.difficulty_tag),
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Balanced<F> {
    pub samples: Vec<Sample<F>>,
    /// Question groups dropped for lacking one of the two classes.
    pub dropped_groups: usize,
}

pub(crate) fn group_indices<F>(samples: &[Sample<F>]) -> Vec<Vec<usize>> {
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        let g = *slot.entry(s.question_id.as_str()).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[g].push(i);
    }
    order
}

/// Equalizes positives and negatives within each question by subsampling
/// the majority class uniformly at random.
pub fn balance_per_question<F: Scalar>(samples: &[Sample<F>], seed: u64) -> Balanced<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; samples.len()];
    let mut dropped_groups = 0;
    for group in group_indices(samples) {
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            group.iter().partition(|&&i| samples[i].gold_label == 1);
        if pos.is_empty() || neg.is_empty() {
            dropped_groups += 1;
            continue;
        }
        let n = pos.len().min(neg.len());
        for side in [&pos, &neg] {
            if side.len() == n {
                side.iter().for_each(|&i| keep[i] = true);
            } else {
                index::sample(&mut rng, side.len(), n)
                    .into_iter()
                    .for_each(|j| keep[side[j]] = true);
            }
        }
    }
    Balanced {
        samples: samples
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect(),
        dropped_groups,
    }
}

/// Draws at most `cap` samples (whole question groups only) and splits them
/// into two disjoint halves of near-equal size.
pub fn split_and_cap<F: Scalar>(
    corpus: &Corpus<F>,
    cap: usize,
    seed: u64,
) -> Result<(Corpus<F>, Corpus<F>)> {
    if cap < 2 {
        return Err(Error::Invalid(format!("cap must be at least 2, got {cap}")));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = group_indices(&corpus.samples);
    groups.shuffle(&mut rng);

    let mut taken = 0usize;
    let mut halves: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for g in groups {
        if taken + g.len() > cap {
            continue;
        }
        taken += g.len();
        let target = usize::from(halves[1].len() < halves[0].len());
        halves[target].extend(g);
    }
    let [a, b] = halves;
    let pick = |idx: Vec<usize>| corpus.rebuild(idx.into_iter().map(|i| corpus.samples[i].clone()).collect());
    Ok((pick(a), pick(b)))
}

/// Cuts samples into parts made of whole, shuffled question groups. Part
/// `k` receives about `fractions[k]` of the samples; one extra trailing
/// part receives the remainder.
pub fn carve_groups<F: Scalar>(samples: &[Sample<F>], fractions: &[f64], seed: u64) -> Vec<Vec<Sample<F>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = group_indices(samples);
    groups.shuffle(&mut rng);
    let n = samples.len() as f64;
    let mut parts: Vec<Vec<Sample<F>>> = vec![Vec::new(); fractions.len() + 1];
    let mut part = 0;
    let mut bound = fractions.first().map_or(f64::INFINITY, |f| f * n);
    let mut filled = 0usize;
    for g in groups {
        while part < fractions.len() && filled as f64 >= bound {
            part += 1;
            bound += fractions.get(part).map_or(f64::INFINITY, |f| f * n);
        }
        filled += g.len();
        parts[part].extend(g.into_iter().map(|i| samples[i].clone()));
    }
    parts
}

/// Parameters of the Gaussian-mixture task generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dimension: usize,
    pub families: usize,
    pub clusters_per_class: usize,
    pub cluster_spread: f64,
    pub difficulty_tiers: usize,
    pub samples_per_family: usize,
    pub seed: u64,
    /// Scale of the cluster centers; larger means wider class margins.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Label flip rate of the hardest tier (tier 0 never flips).
    #[serde(default = "default_max_flip")]
    pub max_flip_rate: f64,
    /// Center scale multiplier of the hardest tier (tier 0 uses 1).
    #[serde(default = "default_hard_scale")]
    pub hard_margin_scale: f64,
    /// Per-family perturbation of the shared cluster prototypes.
    #[serde(default = "default_jitter")]
    pub family_jitter: f64,
}

fn default_margin() -> f64 {
    2.0
}
fn default_max_flip() -> f64 {
    0.2
}
fn default_hard_scale() -> f64 {
    0.5
}
fn default_jitter() -> f64 {
    0.5
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dimension: 8,
            families: 3,
            clusters_per_class: 4,
            cluster_spread: 1.0,
            difficulty_tiers: 3,
            samples_per_family: 4000,
            seed: 0,
            margin: default_margin(),
            max_flip_rate: default_max_flip(),
            hard_margin_scale: default_hard_scale(),
            family_jitter: default_jitter(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dimension", self.dimension),
            ("families", self.families),
            ("clusters_per_class", self.clusters_per_class),
            ("difficulty_tiers", self.difficulty_tiers),
            ("samples_per_family", self.samples_per_family),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("synth spec: {name} must be positive")));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Invalid("synth spec: cluster_spread must be > 0".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Invalid("synth spec: margin must be >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.max_flip_rate) {
            return Err(Error::Invalid("synth spec: max_flip_rate must lie in [0, 0.5]".into()));
        }
        if !(self.hard_margin_scale > 0.0 && self.hard_margin_scale <= 1.0) {
            return Err(Error::Invalid("synth spec: hard_margin_scale must lie in (0, 1]".into()));
        }
        if !(self.family_jitter >= 0.0 && self.family_jitter.is_finite()) {
            return Err(Error::Invalid("synth spec: family_jitter must be >= 0".into()));
        }
        Ok(())
    }

    /// Tag used for samples of family `f`.
    pub fn family_tag(f: usize) -> String {
        format!("family{f}")
    }

    fn tier_fraction(&self, tier: usize) -> f64 {
        if self.difficulty_tiers <= 1 {
            0.0
        } else {
            tier as f64 / (self.difficulty_tiers - 1) as f64
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates class-balanced Gaussian-mixture tasks, one per family.
///
/// Every family perturbs a shared set of class prototypes, so families
/// share cluster structure. Samples are drawn in (class 0, class 1) pairs
/// with a common difficulty tier; a flip swaps both labels of the pair,
/// which keeps each family exactly balanced.
pub fn generate_synthetic<F: Scalar>(spec: &SynthSpec) -> Result<Corpus<F>> {
    spec.validate()?;
    let dim = spec.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| {
            (0..spec.clusters_per_class)
                .map(|_| gaussian_vec(&mut rng, dim, spec.margin))
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(spec.families * spec.samples_per_family);
    for f in 0..spec.families {
        let tag = SynthSpec::family_tag(f);
        let centers: Vec<Vec<Vec<f64>>> = prototypes
            .iter()
            .map(|class| {
                class
                    .iter()
                    .map(|p| {
                        let j = gaussian_vec(&mut rng, dim, spec.family_jitter);
                        p.iter().zip(j).map(|(a, b)| a + b).collect()
                    })
                    .collect()
            })
            .collect();
        let n_centers = (2 * spec.clusters_per_class) as f64;
        let centroid: Vec<f64> = (0..dim)
            .map(|d| centers.iter().flatten().map(|c| c[d]).sum::<f64>() / n_centers)
            .collect();

        let mut made = 0usize;
        let mut pair = 0usize;
        while made < spec.samples_per_family {
            let tier = rng.random_range(0..spec.difficulty_tiers);
            let frac = spec.tier_fraction(tier);
            let shrink = 1.0 - (1.0 - spec.hard_margin_scale) * frac;
            let flip_rate = spec.max_flip_rate * frac;
            let mut drawn = Vec::with_capacity(2);
            for class in 0..2u8 {
                let k = rng.random_range(0..spec.clusters_per_class);
                let c = &centers[class as usize][k];
                let noise = gaussian_vec(&mut rng, dim, spec.cluster_spread);
                let x: Vec<F> = (0..dim)
                    .map(|d| F::lit(centroid[d] + shrink * (c[d] - centroid[d]) + noise[d]))
                    .collect();
                drawn.push((class, x));
            }
            let flip = rng.random::<f64>() < flip_rate;
            for (class, x) in drawn {
                if made == spec.samples_per_family {
                    break;
                }
                let label = if flip { 1 - class } else { class };
                let id = format!("{tag}-{pair:06}-{class}");
                samples.push(Sample::new(id.clone(), id, x, label)?.with_tags(&tag, tier as u32));
                made += 1;
            }
            pair += 1;
        }
    }
    Corpus::new(samples, dim)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    question_id: String,
    features: Vec<f64>,
    label: u8,
    task: String,
    difficulty: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeakRecord {
    id: String,
    p1: f64,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses a JSON-lines corpus. `origin` only labels error messages.
pub fn read_corpus<F: Scalar, R: BufRead>(reader: R, origin: &Path) -> Result<Corpus<F>> {
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(origin, lineno, e.to_string()))?;
        if rec.label > 1 {
            return Err(parse_err(origin, lineno, format!("label {} is not 0 or 1", rec.label)));
        }
        if rec.features.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(origin, lineno, "non-finite feature"));
        }
        let expected = *dim.get_or_insert(rec.features.len());
        if rec.features.len() != expected {
            return Err(Error::Dimension {
                id: rec.id,
                expected,
                got: rec.features.len(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(origin, lineno, format!("duplicate id {}", rec.id)));
        }
        let features = rec.features.into_iter().map(F::lit).collect();
        samples.push(
            Sample::new(rec.id, rec.question_id, features, rec.label)?
                .with_tags(rec.task, rec.difficulty),
        );
    }
    let dim = dim.ok_or(Error::Empty("corpus file"))?;
    Corpus::new(samples, dim)
}

pub fn load_corpus<F: Scalar>(path: impl AsRef<Path>) -> Result<Corpus<F>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

pub fn write_corpus_to<F: Scalar, W: Write>(corpus: &Corpus<F>, mut out: W) -> Result<()> {
    for s in &corpus.samples {
        let rec = SampleRecord {
            id: s.id.clone(),
            question_id: s.question_id.clone(),
            features: s.features.iter().map(|v| v.to_f64_lossy()).collect(),
            label: s.gold_label,
            task: s.task_tag.clone(),
            difficulty: s.difficulty_tag,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn write_corpus<F: Scalar>(corpus: &Corpus<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus_to(corpus, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the sidecar weak-label file (`{"id": ..., "p1": ...}` per line).
pub fn load_weak_labels<F: Scalar>(path: impl AsRef<Path>) -> Result<BTreeMap<String, SoftLabel<F>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WeakRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, n + 1, e.to_string()))?;
        let label = SoftLabel::new(F::lit(rec.p1)).map_err(|e| parse_err(path, n + 1, e.to_string()))?;
        out.insert(rec.id, label);
    }
    Ok(out)
}

pub fn write_weak_labels<F: Scalar>(
    labels: &BTreeMap<String, SoftLabel<F>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, l) in labels {
        serde_json::to_writer(
            &mut w,
            &WeakRecord {
                id: id.clone(),
                p1: l.p1().to_f64_lossy(),
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(k: usize, correct: &[usize]) -> McItem<f64> {
        McItem {
            question_id: "q".into(),
            candidate_features: (0..k).map(|i| vec![i as f64, 1.0]).collect(),
            correct: correct.iter().copied().collect(),
            task_tag: "t".into(),
            difficulty_tag: 0,
        }
    }

    fn labels(s: &[Sample<f64>]) -> Vec<u8> {
        s.iter().map(|s| s.gold_label).collect()
    }

    fn grouped(qid: &str, labs: &[u8]) -> Vec<Sample<f64>> {
        labs.iter()
            .enumerate()
            .map(|(i, &l)| Sample::new(format!("{qid}-{i}"), qid, vec![i as f64], l).unwrap())
            .collect()
    }

    #[test]
    fn multiple_choice_labels() {
        assert_eq!(labels(&convert_multiple_choice(&mc(4, &[0])).unwrap()), [1, 0, 0, 0]);
        assert_eq!(labels(&convert_multiple_choice(&mc(2, &[1])).unwrap()), [0, 1]);
        let five = convert_multiple_choice(&mc(5, &[0, 2])).unwrap();
        assert_eq!(labels(&five), [1, 0, 1, 0, 0]);
        assert!(five.iter().all(|s| s.question_id == "q"));
    }

    #[test]
    fn multiple_choice_rejects_degenerate_sets() {
        assert!(convert_multiple_choice(&mc(3, &[])).is_err());
        assert!(convert_multiple_choice(&mc(2, &[0, 1])).is_err());
        assert!(convert_multiple_choice(&mc(1, &[0])).is_err());
        assert!(convert_multiple_choice(&mc(3, &[5])).is_err());
    }

    #[test]
    fn balance_keeps_one_of_each() {
        let b = balance_per_question(&grouped("a", &[1, 0, 0, 0]), 1);
        assert_eq!(b.samples.len(), 2);
        assert_eq!(b.samples.iter().filter(|s| s.gold_label == 1).count(), 1);
        let already = grouped("a", &[1, 0]);
        assert_eq!(balance_per_question(&already, 1).samples, already);
    }

    #[test]
    fn balance_is_seeded() {
        let g = grouped("a", &[1, 1, 0, 0, 0]);
        let x = balance_per_question(&g, 9);
        let y = balance_per_question(&g, 9);
        assert_eq!(x.samples, y.samples);
        assert_eq!(x.samples.len(), 4);
        assert_eq!(x.samples.iter().filter(|s| s.gold_label == 1).count(), 2);
    }

    #[test]
    fn balance_drops_single_class_groups() {
        let mut s = grouped("a", &[1, 1]);
        s.extend(grouped("b", &[0, 1, 1]));
        let b = balance_per_question(&s, 0);
        assert_eq!(b.dropped_groups, 1);
        assert_eq!(b.samples.len(), 2);
    }

    fn singletons(n: usize) -> Corpus<f64> {
        Corpus::new(
            (0..n)
                .map(|i| Sample::new(format!("s{i}"), format!("q{i}"), vec![i as f64], (i % 2) as u8).unwrap())
                .collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn split_below_cap_halves_evenly() {
        let (a, b) = split_and_cap(&singletons(100), 20_000, 3).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
    }

    #[test]
    fn split_caps_and_is_deterministic() {
        let c = singletons(3000);
        let (a, b) = split_and_cap(&c, 2000, 5).unwrap();
        assert_eq!((a.len(), b.len()), (1000, 1000));
        let (a2, b2) = split_and_cap(&c, 2000, 5).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn split_keeps_question_groups_together() {
        let mut s = Vec::new();
        for q in 0..40 {
            s.extend(grouped(&format!("q{q}"), &[1, 0, 0]));
        }
        let c = Corpus::from_samples(s).unwrap();
        let (a, b) = split_and_cap(&c, 1000, 2).unwrap();
        let qa: HashSet<_> = a.samples().iter().map(|s| s.question_id.clone()).collect();
        assert!(b.samples().iter().all(|s| !qa.contains(&s.question_id)));
        assert_eq!(a.len() + b.len(), 120);
        assert!(a.len().abs_diff(b.len()) <= 3);
    }

    #[test]
    fn carve_respects_fractions_and_groups() {
        let c = singletons(1000);
        let parts = carve_groups(c.samples(), &[0.2, 0.3], 4);
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, [200, 300, 500]);
        let mut s = Vec::new();
        for q in 0..50 {
            s.extend(grouped(&format!("q{q}"), &[1, 0]));
        }
        let parts = carve_groups(&s, &[0.5], 1);
        let qa: HashSet<_> = parts[0].iter().map(|s| s.question_id.clone()).collect();
        assert!(parts[1].iter().all(|s| !qa.contains(&s.question_id)));
        assert_eq!(parts[0].len() + parts[1].len(), 100);
    }

    #[test]
    fn split_rejects_small_cap() {
        assert!(split_and_cap(&singletons(4), 1, 0).is_err());
    }

    #[test]
    fn noiseless_labels_follow_cluster_class() {
        let spec = SynthSpec {
            families: 2,
            samples_per_family: 101,
            max_flip_rate: 0.0,
            ..SynthSpec::default()
        };
        let c: Corpus<f64> = generate_synthetic(&spec).unwrap();
        assert_eq!(c.len(), 202);
        // ids encode the generating class
        assert!(c.samples().iter().all(|s| s.id.ends_with(&format!("-{}", s.gold_label))));
    }

    #[test]
    fn synthetic_is_balanced_per_family() {
        let spec = SynthSpec {
            samples_per_family: 400,
            max_flip_rate: 0.3,
            ..SynthSpec::default()
        };
        let c: Corpus<f64> = generate_synthetic(&spec).unwrap();
        for tag in c.task_tags() {
            let fam: Vec<_> = c.samples().iter().filter(|s| s.task_tag == tag).collect();
            let pos = fam.iter().filter(|s| s.gold_label == 1).count();
            assert_eq!(pos * 2, fam.len());
        }
    }

    #[test]
    fn bad_spec_is_rejected() {
        let spec = SynthSpec {
            cluster_spread: 0.0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic::<f64>(&spec).is_err());
    }

    #[test]
    fn read_rejects_bad_label_with_line() {
        let text = "{\"id\":\"a\",\"question_id\":\"a\",\"features\":[1.0],\"label\":1,\"task\":\"t\",\"difficulty\":0}\n\
                    {\"id\":\"b\",\"question_id\":\"b\",\"features\":[1.0],\"label\":2,\"task\":\"t\",\"difficulty\":0}\n";
        let err = read_corpus::<f64, _>(text.as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn read_rejects_dimension_change_naming_id() {
        let text = "{\"id\":\"a\",\"question_id\":\"a\",\"features\":[1.0],\"label\":1,\"task\":\"t\",\"difficulty\":0}\n\
                    {\"id\":\"b\",\"question_id\":\"b\",\"features\":[1.0,2.0],\"label\":0,\"task\":\"t\",\"difficulty\":0}\n";
        match read_corpus::<f64, _>(text.as_bytes(), Path::new("mem")).unwrap_err() {
            Error::Dimension { id, .. } => assert_eq!(id, "b"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn weak_labels_must_key_known_ids() {
        let c = singletons(2);
        let mut m = BTreeMap::new();
        m.insert("nope".to_string(), SoftLabel::new(0.3).unwrap());
        assert!(c.with_weak_labels(m).is_err());
    }
}
