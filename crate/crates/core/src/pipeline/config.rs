//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SynthSpec;
use crate::error::{Error, Result};
use crate::learner::{CapacityTier, LearnerSpec, TrainConfig};
use crate::losses::LossId;
use crate::selective::SelectiveConfig;

/// Training method for the strong student. Declaration order is the row
/// order of every method table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Finetune,
    Conf,
    Prod,
    Rkl,
    Js,
    Selective,
    SelectiveWoIk,
    SelectiveWoGs,
    Mtl,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Finetune,
        Method::Conf,
        Method::Prod,
        Method::Rkl,
        Method::Js,
        Method::Selective,
        Method::SelectiveWoIk,
        Method::SelectiveWoGs,
        Method::Mtl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Conf => "conf",
            Method::Prod => "prod",
            Method::Rkl => "rkl",
            Method::Js => "js",
            Method::Selective => "selective",
            Method::SelectiveWoIk => "selective_wo_ik",
            Method::SelectiveWoGs => "selective_wo_gs",
            Method::Mtl => "mtl",
        }
    }

    /// Loss of the plain fine-tuning baselines; `None` for joint methods.
    pub fn baseline_loss(self) -> Option<LossId> {
        match self {
            Method::Finetune => Some(LossId::Ce),
            Method::Conf => Some(LossId::Conf),
            Method::Prod => Some(LossId::Prod),
            Method::Rkl => Some(LossId::Rkl),
            Method::Js => Some(LossId::Js),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SynthSpec),
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of each task's question groups held out for testing.
    pub test_fraction: f64,
    /// Share of every family's question groups used to pretrain the strong base.
    pub pretrain_fraction: f64,
    /// Upper bound on samples drawn for the weak/strong halves.
    pub cap: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            pretrain_fraction: 0.15,
            cap: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AurocConfig {
    /// Task selectors: `tag` or `tag:lo-hi` (difficulty tier range).
    pub tasks: Vec<String>,
    /// Share of each task's non-pretraining groups used to train P(IK).
    pub train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for AurocConfig {
    fn default() -> Self {
        Self {
            tasks: vec!["family0".into(), "family1".into(), "family2".into()],
            train_fraction: 0.5,
            train: TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub precision: Precision,
    pub corpus: CorpusSource,
    /// Task tag of the weak-to-strong task.
    pub task: String,
    /// Task tag of the auxiliary corpus used to train P(IK).
    pub pik_task: String,
    pub split: SplitConfig,
    pub weak: LearnerSpec,
    pub strong: LearnerSpec,
    /// Training of the strong base on the pretraining corpus.
    pub pretrain: TrainConfig,
    /// Training of weak supervisor, ceiling and every student.
    pub train: TrainConfig,
    pub selective: SelectiveConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Replace weak labels by gold labels (control run).
    #[serde(default)]
    pub gold_as_weak: bool,
    #[serde(default)]
    pub auroc: AurocConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::standard_suite()
    }
}

impl ExperimentConfig {
    /// The standard synthetic suite with the default capability gap.
    pub fn standard_suite() -> Self {
        let synth = SynthSpec::default();
        let dim = synth.dimension;
        Self {
            precision: Precision::F64,
            corpus: CorpusSource::Synthetic(synth),
            task: SynthSpec::family_tag(0),
            pik_task: SynthSpec::family_tag(1),
            split: SplitConfig::default(),
            weak: LearnerSpec::linear(dim, CapacityTier::Weak, 0),
            strong: LearnerSpec::mlp(dim, &[64, 32], CapacityTier::Strong, 0),
            pretrain: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            train: TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
            selective: SelectiveConfig::default(),
            methods: Method::ALL.to_vec(),
            seeds: (0..20).collect(),
            gold_as_weak: false,
            auroc: AurocConfig::default(),
            output_dir: PathBuf::from("w2s-out"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.weak.validate()?;
        self.strong.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.selective.validate()?;
        if self.weak.capacity_tier != CapacityTier::Weak || self.strong.capacity_tier != CapacityTier::Strong {
            return Err(Error::Config("weak spec must be tier weak and strong spec tier strong".into()));
        }
        if self.weak.input_dimension != self.strong.input_dimension {
            return Err(Error::Config("weak and strong input dimensions differ".into()));
        }
        if self.task == self.pik_task {
            return Err(Error::Config("pik_task must differ from task".into()));
        }
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.pretrain_fraction > 0.0 && s.test_fraction + s.pretrain_fraction < 1.0) {
            return Err(Error::Config("split fractions must be positive and sum below 1".into()));
        }
        if s.cap < 2 {
            return Err(Error::Config("split.cap must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if !(self.auroc.train_fraction > 0.0 && self.auroc.train_fraction < 1.0) {
            return Err(Error::Config("auroc.train_fraction must lie in (0,1)".into()));
        }
        self.auroc.train.validate()?;
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            spec.validate()?;
            if spec.dimension != self.strong.input_dimension {
                return Err(Error::Config("synthetic dimension differs from learner input dimension".into()));
            }
        }
        Ok(())
    }
}

/// Commented default configuration, as written by `w2s config`.
pub fn default_config_toml() -> String {
    let body = ExperimentConfig::standard_suite()
        .to_toml_string()
        .expect("default config serializes");
    format!(
        "# w2s experiment configuration.\n\
         #\n\
         # methods: finetune, conf, prod, rkl, js, selective, selective_wo_ik,\n\
         #          selective_wo_gs, mtl\n\
         # train.loss is ignored for students (each method picks its own loss);\n\
         # train.conf holds the confidence-loss weight `alpha` and threshold `t`.\n\
         # selective.gamma: P(IK) partition threshold (score > gamma => IK)\n\
         # selective.lambda: weight of the P(IK) loss\n\
         # selective.smooth.alpha / .tau: graph smoothing weight and temperature\n\
         # precision: f64 or f32\n\
         \n{body}"
    )
}
