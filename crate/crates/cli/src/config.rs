//! Experiment configuration: one JSON file drives every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use domain_rescore::classifier::{ClfTrainConfig, RoutingPolicy};
use domain_rescore::corpus::lexicon::{default_fillers, default_templates};
use domain_rescore::corpus::{Domain, GeneratorConfig};
use domain_rescore::firstpass::ChannelConfig;
use domain_rescore::io::hex;
use domain_rescore::neural_lm::{FinetuneConfig, NlmTrainConfig};
use domain_rescore::rescorer::RescoreConfig;
use domain_rescore::seed::derive_seed;
use domain_rescore::weight_opt::{EmConfig, SaConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub utterances_per_domain: usize,
    pub zipf_exponent: f64,
    pub vocab_cap: usize,
    /// Built-in templates are used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<BTreeMap<Domain, Vec<String>>>,
    /// Built-in filler lists are used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fillers: Option<BTreeMap<String, Vec<String>>>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            utterances_per_domain: 5000,
            zipf_exponent: 1.0,
            vocab_cap: 2000,
            templates: None,
            fillers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSettings {
    pub order: usize,
    pub discount: f64,
}

impl Default for NgramSettings {
    fn default() -> Self {
        NgramSettings {
            order: 3,
            discount: 0.75,
        }
    }
}

/// Artifact locations, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub models: PathBuf,
    pub nbest: PathBuf,
    pub rescore: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            vocab: "vocab.json".into(),
            models: "models".into(),
            nbest: "nbest".into(),
            rescore: "rescore".into(),
            reports: "reports".into(),
        }
    }
}

/// How rescoring weights are shared between systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightTuning {
    /// Every system gets its own (λ, γ) from annealing on the dev set.
    PerSystem,
    /// All systems use the (λ, γ) tuned for general rescoring.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub ngram: NgramSettings,
    pub nlm: NlmTrainConfig,
    pub finetune: FinetuneConfig,
    pub classifier: ClfTrainConfig,
    pub routing: RoutingPolicy,
    pub channel: ChannelConfig,
    pub rescore: RescoreConfig,
    pub weight_tuning: WeightTuning,
    pub sa: SaConfig,
    pub em: EmConfig,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 20190,
            out_dir: "runs/desk".into(),
            paths: Paths::default(),
            corpus: CorpusSettings::default(),
            ngram: NgramSettings::default(),
            nlm: NlmTrainConfig {
                noise_samples: 100,
                ..Default::default()
            },
            finetune: FinetuneConfig::default(),
            classifier: ClfTrainConfig::default(),
            routing: RoutingPolicy::default(),
            channel: ChannelConfig::default(),
            rescore: RescoreConfig::default(),
            weight_tuning: WeightTuning::Shared,
            sa: SaConfig::default(),
            em: EmConfig::default(),
            jobs: 1,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.out_dir = out.clone();
        }
        if let Some(t) = overrides.threshold {
            self.routing.threshold = t;
        }
        if let Some(j) = overrides.jobs {
            self.jobs = j;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.vocab_cap == 0 {
            bail!("corpus.vocab_cap must be >= 1");
        }
        if self.ngram.order == 0 {
            bail!("ngram.order must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.routing.threshold) {
            bail!("routing threshold must lie in [0, 1]");
        }
        if self.jobs == 0 {
            bail!("jobs must be >= 1");
        }
        self.generator().validate()?;
        self.nlm.validate()?;
        self.finetune.validate()?;
        self.classifier.validate()?;
        self.channel.validate()?;
        self.rescore.validate()?;
        self.sa.validate()?;
        Ok(())
    }

    /// Hash of everything that can influence an artifact. The output
    /// directory and job count are excluded so that runs in different
    /// places or with different parallelism hash identically.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.jobs = 1;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.stage_seed("corpus"),
            utterances_per_domain: self.corpus.utterances_per_domain,
            zipf_exponent: self.corpus.zipf_exponent,
            templates: self.corpus.templates.clone().unwrap_or_else(default_templates),
            fillers: self.corpus.fillers.clone().unwrap_or_else(default_fillers),
        }
    }

    pub fn nlm_config(&self) -> NlmTrainConfig {
        NlmTrainConfig {
            seed: self.stage_seed("train-nlm"),
            ..self.nlm.clone()
        }
    }

    pub fn finetune_config(&self, domain: Domain) -> FinetuneConfig {
        FinetuneConfig {
            seed: self.stage_seed(&format!("finetune-{}", domain.tag())),
            ..self.finetune.clone()
        }
    }

    pub fn classifier_config(&self) -> ClfTrainConfig {
        ClfTrainConfig {
            seed: self.stage_seed("train-classifier"),
            ..self.classifier.clone()
        }
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            seed: self.stage_seed("simulate-nbest"),
            ..self.channel.clone()
        }
    }

    pub fn sa_config(&self, system: &str) -> SaConfig {
        SaConfig {
            seed: self.stage_seed(&format!("optimize-{system}")),
            ..self.sa.clone()
        }
    }
}
