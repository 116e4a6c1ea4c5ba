//! TOML run configuration.
//!
//! One file describes a whole run: where the data comes from, how the
//! held-out verification pairs are built, the model shape, and the pretrain,
//! finetune and bench phases. Every random draw is derived from the single
//! top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tripletmine::eval::{generate_synthetic, PairProtocol, SyntheticSpec, VerificationSet, DEFAULT_FOLDS};
use tripletmine::mining::{MiningConfig, Strategy};
use tripletmine::seed;
use tripletmine::trainer::{
    FinetuneConfig, MiningMethod, ModelConfig, PretrainConfig, DEFAULT_FINETUNE_ITERATIONS, DEFAULT_LR,
    DEFAULT_MARGIN, DEFAULT_OFFLINE_REFRESH, DEFAULT_PRETRAIN_ITERATIONS, DEFAULT_PRETRAIN_LR,
    DEFAULT_ZERO_ACTIVE_WARNING,
};
use tripletmine::{LabeledDataset, PkConfig};

/// A problem with the configuration itself, reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `synthetic` or `train_csv`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Generated data; its `seed` field is replaced by the run seed.
    pub synthetic: Option<SyntheticSpec>,
    /// Identities of the synthetic set used for training; the rest are held
    /// out for verification.
    #[serde(default = "default_train_identities")]
    pub train_identities: usize,
    /// `label,x_0,...` CSV of training samples.
    pub train_csv: Option<PathBuf>,
    /// `label,x_0,...` CSV of held-out samples for verification.
    pub heldout_csv: Option<PathBuf>,
}

fn default_train_identities() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pairs_per_class: usize,
    pub folds: usize,
    /// Fixed `id_a,id_b,same` pairs over the held-out samples instead of
    /// generated ones.
    pub protocol_csv: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pairs_per_class: 1000,
            folds: DEFAULT_FOLDS,
            protocol_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            hidden: m.hidden,
            embed_dim: m.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub iterations: usize,
    pub persons: usize,
    pub per_person: usize,
    pub lr: f64,
    pub eval_interval: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_PRETRAIN_ITERATIONS,
            persons: 8,
            per_person: 3,
            lr: DEFAULT_PRETRAIN_LR,
            eval_interval: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodName {
    Online,
    Offline,
    SemiOnline,
}

impl MethodName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::Online => "online",
            MethodName::Offline => "offline",
            MethodName::SemiOnline => "semi_online",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub iterations: usize,
    pub persons: usize,
    pub per_person: usize,
    pub strategy: Strategy,
    pub margin: f64,
    pub method: MethodName,
    pub pool_window: usize,
    pub offline_refresh: usize,
    pub lr: f64,
    pub eval_interval: usize,
    pub zero_active_warning: usize,
    /// Initial parameters; defaults to the pretrain checkpoint in `out_dir`.
    pub checkpoint: Option<PathBuf>,
    /// Start from random parameters instead of a pretrained checkpoint.
    pub from_scratch: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_FINETUNE_ITERATIONS,
            persons: 8,
            per_person: 3,
            strategy: Strategy::MinMax,
            margin: DEFAULT_MARGIN,
            method: MethodName::Online,
            pool_window: 10,
            offline_refresh: DEFAULT_OFFLINE_REFRESH,
            lr: DEFAULT_LR,
            eval_interval: 500,
            zero_active_warning: DEFAULT_ZERO_ACTIVE_WARNING,
            checkpoint: None,
            from_scratch: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Strategies,
    Pk,
    Methods,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sweep: SweepKind,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// `[persons, per_person]` pairs sharing one batch size.
    pub pk: Vec<[usize; 2]>,
    pub methods: Vec<MethodName>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sweep: SweepKind::Strategies,
            seeds: vec![0, 1, 2, 3, 4],
            strategies: Strategy::ALL.to_vec(),
            pk: vec![[12, 2], [8, 3], [4, 6], [2, 12]],
            methods: vec![MethodName::Online, MethodName::SemiOnline, MethodName::Offline],
        }
    }
}

impl BenchSection {
    /// Length of the list the chosen sweep iterates over.
    pub fn cells(&self) -> usize {
        match self.sweep {
            SweepKind::Strategies => self.strategies.len(),
            SweepKind::Pk => self.pk.len(),
            SweepKind::Methods => self.methods.len(),
        }
    }
}

fn require_file(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::new(format!("{what} not found: {}", path.display())))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.data;
        match (&d.synthetic, &d.train_csv) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new("data: set either `synthetic` or `train_csv`, not both"))
            }
            (None, None) => return Err(ConfigError::new("data: one of `synthetic` or `train_csv` is required")),
            (Some(spec), None) => {
                spec.validate().map_err(|e| ConfigError::new(format!("data.synthetic: {e}")))?;
                if d.train_identities < 2 || d.train_identities >= spec.identities {
                    return Err(ConfigError::new(format!(
                        "data.train_identities must leave held-out identities: need 2..{}, got {}",
                        spec.identities, d.train_identities
                    )));
                }
                if d.heldout_csv.is_some() {
                    return Err(ConfigError::new("data.heldout_csv only applies to CSV data"));
                }
                for (section, persons) in [("pretrain", self.pretrain.persons), ("finetune", self.finetune.persons)] {
                    if persons > d.train_identities {
                        return Err(ConfigError::new(format!(
                            "{section}.persons = {persons} exceeds data.train_identities = {}",
                            d.train_identities
                        )));
                    }
                }
            }
            (None, Some(train)) => {
                require_file("training data", train)?;
                if let Some(held) = &d.heldout_csv {
                    require_file("held-out data", held)?;
                }
            }
        }
        if let Some(p) = &self.eval.protocol_csv {
            require_file("pair protocol", p)?;
        }
        if self.eval.folds < 2 || self.eval.pairs_per_class < self.eval.folds {
            return Err(ConfigError::new("eval: need folds >= 2 and pairs_per_class >= folds"));
        }
        if self.model.embed_dim == 0 || self.model.hidden.contains(&0) {
            return Err(ConfigError::new("model: layer sizes must be positive"));
        }
        self.pretrain_config(None).validate().map_err(|e| ConfigError::new(format!("pretrain: {e}")))?;
        self.finetune_config()?
            .validate()
            .map_err(|e| ConfigError::new(format!("finetune: {e}")))?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.model.hidden.clone(),
            embed_dim: self.model.embed_dim,
        }
    }

    pub fn pretrain_config(&self, checkpoint: Option<PathBuf>) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            iterations: p.iterations,
            pk: PkConfig {
                persons: p.persons,
                per_person: p.per_person,
            },
            lr: p.lr,
            eval_interval: p.eval_interval,
            seed: seed::derive(self.seed, "pretrain"),
            model: self.model_config(),
            checkpoint,
        }
    }

    pub fn mining_method(&self) -> MiningMethod {
        let f = &self.finetune;
        match f.method {
            MethodName::Online => MiningMethod::Online,
            MethodName::Offline => MiningMethod::Offline {
                refresh: f.offline_refresh,
            },
            MethodName::SemiOnline => MiningMethod::SemiOnline { window: f.pool_window },
        }
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig, ConfigError> {
        let f = &self.finetune;
        let mining = MiningConfig::new(f.strategy, f.margin, seed::derive(self.seed, "mining"))
            .map_err(|e| ConfigError::new(format!("finetune: {e}")))?;
        Ok(FinetuneConfig {
            iterations: f.iterations,
            pk: PkConfig {
                persons: f.persons,
                per_person: f.per_person,
            },
            mining,
            method: self.mining_method(),
            lr: f.lr,
            eval_interval: f.eval_interval,
            seed: seed::derive(self.seed, "finetune"),
            zero_active_warning: f.zero_active_warning,
        })
    }

    pub fn pretrain_checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("pretrain.ckpt")
    }

    /// Checkpoint finetuning starts from.
    pub fn finetune_initial_path(&self) -> PathBuf {
        self.finetune
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.pretrain_checkpoint_path())
    }

    /// Training data and, when available, the held-out verification set.
    pub fn load_data(&self) -> tripletmine::Result<(LabeledDataset, Option<VerificationSet>)> {
        let (train, held) = match (&self.data.synthetic, &self.data.train_csv) {
            (Some(spec), _) => {
                let spec = SyntheticSpec {
                    seed: self.seed,
                    ..spec.clone()
                };
                let all = generate_synthetic(&spec)?;
                let (train, held) = all.split_identities(self.data.train_identities)?;
                (train, Some(held))
            }
            (None, Some(path)) => {
                let train = LabeledDataset::load_csv(path)?;
                let held = self.data.heldout_csv.as_deref().map(LabeledDataset::load_csv).transpose()?;
                (train, held)
            }
            (None, None) => unreachable!("validated config names a data source"),
        };
        let eval = match held {
            None => None,
            Some(dataset) => {
                let protocol = match &self.eval.protocol_csv {
                    Some(path) => PairProtocol::load_csv(path, self.eval.folds)?,
                    None => PairProtocol::generate(
                        &dataset,
                        self.eval.pairs_per_class,
                        self.eval.folds,
                        seed::derive(self.seed, "protocol"),
                    )?,
                };
                Some(VerificationSet { dataset, protocol })
            }
        };
        Ok((train, eval))
    }
}
