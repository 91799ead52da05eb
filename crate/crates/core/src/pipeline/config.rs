//! Pipeline configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::bridge::EpochPolicy;
use crate::classify::router::DEFAULT_MIN_TOPIC_SIZE;
use crate::corpus::{ColumnMap, DatasetFormat, SplitSpec};
use crate::evaluate::ZeroDivision;
use crate::textprep::{bundled_stopwords, parse_stopwords, Field, TokenizerConfig};
use crate::topics::LdaConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Mandatory; drives every stochastic stage.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub topic_tokenizer: TokenizerSettings,
    #[serde(default)]
    pub classifier_tokenizer: TokenizerSettings,
    #[serde(default)]
    pub lda: LdaSettings,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub external: Option<ExternalSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: DatasetFormat,
    #[serde(default)]
    pub columns: ColumnMap,
    /// Keep only reports whose ordering key lies in `[from, to]`.
    #[serde(default)]
    pub order_key_range: Option<[i64; 2]>,
}

fn default_format() -> DatasetFormat {
    DatasetFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    pub lowercase: bool,
    pub remove_stopwords: bool,
    /// One word per line; the bundled English list when absent.
    pub stopword_file: Option<PathBuf>,
    pub min_token_length: usize,
    pub fields: Vec<Field>,
    /// Minimum document frequency for a vocabulary entry.
    pub min_count: u32,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        let base = TokenizerConfig::default();
        TokenizerSettings {
            lowercase: base.lowercase,
            remove_stopwords: base.remove_stopwords,
            stopword_file: None,
            min_token_length: base.min_token_length,
            fields: base.fields,
            min_count: 2,
        }
    }
}

impl TokenizerSettings {
    pub fn resolve(&self) -> Result<TokenizerConfig, PipelineError> {
        let stopwords = match &self.stopword_file {
            Some(path) => {
                let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
                parse_stopwords(file)?
            }
            None => bundled_stopwords(),
        };
        let config = TokenizerConfig {
            lowercase: self.lowercase,
            remove_stopwords: self.remove_stopwords,
            stopwords,
            min_token_length: self.min_token_length,
            fields: self.fields.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSettings {
    pub num_topics: usize,
    /// `50 / num_topics` when absent.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub inference_iterations: usize,
}

impl Default for LdaSettings {
    fn default() -> Self {
        let base = LdaConfig::default();
        LdaSettings {
            num_topics: base.num_topics,
            alpha: None,
            beta: base.beta,
            iterations: base.iterations,
            burn_in: base.burn_in,
            inference_iterations: base.inference_iterations,
        }
    }
}

impl LdaSettings {
    pub fn resolve(&self, seed: u64) -> Result<LdaConfig, PipelineError> {
        let mut config = LdaConfig::with_topics(self.num_topics);
        if let Some(alpha) = self.alpha {
            config.alpha = alpha;
        }
        config.beta = self.beta;
        config.iterations = self.iterations;
        config.burn_in = self.burn_in;
        config.inference_iterations = self.inference_iterations;
        config.seed = seed;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub kind: String,
    pub min_topic_size: usize,
    pub laplace: f64,
    pub var_smoothing: f64,
    pub zero_division: ZeroDivision,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            kind: "multinomial_nb".into(),
            min_topic_size: DEFAULT_MIN_TOPIC_SIZE,
            laplace: 1.0,
            var_smoothing: 1e-9,
            zero_division: ZeroDivision::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSettings {
    /// Program and arguments.
    pub command: Vec<String>,
    #[serde(default = "default_handshake_secs")]
    pub handshake_timeout_secs: u64,
    #[serde(default = "default_epochs")]
    pub default_epochs: u32,
    /// Topic id (as a string key) to epoch count.
    #[serde(default)]
    pub epoch_overrides: BTreeMap<String, u32>,
}

fn default_handshake_secs() -> u64 {
    30
}

fn default_epochs() -> u32 {
    EpochPolicy::default().default_epochs
}

impl ExternalSettings {
    pub fn epoch_policy(&self) -> Result<EpochPolicy, PipelineError> {
        let mut policy = EpochPolicy {
            default_epochs: self.default_epochs,
            overrides: BTreeMap::new(),
        };
        for (key, &epochs) in &self.epoch_overrides {
            let topic: u32 = key
                .parse()
                .map_err(|_| PipelineError::Config(format!("epoch override key `{key}` is not a topic id")))?;
            policy.overrides.insert(topic, epochs);
        }
        policy
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(policy)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config = Self::parse(&text)?;
        config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<PipelineConfig, PipelineError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Relative paths in the file are taken relative to the file itself.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.path);
        for t in [&mut self.topic_tokenizer, &mut self.classifier_tokenizer] {
            if let Some(p) = t.stopword_file.as_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "split.train_fraction must be in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if self.classifier.min_topic_size == 0 {
            return Err(PipelineError::Config("classifier.min_topic_size must be at least 1".into()));
        }
        if !(self.classifier.laplace > 0.0) {
            return Err(PipelineError::Config("classifier.laplace must be positive".into()));
        }
        if !(self.classifier.var_smoothing >= 0.0) {
            return Err(PipelineError::Config("classifier.var_smoothing must be non-negative".into()));
        }
        self.lda.resolve(self.seed)?;
        if let Some(ext) = &self.external {
            if ext.command.is_empty() {
                return Err(PipelineError::Config("external.command is empty".into()));
            }
            ext.epoch_policy()?;
        }
        Ok(())
    }

    /// The configuration as TOML, e.g. for the bundle.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
