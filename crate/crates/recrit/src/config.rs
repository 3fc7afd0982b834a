//! Experiment configuration (TOML) and dataset loading (JSONL), with
//! validation that names the offending field or line, plus provenance
//! helpers (config echo, dataset digest) for reproducible runs.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::reward::{StabilizerConfig, StageWeights};
use crate::rollout::http::HttpEngineConfig;
use crate::rollout::sim::{AnswerModel, LatencyDist, LatencyModel};
use crate::rollout::{GenParams, TemplateCatalog};
use crate::trainer::{ToyPolicy, TrainingSetup, UpdateConfig};
use crate::types::{AnswerOption, DomainError, QAItem, QuadrantWeights};

/// Which generation engine `evaluate` runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Simulated,
    Http,
}

/// Simulated-engine section of the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub latency: LatencyModel,
    pub answers: AnswerModel,
    /// Maximum concurrent simulated requests; unlimited when absent.
    pub concurrency: Option<usize>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            latency: LatencyModel {
                initial: LatencyDist::LogNormal { mu: 0.0, sigma: 0.5 },
                critic: LatencyDist::LogNormal { mu: 0.0, sigma: 0.5 },
                seed: 0,
            },
            answers: AnswerModel::default(),
            concurrency: None,
        }
    }
}

/// Loop sizing for training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSizes {
    pub steps: usize,
    pub questions_per_step: usize,
    pub item_pool: usize,
    pub eval_samples: usize,
}

impl Default for TrainingSizes {
    fn default() -> Self {
        TrainingSizes {
            steps: 500,
            questions_per_step: 8,
            item_pool: 16,
            eval_samples: 2048,
        }
    }
}

/// Root experiment configuration. Every field has a default, so an empty
/// file is a valid configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Completion ratio at which a dynamic rollout batch terminates.
    pub rho: f64,
    /// Engine failure fraction above which a run exits with a distinct
    /// status code.
    pub max_engine_failure_rate: f64,
    /// Engine used by `evaluate`.
    pub engine: EngineKind,
    /// Dataset file (JSONL); commands that need one require it.
    pub dataset: Option<String>,
    /// Where runs write their provenance and result artifacts.
    pub output_dir: String,
    pub generation: GenParams,
    pub weights: QuadrantWeights,
    pub stabilizers: StabilizerConfig,
    pub stage_weights: StageWeights,
    pub policy: ToyPolicy,
    pub update: UpdateConfig,
    pub training: TrainingSizes,
    pub simulator: SimulatorConfig,
    pub http: HttpEngineConfig,
    /// Feedback templates; the built-in three-attitude catalog when absent.
    pub templates: Option<TemplateCatalog>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            rho: 0.75,
            max_engine_failure_rate: 0.1,
            engine: EngineKind::Simulated,
            dataset: None,
            output_dir: "out".into(),
            generation: GenParams::default(),
            weights: QuadrantWeights::default(),
            stabilizers: StabilizerConfig::default(),
            stage_weights: StageWeights::default(),
            policy: ToyPolicy::default(),
            update: UpdateConfig::default(),
            training: TrainingSizes::default(),
            simulator: SimulatorConfig::default(),
            http: HttpEngineConfig::default(),
            templates: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, reason: String| ConfigError::Invalid {
            field: field.to_string(),
            reason,
        };
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(invalid("rho", format!("must lie in (0,1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.max_engine_failure_rate) {
            return Err(invalid(
                "max_engine_failure_rate",
                format!("must lie in [0,1], got {}", self.max_engine_failure_rate),
            ));
        }
        if self.generation.max_tokens == 0 {
            return Err(invalid("generation.max_tokens", "must be positive".into()));
        }
        if !(self.generation.temperature >= 0.0) {
            return Err(invalid(
                "generation.temperature",
                format!("must be nonnegative, got {}", self.generation.temperature),
            ));
        }
        self.weights.validate().map_err(|r| invalid("weights", r))?;
        self.stabilizers.validate().map_err(|r| invalid("stabilizers", r))?;
        self.stage_weights.validate().map_err(|r| invalid("stage_weights", r))?;
        self.policy.validate().map_err(|r| invalid("policy", r))?;
        self.update.validate().map_err(|r| invalid("update", r))?;
        if self.training.steps == 0 {
            return Err(invalid("training.steps", "must be positive".into()));
        }
        if self.training.questions_per_step == 0
            || self.training.item_pool == 0
            || self.training.eval_samples == 0
        {
            return Err(invalid(
                "training",
                "questions_per_step, item_pool, and eval_samples must be positive".into(),
            ));
        }
        self.simulator
            .latency
            .initial
            .validate()
            .map_err(|r| invalid("simulator.latency.initial", r))?;
        self.simulator
            .latency
            .critic
            .validate()
            .map_err(|r| invalid("simulator.latency.critic", r))?;
        self.simulator.answers.validate().map_err(|r| invalid("simulator.answers", r))?;
        if self.simulator.concurrency == Some(0) {
            return Err(invalid("simulator.concurrency", "must be positive when set".into()));
        }
        if self.http.concurrency == 0 {
            return Err(invalid("http.concurrency", "must be positive".into()));
        }
        if let Some(templates) = &self.templates {
            templates.validate().map_err(|r| invalid("templates", r))?;
        }
        if self.output_dir.trim().is_empty() {
            return Err(invalid("output_dir", "must be nonempty".into()));
        }
        Ok(())
    }

    /// The feedback templates this configuration selects.
    pub fn template_catalog(&self) -> TemplateCatalog {
        self.templates.clone().unwrap_or_else(TemplateCatalog::default_catalog)
    }

    /// The training setup this configuration describes.
    pub fn training_setup(&self) -> TrainingSetup {
        TrainingSetup {
            policy: self.policy.clone(),
            update: self.update,
            weights: self.weights,
            stabilizers: self.stabilizers,
            stage_weights: self.stage_weights,
            questions_per_step: self.training.questions_per_step,
            item_pool: self.training.item_pool,
            eval_samples: self.training.eval_samples,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a TOML experiment configuration.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    // Referenced paths must exist at load time, not first use.
    if let Some(dataset) = &config.dataset {
        if !Path::new(dataset).is_file() {
            return Err(ConfigError::Invalid {
                field: "dataset".into(),
                reason: format!("file {dataset} does not exist"),
            });
        }
    }
    Ok(config)
}

/// JSONL wire form of one dataset record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    id: String,
    question: String,
    options: Vec<AnswerOption>,
    /// Gold labels as a string of letters, e.g. "AD".
    gold: String,
    domain: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: item {id}: {source}")]
    Invalid {
        line: usize,
        id: String,
        #[source]
        source: DomainError,
    },
    #[error("line {line}: duplicate item id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("dataset contains no records")]
    Empty,
}

/// Reads a JSONL dataset, validating every record. Blank lines are
/// skipped; errors carry 1-based line numbers.
pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file))
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<QAItem>, DatasetError> {
    let mut items = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id: record.id });
        }
        let item = QAItem {
            id: record.id,
            question: record.question,
            options: record.options,
            gold: record.gold.chars().collect(),
            domain_tag: record.domain,
        };
        item.validate().map_err(|source| DatasetError::Invalid {
            line: line_no,
            id: item.id.clone(),
            source,
        })?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(items)
}

/// SHA-256 digest of a byte stream, hex-encoded.
pub fn sha256_hex(mut reader: impl Read) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// What a run records about its inputs so it can be reproduced exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: ExperimentConfig,
    pub dataset_path: Option<String>,
    pub dataset_sha256: Option<String>,
    pub dataset_items: Option<usize>,
}

impl Provenance {
    pub fn for_config(config: &ExperimentConfig) -> Self {
        Provenance {
            config: config.clone(),
            dataset_path: None,
            dataset_sha256: None,
            dataset_items: None,
        }
    }

    pub fn with_dataset(
        mut self,
        path: &Path,
        items: usize,
    ) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let digest = sha256_hex(file).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.dataset_path = Some(path.display().to_string());
        self.dataset_sha256 = Some(digest);
        self.dataset_items = Some(items);
        Ok(self)
    }
}
