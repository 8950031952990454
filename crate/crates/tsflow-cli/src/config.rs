//! Run configuration: TOML schema, `--section.key value` overrides, and
//! whole-config validation that reports every violation at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tsflow_core::cfm::{Coupling, TrainConfig};
use tsflow_core::data::{FileFormat, SyntheticKind};
use tsflow_core::gp::{KernelKind, KernelSpec};
use tsflow_core::net::ModelConfig;
use tsflow_core::sampling::SamplerConfig;

use crate::CliError;

/// Where the data comes from: an on-disk file or a synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Path to a CSV (`id,timestamp_index,value`) or JSONL file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// File format; inferred from the extension when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FileFormat>,
    /// Synthetic generator kind (alternative to `path`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticKind>,
    pub n_series: usize,
    pub length: usize,
    pub noise_std: f64,
    pub period: usize,
    pub context_len: usize,
    pub pred_len: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            format: None,
            synthetic: None,
            n_series: 8,
            length: 480,
            noise_std: 0.1,
            period: 24,
            context_len: 24,
            pred_len: 24,
        }
    }
}

impl DatasetConfig {
    pub fn resolved_format(&self) -> FileFormat {
        if let Some(f) = self.format {
            return f;
        }
        match self.path.as_ref().and_then(|p| p.extension()) {
            Some(e) if e == "jsonl" => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

/// Network architecture section; `input_len` is derived from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conditional: bool,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub num_blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            conditional: true,
            hidden_dim: 64,
            time_embed_dim: 64,
            num_blocks: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Master seed; copied into the train and sampler sections after parsing
    /// (and overridable via the TSFLOW_SEED environment variable).
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub prior: KernelSpec,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            prior: KernelSpec::default_for(KernelKind::Isotropic),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl RunConfig {
    /// The window length L = C + P.
    pub fn input_len(&self) -> usize {
        self.dataset.context_len + self.dataset.pred_len
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.input_len(),
            hidden_dim: self.model.hidden_dim,
            time_embed_dim: self.model.time_embed_dim,
            num_blocks: self.model.num_blocks,
            conditional: self.model.conditional,
        }
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let d = &self.dataset;
        match (&d.path, d.synthetic) {
            (None, None) => errs.push(
                "dataset.path: missing (set dataset.path or dataset.synthetic)".into(),
            ),
            (Some(_), Some(_)) => errs.push(
                "dataset.path / dataset.synthetic: set exactly one, not both".into(),
            ),
            (Some(p), None) => {
                if !p.exists() {
                    errs.push(format!("dataset.path: '{}' does not exist", p.display()));
                }
            }
            (None, Some(_)) => {
                if d.n_series == 0 {
                    errs.push("dataset.n_series: must be >= 1".into());
                }
                if d.length < d.context_len + 3 * d.pred_len {
                    errs.push(format!(
                        "dataset.length: {} < context_len + 3*pred_len = {}",
                        d.length,
                        d.context_len + 3 * d.pred_len
                    ));
                }
                if d.noise_std < 0.0 {
                    errs.push("dataset.noise_std: must be >= 0".into());
                }
            }
        }
        if d.period == 0 {
            errs.push("dataset.period: must be >= 1".into());
        }
        if d.context_len == 0 {
            errs.push("dataset.context_len: must be >= 1".into());
        }
        if d.pred_len == 0 {
            errs.push("dataset.pred_len: must be >= 1".into());
        }
        let m = &self.model;
        if m.hidden_dim == 0 {
            errs.push("model.hidden_dim: must be >= 1".into());
        }
        if m.time_embed_dim == 0 {
            errs.push("model.time_embed_dim: must be >= 1".into());
        }
        if m.num_blocks == 0 {
            errs.push("model.num_blocks: must be >= 1".into());
        }
        if let Err(e) = self.prior.validate() {
            errs.push(format!("prior: {e}"));
        }
        if let Err(e) = self.train.validate() {
            errs.push(format!("train: {e}"));
        }
        if !m.conditional && self.train.coupling == Coupling::Gpr {
            errs.push("train.coupling: gpr coupling requires a conditional model".into());
        }
        if let Err(e) = self.sampler.validate() {
            errs.push(format!("sampler: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(errs))
        }
    }
}

const OVERRIDE_SECTIONS: [&str; 5] = ["dataset", "model", "prior", "train", "sampler"];
const OVERRIDE_TOP_KEYS: [&str; 2] = ["output_dir", "seed"];

/// Parses `--section.key value` (or `--section.key=value`) pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| {
            CliError::Validation(vec![format!("override '{a}': expected --section.key value")])
        })?;
        let (key, val) = if let Some((k, v)) = key.split_once('=') {
            (k.to_string(), v.to_string())
        } else {
            let v = it.next().ok_or_else(|| {
                CliError::Validation(vec![format!("override '--{key}': missing value")])
            })?;
            (key.to_string(), v.to_string())
        };
        let known = match key.split_once('.') {
            Some((section, rest)) => {
                OVERRIDE_SECTIONS.contains(&section) && !rest.is_empty()
            }
            None => OVERRIDE_TOP_KEYS.contains(&key.as_str()),
        };
        if !known {
            return Err(CliError::Validation(vec![format!(
                "override '--{key}': unknown config key (sections: {}; top-level: {})",
                OVERRIDE_SECTIONS.join(", "),
                OVERRIDE_TOP_KEYS.join(", ")
            )]));
        }
        out.push((key, val));
    }
    Ok(out)
}

/// Interprets an override value with TOML scalar typing.
fn parse_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

fn set_path(root: &mut toml::Value, dotted: &str, value: toml::Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| {
            CliError::Validation(vec![format!("override '{dotted}': '{part}' is not a table")])
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    unreachable!("dotted paths are non-empty")
}

/// Loads a config file, applies overrides and TSFLOW_SEED, and propagates
/// the master seed and prior into the train/sampler sections.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Validation(vec![format!("config '{}': {e}", path.display())])
    })?;
    let mut root: toml::Value = text.parse().map_err(|e| {
        CliError::Validation(vec![format!("config '{}': {e}", path.display())])
    })?;
    for (key, raw) in parse_overrides(overrides)? {
        set_path(&mut root, &key, parse_value(&raw))?;
    }
    if let Ok(seed) = std::env::var("TSFLOW_SEED") {
        let seed: u64 = seed.parse().map_err(|_| {
            CliError::Validation(vec![format!("TSFLOW_SEED: '{seed}' is not a valid seed")])
        })?;
        set_path(&mut root, "seed", toml::Value::Integer(seed as i64))?;
    }
    let mut cfg: RunConfig = root.try_into().map_err(|e| {
        CliError::Validation(vec![format!("config '{}': {e}", path.display())])
    })?;
    cfg.train.seed = cfg.seed;
    cfg.sampler.seed = cfg.seed;
    cfg.train.prior = cfg.prior;
    if cfg.model.conditional {
        cfg.train.coupling = Coupling::Gpr;
    }
    Ok(cfg)
}
