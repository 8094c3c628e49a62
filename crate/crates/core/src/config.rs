//! Flat key-value run configuration.
//!
//! One `key = value` per line, `#` comments, no sections. Command-line
//! overrides arrive as `key=value` strings. Relative paths resolve against
//! the config file's directory so bundled manifests work from any working
//! directory. Typed accessors name the offending key in every error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::synthesis::{CommitteeMember, GeneratorSpec, ScorerKind};
use crate::textproc::SequenceLimits;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CoreError::parse(path, lineno + 1, "expected key = value"));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(RunConfig { values, base_dir })
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(CoreError::Config(format!("--set {item}: expected key=value")));
            };
            self.values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| CoreError::Config(format!("missing required config key {key}")))
    }

    /// Path value resolved against the config directory.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let raw = self.require(key)?;
        let p = PathBuf::from(raw);
        Ok(if p.is_absolute() { p } else { self.base_dir.join(p) })
    }

    /// Path that must already exist when the command starts.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(CoreError::Config(format!("{key}: path {} does not exist", p.display())));
        }
        Ok(p)
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            CoreError::Config(format!(
                "config key {key}: cannot parse {raw:?} as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| self.parse_as(key, v))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key).map_or(Ok(default), |v| self.parse_as(key, v))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| self.parse_as(key, v))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => {
                Err(CoreError::Config(format!("config key {key}: expected true/false, got {other}")))
            }
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    /// Model shape; vocabulary size is supplied by the caller because it
    /// comes from the vocab file, not the config.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size,
            d_model: self.usize_or("d_model", 48)?,
            n_layers: self.usize_or("n_layers", 2)?,
            n_heads: self.usize_or("n_heads", 4)?,
            d_ff: self.usize_or("d_ff", 96)?,
            max_seq_len: self.usize_or("max_seq_len", 256)?,
            seed: self.u64_or("seed", 0)?,
            tied_output: self.bool_or("tied_output", false)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let cfg = TrainConfig {
            lambda: self.f64_or("lambda", defaults.lambda)?,
            tau: self.f64_or("tau", defaults.tau)?,
            lr: self.f64_or("lr", defaults.lr)?,
            batch_size: self.usize_or("batch_size", defaults.batch_size)?,
            n_hard_negatives: self.usize_or("n_hard_negatives", defaults.n_hard_negatives)?,
            max_thought_tokens: self.usize_or("max_thought_tokens", defaults.max_thought_tokens)?,
            k_thoughts: self.usize_or("k_thoughts", defaults.k_thoughts)?,
            epochs: self.usize_or("epochs", defaults.epochs)?,
            seed: self.u64_or("seed", defaults.seed)?,
            normalize: self.bool_or("normalize", defaults.normalize)?,
            optimizer: self.string_or("optimizer", &defaults.optimizer),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn limits(&self) -> Result<SequenceLimits> {
        let d = SequenceLimits::default();
        Ok(SequenceLimits {
            max_query_tokens: self.usize_or("max_query_tokens", d.max_query_tokens)?,
            max_text_tokens: self.usize_or("max_text_tokens", d.max_text_tokens)?,
        })
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        let kind = self.string_or("generator", "synthetic");
        let spec = match kind.as_str() {
            "synthetic" => {
                let table_path = self.existing_path("expansion_table")?;
                let text = std::fs::read_to_string(&table_path)
                    .map_err(|e| CoreError::io(&table_path, e))?;
                let expansion: BTreeMap<String, String> = serde_json::from_str(&text)
                    .map_err(|e| CoreError::parse(&table_path, 0, e.to_string()))?;
                GeneratorSpec::Synthetic {
                    expansion,
                    noise_seed: self.u64_or("noise_seed", 0)?,
                    max_tokens: self.usize_or("gen_max_tokens", 256)?,
                }
            }
            "remote" => GeneratorSpec::Remote {
                endpoint: self.require("endpoint")?.to_string(),
                model: self.require("gen_model")?.to_string(),
                max_tokens: self.usize_or("gen_max_tokens", 256)?,
                timeout_secs: self.u64_or("timeout_secs", 30)?,
                retries: self.usize_or("retries", 2)?,
                api_key_env: self.string_or("api_key_env", "MULL_API_KEY"),
                temperature: self.f64_or("gen_temperature", 1.0)?,
            },
            other => {
                return Err(CoreError::Config(format!(
                    "config key generator: expected synthetic or remote, got {other}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Committee members from indexed keys `committee.N.*`.
    pub fn committee(&self) -> Result<Vec<CommitteeMember>> {
        let mut members = Vec::new();
        for idx in 0.. {
            let prefix = format!("committee.{idx}");
            let Some(kind) = self.get(&format!("{prefix}.kind")) else { break };
            let name = self.string_or(&format!("{prefix}.name"), &format!("member{idx}"));
            let member = match kind {
                "lexical-bm25" => CommitteeMember {
                    name,
                    kind: ScorerKind::LexicalBm25 {
                        k1: self.f64_or(&format!("{prefix}.k1"), 0.9)?,
                        b: self.f64_or(&format!("{prefix}.b"), 0.4)?,
                    },
                },
                "embedding-cosine" => CommitteeMember {
                    name,
                    kind: ScorerKind::EmbeddingCosine {
                        checkpoint: self.existing_path(&format!("{prefix}.checkpoint"))?,
                    },
                },
                other => {
                    return Err(CoreError::Config(format!(
                        "config key {prefix}.kind: unknown scorer {other}"
                    )))
                }
            };
            member.validate()?;
            members.push(member);
        }
        if members.is_empty() {
            return Err(CoreError::Config("no committee members configured".into()));
        }
        Ok(members)
    }

    /// Worker-thread count; 0 or absent means all available cores.
    pub fn threads(&self) -> Result<usize> {
        self.usize_or("threads", 0)
    }
}
