//! Run configuration files.
//!
//! A run config is a TOML document holding a training config plus an
//! optional `[run]` table with orchestration settings. Unknown keys are
//! rejected and errors name the offending key path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::VariantName;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Training seeds; empty means the config's own `seed`.
    pub seeds: Vec<u64>,
    /// Variants for `ablate`; empty means the config's own variant.
    pub variants: Vec<VariantName>,
    pub out_dir: Option<PathBuf>,
    /// Evaluation episodes per agent count.
    pub eval_episodes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
}

fn located(path: String, msg: impl std::fmt::Display) -> Error {
    if path.is_empty() || path == "." {
        Error::Config(msg.to_string())
    } else {
        Error::Config(format!("at `{path}`: {msg}"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let run = match table.remove("run") {
            Some(value) => serde_path_to_error::deserialize::<_, RunSection>(value)
                .map_err(|e| located(format!("run.{}", e.path()), e.inner()))?,
            None => RunSection::default(),
        };
        let train: TrainConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| located(e.path().to_string(), e.inner()))?;
        train.validate()?;
        Ok(Self { run, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(&self.train).map_err(|e| Error::Serde(e.to_string()))?;
        if self.run != RunSection::default() {
            let run = toml::Value::try_from(&self.run).map_err(|e| Error::Serde(e.to_string()))?;
            table.insert("run".into(), run);
        }
        toml::to_string(&table).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Hex SHA-256 of the serialized form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.run.seeds.clone()
        }
    }
}
