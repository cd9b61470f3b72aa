//! Self-describing JSON checkpoints of learned approximators.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::single_critic::TabularCritic;

pub const CHECKPOINT_FORMAT: &str = "ctflow-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Approximator {
    Tabular(TabularCritic),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub algo: String,
    pub config_hash: String,
    pub step: u64,
    pub parts: BTreeMap<String, Approximator>,
}

impl Checkpoint {
    pub fn new(algo: &str, config_hash: &str, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            algo: algo.to_string(),
            config_hash: config_hash.to_string(),
            step,
            parts: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, part: Approximator) -> Self {
        self.parts.insert(name.to_string(), part);
        self
    }

    pub fn part(&self, name: &str) -> Result<&Approximator> {
        self.parts.get(name).ok_or_else(|| Error::Input(format!("checkpoint has no part `{name}`")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        Ok(ck)
    }
}
