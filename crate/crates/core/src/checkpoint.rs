//! Single-file JSON record of a training run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::causal::{build_network, NetworkConfig};
use crate::data::{NormStats, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{CausalForecaster, ModelConfig};
use crate::params::{ParamContainer, ParamStore};
use crate::training::{OptimizerState, TrainConfig, TrainHistory, TrainOutcome};

pub const CHECKPOINT_FORMAT: &str = "caf-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub network: NetworkConfig,
    pub stats: NormStats,
    /// Best validation parameters.
    pub params: ParamContainer,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn new(
        seed: u64,
        model: &CausalForecaster,
        train: &TrainConfig,
        split: &SplitSpec,
        outcome: &TrainOutcome,
    ) -> Result<Self> {
        let stats = model
            .stats()
            .cloned()
            .ok_or_else(|| Error::State("model has no normalisation statistics".into()))?;
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            seed,
            model: model.config().clone(),
            network: model.network().to_config(),
            stats,
            params: outcome.params.to_container(),
            train: train.clone(),
            split: split.clone(),
            history: outcome.history.clone(),
            optimizer: outcome.optimizer.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the forecaster with the stored parameters and statistics.
    pub fn forecaster(&self) -> Result<CausalForecaster> {
        let network = build_network(&self.network)?;
        let params = ParamStore::from_container(&self.params)?;
        CausalForecaster::with_params(self.model.clone(), network, params)?.with_stats(self.stats.clone())
    }

    /// State for continuing training with `fit_from`.
    pub fn outcome(&self) -> Result<TrainOutcome> {
        Ok(TrainOutcome {
            params: ParamStore::from_container(&self.params)?,
            history: self.history.clone(),
            optimizer: self.optimizer.clone(),
        })
    }
}
