use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{DataFormat, LoadOptions};
use crate::metrics::GiniPopulation;
use crate::mf::MfHyperparams;
use crate::rerank::{RerankConfig, TargetMode};

/// The three compared recommendation pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    /// Plain top-K of the base recommender.
    #[serde(rename = "mf")]
    Mf,
    /// Reranking toward equal per-round slot targets.
    #[serde(rename = "mf+dm-static")]
    MfDmStatic,
    /// Reranking toward targets scaled by inverse cumulative exposure.
    #[serde(rename = "mf+dm-dynamic")]
    MfDmDynamic,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Mf => "mf",
            Pipeline::MfDmStatic => "mf+dm-static",
            Pipeline::MfDmDynamic => "mf+dm-dynamic",
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flat, fully resolved simulation configuration.
///
/// Field names are the keys of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub separator: String,
    #[serde(rename = "T")]
    pub rounds: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub alpha: f64,
    pub split_ratio: f64,
    pub seed: u64,
    pub pipeline: Pipeline,
    /// Dynamic target rule; only read by the `mf+dm-dynamic` pipeline.
    pub target_mode: TargetMode,
    pub epsilon: Option<f64>,
    /// Share of an item's long-list appearances its capped dynamic target may claim.
    pub target_cap_fraction: f64,
    pub discrepancy_weight: Option<i64>,
    pub mf_factors: usize,
    pub mf_learning_rate: f64,
    pub mf_regularization: f64,
    pub mf_epochs: usize,
    pub mf_negatives: usize,
    pub mf_init_std: f64,
    pub mf_warm_start: bool,
    /// Keep the round-1 test split for every round instead of re-splitting.
    pub freeze_test_set: bool,
    pub gini_population: GiniPopulation,
    pub dump_targets: bool,
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mf = MfHyperparams::default();
        SimConfig {
            dataset: PathBuf::from("data/ml-1m/ratings.dat"),
            format: DataFormat::MovielensDelimited,
            separator: "::".to_owned(),
            rounds: 600,
            k: 10,
            l: 40,
            alpha: -0.5,
            split_ratio: 0.8,
            seed: 42,
            pipeline: Pipeline::MfDmDynamic,
            target_mode: TargetMode::DynamicCapped,
            epsilon: None,
            target_cap_fraction: 0.75,
            discrepancy_weight: None,
            mf_factors: mf.factors,
            mf_learning_rate: mf.learning_rate,
            mf_regularization: mf.regularization,
            mf_epochs: mf.epochs,
            mf_negatives: mf.negatives_per_positive,
            mf_init_std: mf.init_std,
            mf_warm_start: false,
            freeze_test_set: false,
            gini_population: GiniPopulation::Catalog,
            dump_targets: true,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rounds < 1 {
            return Err("T must be >= 1".into());
        }
        if !(self.alpha < 0.0) {
            return Err(format!("alpha must be negative, got {}", self.alpha));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if !(self.target_cap_fraction > 0.0 && self.target_cap_fraction <= 1.0) {
            return Err(format!("target_cap_fraction must lie in (0, 1], got {}", self.target_cap_fraction));
        }
        if self.separator.is_empty() {
            return Err("separator must not be empty".into());
        }
        if self.pipeline == Pipeline::MfDmDynamic && self.target_mode == TargetMode::Static {
            return Err("target_mode for mf+dm-dynamic must be dynamic-literal, dynamic-normalized or dynamic-capped".into());
        }
        self.rerank_config().validate().map_err(|e| e.to_string())?;
        self.mf_hyperparams(0).validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            separator: self.separator.clone(),
        }
    }

    pub fn mf_hyperparams(&self, seed: u64) -> MfHyperparams {
        MfHyperparams {
            factors: self.mf_factors,
            learning_rate: self.mf_learning_rate,
            regularization: self.mf_regularization,
            epochs: self.mf_epochs,
            negatives_per_positive: self.mf_negatives,
            init_std: self.mf_init_std,
            seed,
        }
    }

    pub fn rerank_config(&self) -> RerankConfig {
        RerankConfig {
            k: self.k,
            l: self.l,
            discrepancy_weight: self.discrepancy_weight,
            target_mode: match self.pipeline {
                Pipeline::MfDmDynamic => self.target_mode,
                _ => TargetMode::Static,
            },
            epsilon: self.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_protocol() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k, c.l, c.rounds, c.alpha, c.split_ratio), (10, 40, 600, -0.5, 0.8));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            SimConfig { rounds: 0, ..Default::default() },
            SimConfig { alpha: 0.0, ..Default::default() },
            SimConfig { k: 50, ..Default::default() },
            SimConfig { split_ratio: 1.0, ..Default::default() },
            SimConfig { mf_epochs: 0, ..Default::default() },
            SimConfig { target_mode: TargetMode::Static, ..Default::default() },
            SimConfig { target_cap_fraction: 0.0, ..Default::default() },
            SimConfig { target_cap_fraction: 1.5, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in [Pipeline::Mf, Pipeline::MfDmStatic, Pipeline::MfDmDynamic] {
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.as_str()));
            assert_eq!(serde_json::from_str::<Pipeline>(&json).unwrap(), p);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<SimConfig>(r#"{"foo": 1}"#).unwrap_err();
        assert!(err.to_string().contains("foo"));
        let c: SimConfig = serde_json::from_str(r#"{"T": 5, "pipeline": "mf"}"#).unwrap();
        assert_eq!((c.rounds, c.pipeline), (5, Pipeline::Mf));
    }
}
