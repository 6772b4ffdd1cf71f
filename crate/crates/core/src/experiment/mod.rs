//! Config-driven runner for the ROI comparison: dataset, central-scan
//! selection, subject split, ROI extraction, one model per ROI variant,
//! test-set scoring, metrics and pairwise DeLong tests, then reports.
//!
//! Every stage writes its outputs under the run directory, so a run can be
//! resumed or inspected stage by stage.

pub mod report;
mod runner;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{ComparisonResult, DelongMode, MetricsReport};
use crate::nn::{ModelConfig, TrainConfig};
use crate::roi::{RoiKind, RoiRequest};
use crate::synth::SynthConfig;

pub use runner::{
    pairwise_delong, read_scores, score_set_from_rows, write_scores, PreparedData, RoiSample,
    RoiSet, Runner, ScoreRow,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl ExperimentError {
    pub(crate) fn stage<E>(stage: &'static str) -> impl FnOnce(E) -> Self
    where
        E: Into<Box<dyn std::error::Error + Send + Sync>>,
    {
        move |e| ExperimentError::Stage {
            stage,
            source: e.into(),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Validation(_))
    }
}

/// Where the scans come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Path to a `manifest.json`; scan paths resolve against its directory.
    Manifest(PathBuf),
    /// Generate a synthetic dataset inside the run directory.
    Synth(SynthConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synth(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bootstrap_b: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub delong_mode: DelongMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_b: 1000,
            alpha: 0.05,
            threshold: 0.5,
            delong_mode: DelongMode::Unpaired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Fraction of each volume's B-scans kept, centred on the fovea.
    pub keep_fraction: f64,
    /// Train, validation, test.
    pub split_ratios: [f64; 3],
    pub roi_variants: Vec<RoiRequest>,
    pub model: ModelConfig,
    /// `train.seed` is replaced per variant by a seed derived from `seed`.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Parent of the timestamped run directory.
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Variants trained concurrently.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            keep_fraction: 0.4,
            split_ratios: [0.8, 0.1, 0.1],
            roi_variants: RoiRequest::paper_variants(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs"),
            seed: 2023,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Validation(format!("reading {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Validation(m));
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction must be in (0, 1], got {}", self.keep_fraction));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split_ratios must be positive and sum to 1, got {:?}",
                self.split_ratios
            ));
        }
        if self.roi_variants.is_empty() {
            return bad("roi_variants is empty".into());
        }
        let mut seen = HashSet::new();
        for v in &self.roi_variants {
            v.validate()
                .map_err(|e| ExperimentError::Validation(e.to_string()))?;
            if !seen.insert(v.variant_name()) {
                return bad(format!("duplicate ROI variant {}", v.variant_name()));
            }
            if v.target_size != self.model.input_size {
                return bad(format!(
                    "variant {} resizes to {:?} but the model expects {:?}",
                    v.variant_name(),
                    v.target_size,
                    self.model.input_size
                ));
            }
        }
        self.model
            .validate()
            .map_err(|e| ExperimentError::Validation(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ExperimentError::Validation(e.to_string()))?;
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()
                .map_err(|e| ExperimentError::Validation(e.to_string()))?;
        }
        let e = &self.eval;
        if e.bootstrap_b < 100 {
            return bad(format!("eval.bootstrap_b must be at least 100, got {}", e.bootstrap_b));
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return bad(format!("eval.alpha must be in (0, 1), got {}", e.alpha));
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return bad(format!("eval.threshold must be in [0, 1], got {}", e.threshold));
        }
        if self.threads < 1 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Set every variant's resize target and the model input at once.
    pub fn with_input_size(mut self, rows: usize, cols: usize) -> Self {
        self.model.input_size = [rows, cols];
        for v in &mut self.roi_variants {
            v.target_size = [rows, cols];
        }
        self
    }
}

/// Metrics of one trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub name: String,
    pub kind: RoiKind,
    pub method: Option<crate::roi::RoiMethod>,
    pub report: MetricsReport,
}

/// DeLong comparison of two variants, `a` listed before `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: ComparisonResult,
}

/// Everything derived from the score files; written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variants: Vec<VariantMetrics>,
    /// Upper triangle in variant order: (0,1), (0,2), ..., (k-2,k-1).
    pub comparisons: Vec<PairComparison>,
}

impl Evaluation {
    pub fn variant(&self, name: &str) -> Option<&VariantMetrics> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn auroc(&self, name: &str) -> Option<f64> {
        self.variant(name).map(|v| v.report.auroc.point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub run_dir: PathBuf,
    pub config: ExperimentConfig,
    pub evaluation: Evaluation,
    pub histories: Vec<(String, crate::nn::History)>,
    pub artifacts: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
}

/// Load, validate and run a config file end to end.
pub fn run_experiment(config_path: &Path) -> Result<RunResults, ExperimentError> {
    let config = ExperimentConfig::load(config_path)?;
    Runner::create(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        assert_eq!(c.roi_variants.len(), 8);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seeed": 1}"#).is_err());
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"dataset": {"manifest": "data/manifest.json"}, "seed": 4}"#)
                .unwrap();
        assert_eq!(c.dataset, DatasetSource::Manifest("data/manifest.json".into()));
        let dup = ExperimentConfig {
            roi_variants: vec![RoiRequest::new(RoiKind::WholeImage, None); 2],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
        let mismatch = ExperimentConfig {
            roi_variants: vec![RoiRequest::new(RoiKind::WholeImage, None).with_target(64, 64)],
            ..Default::default()
        };
        assert!(mismatch.validate().unwrap_err().is_validation());
        let c = ExperimentConfig::default().with_input_size(96, 128);
        c.validate().unwrap();
    }
}
