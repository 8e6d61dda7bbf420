use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::anchor::DEFAULT_TOP_K;
use crate::rejection::{DEFAULT_LAMBDA, LAMBDA_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    /// Path to a reference backend fixture.
    Reference(PathBuf),
    /// Base URL of a model server.
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSetting {
    Fixed(f64),
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionSetting {
    Never,
    Always,
    Tune,
}

/// Extraction hyperparameters, independent of where the data lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub k: usize,
    pub lambda: LambdaSetting,
    pub expansion: ExpansionSetting,
    pub rejection_enabled: bool,
    pub workers: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            lambda: LambdaSetting::Fixed(DEFAULT_LAMBDA),
            expansion: ExpansionSetting::Never,
            rejection_enabled: true,
            workers: 4,
        }
    }
}

impl Settings {
    pub fn needs_tuning(&self) -> bool {
        self.lambda == LambdaSetting::Tune || self.expansion == ExpansionSetting::Tune
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::config("k must be at least 1"));
        }
        if self.workers == 0 {
            return Err(PipelineError::config("workers must be at least 1"));
        }
        if let LambdaSetting::Fixed(l) = self.lambda {
            if !l.is_finite() || l < 0.0 {
                return Err(PipelineError::config(format!("lambda must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    /// Candidate grid implied by the settings.
    pub fn grid(&self) -> Grid {
        let lambdas = match self.lambda {
            LambdaSetting::Fixed(l) => vec![l],
            LambdaSetting::Tune => LAMBDA_GRID.to_vec(),
        };
        let expansions = match self.expansion {
            ExpansionSetting::Never => vec![false],
            ExpansionSetting::Always => vec![true],
            ExpansionSetting::Tune => vec![false, true],
        };
        Grid { lambdas, expansions }
    }

    /// Values used for a relation without development data.
    pub fn defaults(&self) -> (f64, bool) {
        let lambda = match self.lambda {
            LambdaSetting::Fixed(l) => l,
            LambdaSetting::Tune => DEFAULT_LAMBDA,
        };
        (lambda, self.expansion == ExpansionSetting::Always)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub expansions: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub templates_path: PathBuf,
    pub dataset_path: PathBuf,
    pub dev_dataset_path: Option<PathBuf>,
    /// Required when rejection is enabled.
    pub embeddings_path: Option<PathBuf>,
    pub backend: BackendConfig,
    pub settings: Settings,
    pub output_dir: PathBuf,
    pub dump_diagnostics: bool,
    pub write_csv: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.settings.validate()?;
        if self.settings.needs_tuning() && self.dev_dataset_path.is_none() {
            return Err(PipelineError::config("tuning requires a development dataset"));
        }
        if self.settings.rejection_enabled && self.embeddings_path.is_none() {
            return Err(PipelineError::config("context rejection requires word embeddings"));
        }
        Ok(())
    }
}
