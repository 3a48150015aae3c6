use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::{BayesModel, Lambda, Objective, SilfParams};
use crate::error::{Error, Result};
use crate::nmf::NmfConfig;
use crate::qtransform::LibrarySpec;
use crate::stein::KernelParams;

/// How Step 2 of the pipeline produces initializations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    Qtransform,
    Random,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qtransform" | "q-transform" => Ok(Self::Qtransform),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown init strategy {other:?}"))),
        }
    }
}

/// Bayesian model settings as they appear in a run config.
///
/// `epsilon: null` requests calibration from randomly initialized solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub epsilon: Option<f64>,
    pub beta: f64,
    pub c: f64,
    pub lambda: Lambda,
    pub objective: Objective,
    pub mask_path: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            beta: 0.1,
            c: 2.0,
            lambda: Lambda::Scalar(1.0),
            objective: Objective::SquaredFrobenius,
            mask_path: None,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, epsilon: f64) -> Result<BayesModel> {
        let mut m = BayesModel::new(
            SilfParams::new(epsilon, self.beta, self.c)?,
            self.lambda.clone(),
        )?;
        m.objective = self.objective;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub r_nmf: usize,
    pub r_svd: usize,
    pub r_t: usize,
    /// Number of particles.
    pub m: usize,
    pub model: ModelConfig,
    pub kernel: KernelParams,
    pub nmf: NmfConfig,
    /// Transform library to load, or to create if it does not exist.
    pub library_path: Option<PathBuf>,
    /// Recipe used when the library has to be (re)generated.
    pub library: LibrarySpec,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub init: InitStrategy,
    pub calibration_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            r_nmf: 0,
            r_svd: 3,
            r_t: 3,
            m: 100,
            model: ModelConfig::default(),
            kernel: KernelParams::default(),
            nmf: NmfConfig::default(),
            library_path: None,
            library: LibrarySpec::default(),
            seed: 0,
            output_dir: None,
            init: InitStrategy::Qtransform,
            calibration_runs: 50,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.r_nmf < 1 {
            return Err(Error::Config("r_nmf must be >= 1".into()));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if self.init == InitStrategy::Qtransform && (self.r_svd < 1 || self.r_t < 1) {
            return Err(Error::Config("r_svd and r_t must be >= 1".into()));
        }
        if self.model.epsilon.is_none() && self.calibration_runs < 1 {
            return Err(Error::Config(
                "calibration_runs must be >= 1 when epsilon is not given".into(),
            ));
        }
        if let Some(eps) = self.model.epsilon {
            SilfParams::new(eps, self.model.beta, self.model.c)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.nmf.validate()?;
        self.kernel
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
