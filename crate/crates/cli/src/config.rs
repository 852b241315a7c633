//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use condexp_core::cen::{CenConfig, DEFAULT_DELTA};
use condexp_core::data::{FeatureSchema, SamplingMode};
use condexp_core::explain::{DenominatorSource, DEFAULT_BACKGROUND_SIZE};
use condexp_core::nn::{Loss, NetworkConfig, OutputActivation, TrainConfig};
use condexp_core::shapley::DEFAULT_BIG_WEIGHT;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<FeatureSchema>,
    pub paths: Paths,
    pub base: BaseSettings,
    pub cen: CenSettings,
    pub analysis: AnalysisSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            model_dir: "models".into(),
            output_dir: "output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSettings {
    pub hidden_sizes: Vec<usize>,
    pub embedding_dim: usize,
    pub output: OutputActivation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Start the output bias at the link-inverse of the mean frequency.
    pub init_output_bias: bool,
}

impl Default for BaseSettings {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        Self {
            hidden_sizes: net.hidden_sizes,
            embedding_dim: net.embedding_dim,
            output: net.output,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            validation_fraction: train.validation_fraction,
            seed: 0,
            init_output_bias: true,
        }
    }
}

impl BaseSettings {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            output: self.output,
            embedding_dim: self.embedding_dim,
            ..NetworkConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            loss: Loss::PoissonDeviance,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenSettings {
    /// Surrogate widths; the base architecture when absent.
    pub hidden_sizes: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub delta: f64,
    pub warm_start: bool,
    pub resample_per_epoch: bool,
    pub seed: u64,
}

impl Default for CenSettings {
    fn default() -> Self {
        let cen = CenConfig::default();
        Self {
            hidden_sizes: None,
            learning_rate: cen.train.learning_rate,
            batch_size: cen.train.batch_size,
            max_epochs: cen.train.max_epochs,
            patience: cen.train.patience,
            validation_fraction: cen.train.validation_fraction,
            delta: DEFAULT_DELTA,
            warm_start: cen.warm_start,
            resample_per_epoch: cen.resample_per_epoch,
            seed: 0,
        }
    }
}

impl CenSettings {
    pub fn config(&self, base: &NetworkConfig) -> CenConfig {
        CenConfig {
            train: TrainConfig {
                loss: Loss::SquaredError,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                max_epochs: self.max_epochs,
                patience: self.patience,
                validation_fraction: self.validation_fraction,
                seed: self.seed,
            },
            network: self.hidden_sizes.as_ref().map(|h| NetworkConfig {
                hidden_sizes: h.clone(),
                extra_level: true,
                ..base.clone()
            }),
            delta: self.delta,
            warm_start: self.warm_start,
            resample_per_epoch: self.resample_per_epoch,
            seed: self.seed,
            ..CenConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValueFn {
    #[default]
    Conditional,
    Interventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub value_fn: ValueFn,
    /// Sampled coalitions for KernelSHAP; exact enumeration when absent.
    pub m: Option<usize>,
    pub n_cases: usize,
    pub seed: u64,
    pub order: Option<Vec<String>>,
    pub big_weight: f64,
    pub sampling: SamplingMode,
    /// Interventional background rows drawn from the learning data; 0 = all.
    pub background_size: usize,
    pub repetitions: usize,
    pub grid_points: usize,
    pub denominator: DenominatorSource,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            value_fn: ValueFn::Conditional,
            m: None,
            n_cases: 1000,
            seed: 0,
            order: None,
            big_weight: DEFAULT_BIG_WEIGHT,
            sampling: SamplingMode::Uniform,
            background_size: DEFAULT_BACKGROUND_SIZE,
            repetitions: 1,
            grid_points: 51,
            denominator: DenominatorSource::Base,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        cfg.paths.train.as_mut().map(resolve);
        cfg.paths.test.as_mut().map(resolve);
        resolve(&mut cfg.paths.model_dir);
        resolve(&mut cfg.paths.output_dir);
        Ok(cfg)
    }

    pub fn schema(&self) -> Result<&FeatureSchema, CliError> {
        self.schema
            .as_ref()
            .ok_or_else(|| CliError::Config("the configuration declares no [schema]".into()))
    }

    pub fn train_path(&self) -> Result<&Path, CliError> {
        self.paths.train.as_deref().ok_or_else(|| {
            CliError::Config("no training data path (paths.train or --train)".into())
        })
    }

    /// Index of a feature named on the command line or in the config.
    pub fn feature_index(&self, name: &str) -> Result<usize, CliError> {
        self.schema()?
            .index_of(name)
            .ok_or_else(|| CliError::Config(format!("unknown feature `{name}`")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_schema_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
[schema]
response = "y"
exposure = "v"
features = [
  { name = "age", kind = "continuous" },
  { name = "brand", kind = "categorical", levels = ["a", "b"] },
]

[paths]
train = "train.csv"

[cen]
max_epochs = 7

[analysis]
order = ["brand", "age"]
"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.schema().unwrap().q(), 2);
        assert_eq!(
            cfg.paths.train.as_deref(),
            Some(dir.path().join("train.csv").as_path())
        );
        assert_eq!(cfg.paths.output_dir, dir.path().join("output"));
        assert_eq!(cfg.cen.max_epochs, 7);
        assert_eq!(cfg.cen.delta, DEFAULT_DELTA);
        assert_eq!(cfg.feature_index("brand").unwrap(), 1);
        assert!(cfg.feature_index("nope").is_err());
        let again: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[base]\nlearnin_rate = 0.1\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(CliError::Config(_))
        ));
    }
}
