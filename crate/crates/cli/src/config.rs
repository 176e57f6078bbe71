use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use treatrank_core::counterfactual::{Aggregation, DEFAULT_K};
use treatrank_core::gbtree::{default_grid, GbtParams};
use treatrank_core::model::{load_dataset, Dataset, SplitSpec, StudyConfig};
use treatrank_core::synth::{generate, GeneratorConfig};
use treatrank_core::validate::SIGNIFICANCE_THRESHOLD;
use treatrank_core::{EnsembleSettings, Error, Result};

fn default_fraction() -> f64 {
    0.25
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_folds() -> usize {
    5
}

fn default_threshold() -> f64 {
    SIGNIFICANCE_THRESHOLD
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_fraction")]
    pub holdout_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            holdout_fraction: default_fraction(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilaritySection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        SimilaritySection {
            k: default_k(),
            aggregation: Aggregation::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    seed: u64,
    study: Option<PathBuf>,
    dataset: Option<PathBuf>,
    generator: Option<PathBuf>,
    #[serde(default)]
    split: SplitSection,
    #[serde(default)]
    similarity: SimilaritySection,
    grid: Option<Vec<GbtParams>>,
    #[serde(default = "default_folds")]
    n_folds: usize,
    #[serde(default = "default_threshold")]
    significance_threshold: f64,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Dataset { path: PathBuf },
    Generator(Box<GeneratorConfig>),
}

/// A run configuration with paths resolved against the config file's
/// directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub study: Arc<StudyConfig>,
    pub source: DataSource,
    pub split: SplitSpec,
    pub settings: EnsembleSettings,
    pub significance_threshold: f64,
    pub out_dir: PathBuf,
    /// First 8 bytes of the SHA-256 of the config file, hex.
    pub hash: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let raw: RawRunConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));

        let source = match (&raw.dataset, &raw.generator) {
            (Some(d), None) => DataSource::Dataset { path: resolve(base, d) },
            (None, Some(g)) => DataSource::Generator(Box::new(GeneratorConfig::load(resolve(base, g))?)),
            _ => {
                return Err(Error::Config(
                    "exactly one of `dataset` and `generator` must be set".into(),
                ))
            }
        };

        let study = match (&raw.study, &source) {
            (Some(s), DataSource::Generator(config)) => {
                let study = StudyConfig::load(resolve(base, s))?;
                if study.hash() != config.study.hash() {
                    return Err(Error::Config("`study` differs from the generator's study".into()));
                }
                study
            }
            (Some(s), _) => StudyConfig::load(resolve(base, s))?,
            (None, DataSource::Generator(config)) => config.study.clone(),
            (None, _) => return Err(Error::Config("`study` is required with `dataset`".into())),
        };

        let grid = raw.grid.unwrap_or_else(default_grid);
        if grid.is_empty() {
            return Err(Error::Config("`grid` must not be empty".into()));
        }
        for p in &grid {
            p.validate()?;
        }
        if raw.n_folds < 2 {
            return Err(Error::Config("`n_folds` must be >= 2".into()));
        }
        if raw.similarity.k < 1 {
            return Err(Error::Config("`similarity.k` must be >= 1".into()));
        }
        if !raw.significance_threshold.is_finite() {
            return Err(Error::Config("`significance_threshold` must be finite".into()));
        }

        let digest = Sha256::digest(&bytes);
        Ok(RunConfig {
            seed: raw.seed,
            study: Arc::new(study),
            source,
            split: SplitSpec::new(raw.split.holdout_fraction, raw.seed)?,
            settings: EnsembleSettings {
                k: raw.similarity.k,
                aggregation: raw.similarity.aggregation,
                grid,
                n_folds: raw.n_folds,
                seed: raw.seed,
            },
            significance_threshold: raw.significance_threshold,
            out_dir: resolve(base, raw.out_dir.as_deref().unwrap_or(Path::new("out"))),
            hash: hex::encode(&digest[..8]),
        })
    }

    /// The cohort: read from the dataset file, or regenerated in memory.
    pub fn load_data(&self) -> Result<Dataset> {
        match &self.source {
            DataSource::Dataset { path } => load_dataset(path, self.study.clone()),
            DataSource::Generator(config) => Ok(generate(config)?.0),
        }
    }

    pub fn generator(&self) -> Result<&GeneratorConfig> {
        match &self.source {
            DataSource::Generator(config) => Ok(config),
            DataSource::Dataset { .. } => Err(Error::Config("`generate` needs a `generator` entry".into())),
        }
    }
}
