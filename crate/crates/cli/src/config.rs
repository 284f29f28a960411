use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spinboson_ml::datapipe::{GridSpec, DEFAULT_SLICE_LENGTH};
use spinboson_ml::forecast::BenchmarkConfig;
use spinboson_ml::krr::{KernelFamily, KernelSpec, SearchGrid};
use spinboson_ml::nnet::{NetSpec, TrainOpts};
use spinboson_ml::refdyn::HierarchyConfig;
use spinboson_ml::{Error, Result};

/// Everything a run needs. Missing fields take their defaults, so a config
/// file only has to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub hierarchy: HierarchyConfig,
    pub dataset: DatasetOptions,
    pub seeds: Seeds,
    /// Per-model overrides; ids not listed use the defaults.
    pub models: Vec<ModelConfig>,
    pub training: TrainOpts,
    pub search: SearchOptions,
    pub benchmark: BenchmarkConfig,
    /// Worker threads for trajectory generation and grid search.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec::full(),
            hierarchy: HierarchyConfig::default(),
            dataset: DatasetOptions::default(),
            seeds: Seeds::default(),
            models: Vec::new(),
            training: TrainOpts::default(),
            search: SearchOptions::default(),
            benchmark: BenchmarkConfig::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Window plus label, `P = T + 1`.
    pub slice_length: usize,
    pub n_holdout: usize,
    pub subtrain_fraction: f64,
    /// Seeded subset of the training set used to fit KRR models; `null` uses all of it.
    pub krr_train_samples: Option<usize>,
    /// Same for the network sub-training set.
    pub nn_train_samples: Option<usize>,
    pub nn_validation_samples: Option<usize>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            slice_length: DEFAULT_SLICE_LENGTH,
            n_holdout: 100,
            subtrain_fraction: 0.8,
            krr_train_samples: Some(4000),
            nn_train_samples: None,
            nn_validation_samples: None,
        }
    }
}

impl DatasetOptions {
    pub fn window_length(&self) -> usize {
        self.slice_length - 1
    }
}

/// One seed per stochastic stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub holdout: u64,
    pub split: u64,
    pub subsample: u64,
    pub init: u64,
    pub shuffle: u64,
    pub search: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_master(0)
    }
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let s = seed.wrapping_mul(1000);
        Seeds {
            holdout: s,
            split: s + 1,
            subsample: s + 2,
            init: s + 3,
            shuffle: s + 4,
            search: s + 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    /// KRR kernel; falls back to `search/<id>.json` when absent.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub lambda_reg: Option<f64>,
    #[serde(default)]
    pub train_samples: Option<usize>,
    /// `[filters1, kernel1, filters2, kernel2]` for the 1D CNN.
    #[serde(default)]
    pub conv: Option<[usize; 4]>,
}

impl ModelConfig {
    pub fn new(id: &str) -> Self {
        ModelConfig {
            id: id.to_string(),
            kernel: None,
            lambda_reg: None,
            train_samples: None,
            conv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub krr: SearchGrid,
    pub validation_samples: Option<usize>,
    pub pso: PsoOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            krr: SearchGrid {
                max_train: 2000,
                ..SearchGrid::default()
            },
            validation_samples: Some(2000),
            pso: PsoOptions::default(),
        }
    }
}

/// Particle swarm over the two convolution layers of the 1D CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoOptions {
    pub n_particles: usize,
    pub n_generations: usize,
    /// `(lo, hi)` for filters1, kernel1, filters2, kernel2.
    pub bounds: Vec<(f64, f64)>,
    pub stochastic: bool,
    /// Epochs per candidate evaluation.
    pub epochs: usize,
    pub batch_size: usize,
    pub train_samples: Option<usize>,
    pub validation_samples: Option<usize>,
}

impl Default for PsoOptions {
    fn default() -> Self {
        PsoOptions {
            n_particles: 3,
            n_generations: 50,
            bounds: vec![(1.0, 256.0), (2.0, 20.0), (1.0, 256.0), (2.0, 20.0)],
            stochastic: false,
            epochs: 3,
            batch_size: 64,
            train_samples: Some(2000),
            validation_samples: Some(1000),
        }
    }
}

pub fn is_krr(id: &str) -> bool {
    KernelFamily::from_model_id(id).is_some()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn model(&self, id: &str) -> ModelConfig {
        self.models
            .iter()
            .find(|m| m.id == id)
            .cloned()
            .unwrap_or_else(|| ModelConfig::new(id))
    }

    pub fn check_model_id(&self, id: &str) -> Result<()> {
        if is_krr(id) || NetSpec::architecture(id, self.dataset.window_length()).is_ok() {
            Ok(())
        } else {
            Err(Error::invalid("model id", format!("unknown model {id:?}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::InvalidParam { field, reason } => Error::invalid(format!("{name}.{field}"), reason),
            other => other,
        };
        self.grid.validate().map_err(|e| field("grid", e))?;
        self.hierarchy.validate().map_err(|e| field("hierarchy", e))?;
        self.training.validate().map_err(|e| field("training", e))?;
        let d = &self.dataset;
        if d.slice_length < 2 {
            return Err(Error::invalid("dataset.slice_length", "must be >= 2"));
        }
        if d.n_holdout == 0 {
            return Err(Error::invalid("dataset.n_holdout", "must be >= 1"));
        }
        if !(d.subtrain_fraction > 0.0 && d.subtrain_fraction < 1.0) {
            return Err(Error::invalid("dataset.subtrain_fraction", "must lie in (0, 1)"));
        }
        for (name, v) in [
            ("dataset.krr_train_samples", d.krr_train_samples),
            ("dataset.nn_train_samples", d.nn_train_samples),
            ("dataset.nn_validation_samples", d.nn_validation_samples),
            ("search.validation_samples", self.search.validation_samples),
        ] {
            if v == Some(0) {
                return Err(Error::invalid(name, "must be >= 1 or null"));
            }
        }
        for (i, m) in self.models.iter().enumerate() {
            self.check_model_id(&m.id).map_err(|_| {
                Error::invalid(format!("models[{i}].id"), format!("unknown model {:?}", m.id))
            })?;
            if let Some(k) = &m.kernel {
                k.validate().map_err(|e| field(&format!("models[{i}].kernel"), e))?;
            }
            if let Some(l) = m.lambda_reg {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::invalid(format!("models[{i}].lambda_reg"), "must be positive"));
                }
            }
        }
        if self.search.pso.bounds.len() != 4 {
            return Err(Error::invalid("search.pso.bounds", "needs four (lo, hi) pairs"));
        }
        if self.search.pso.epochs == 0 {
            return Err(Error::invalid("search.pso.epochs", "must be >= 1"));
        }
        if self.search.pso.batch_size == 0 {
            return Err(Error::invalid("search.pso.batch_size", "must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads", "must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"dataset": {"n_holdout": 7}, "hierarchy": {"depth": 3}}"#).unwrap();
        assert_eq!(cfg.dataset.n_holdout, 7);
        assert_eq!(cfg.dataset.slice_length, 42);
        assert_eq!(cfg.hierarchy.depth, 3);
        assert_eq!(cfg.hierarchy.dt_save, 0.1);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"datset": {}}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.dataset.subtrain_fraction = 1.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("dataset.subtrain_fraction"), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.models.push(ModelConfig::new("krr-x"));
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("models[0].id"), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.hierarchy.dt_save = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("hierarchy.dt_save"), "{msg}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seeds = Seeds::from_master(1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
